import copy

import pytest
import yaml

from nnlif import config as conf
from nnlif.errors import ConfigError
from nnlif.solver1d import ModelParams1D


def doc(kind="run", **sections):
    out = {"experiment": kind}
    out.update(sections)
    return out


@pytest.mark.parametrize("kind", conf.KINDS)
def test_reference_config_round_trip(kind):
    text = conf.reference_config(kind)
    cfg = conf.resolve(yaml.safe_load(text))
    assert cfg["experiment"] == kind
    # everything the run uses is already present in the reference file
    assert cfg == conf.resolve(yaml.safe_load(text)) == yaml.safe_load(text)


@pytest.mark.parametrize("name", conf.shipped_configs())
def test_shipped_manifests_load(name):
    cfg = conf.load_config(conf.shipped_config(name))
    assert cfg["output"]["stem"] == name


def test_every_kind_has_a_shipped_manifest():
    kinds = {conf.load_config(conf.shipped_config(n))["experiment"] for n in conf.shipped_configs()}
    assert kinds == set(conf.KINDS)


def test_defaults_fill_missing_sections():
    cfg = conf.resolve(doc("run", model={"b": 3.0}))
    assert cfg["model"]["b"] == 3.0
    assert cfg["model"]["v_min"] == -4.0
    assert cfg["discretization"]["N"] == 12
    assert cfg["output"]["stem"] == "run"


def test_resolve_does_not_mutate_defaults():
    before = copy.deepcopy(conf.DEFAULTS)
    conf.resolve(doc("run", model={"b": 2.0}, run={"test_spaces": ["MPGM"]}))
    assert conf.DEFAULTS == before


@pytest.mark.parametrize("bad, path", [
    (doc("run", model={"b": "three"}), "model/b"),
    (doc("run", discretization={"dt": -1.0}), "discretization/dt"),
    (doc("run", discretization={"test_space": "Chebyshev"}), "discretization/test_space"),
    (doc("run", model={"colour": 1}), "model"),
    (doc("nonsense"), "experiment"),
    (doc("timing", timing={"repeats": 3}), "timing/repeats"),
    ({"model": {}}, "<root>"),
])
def test_schema_errors_name_the_field(bad, path):
    with pytest.raises(ConfigError) as info:
        conf.resolve(bad)
    assert info.value.path == path


@pytest.mark.parametrize("bad, path", [
    (doc("run", model={"v_min": 1.5}), "model"),
    (doc("run2d", model={"a1": 0.1}), "model"),
    (doc("run2d", model={"w_max": -2.0}), "model"),
    (doc("entropy", entropy={"steady": "closed_form", "target_rate": 0.0}), "entropy/target_rate"),
    (doc("run", initial={"kind": "coefficients"}), "initial/path"),
    (doc("run2d", input={"kind": "periodic", "periods": []}), "input/periods"),
])
def test_physical_invariants_rechecked(bad, path):
    with pytest.raises(ConfigError) as info:
        conf.resolve(bad)
    assert info.value.path == path


def test_yaml_syntax_error_is_config_error(tmp_path):
    p = tmp_path / "broken.yaml"
    p.write_text("experiment: run\nmodel: {b: [\n")
    with pytest.raises(ConfigError):
        conf.load_config(p)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        conf.load_config(tmp_path / "absent.yaml")


def test_unknown_reference_kind():
    with pytest.raises(ConfigError):
        conf.reference_config("bogus")


def test_builders():
    cfg = conf.resolve(doc("run", model={"b": 1.5, "a1": 0.1}))
    p = conf.params_1d(cfg)
    assert isinstance(p, ModelParams1D)
    assert (p.a0, p.a1, p.b) == (1.0, 0.1, 1.5)
    init = conf.initial_1d(cfg)
    assert callable(init)

    cfg2 = conf.resolve(doc("run2d", input={"kind": "periodic", "periods": [0.5]}))
    lp = conf.learning_params(cfg2)
    assert lp.n_w == 120 and lp.eps == 0.1
    assert lp.I.period == 0.5
    assert conf.learning_params(cfg2, eps=0.25, dw=0.05).n_w == 24


def test_coefficient_initial_data(tmp_path):
    path = tmp_path / "c0.txt"
    path.write_text("1.0\n2.0\n3.0\n")
    cfg = conf.resolve(doc("run", initial={"kind": "coefficients", "path": str(path)}))
    assert list(conf.initial_1d(cfg)) == [1.0, 2.0, 3.0]


def test_learning_initial_kind_rejected_for_1d():
    cfg = conf.resolve(doc("run", initial={"kind": "gaussian_bump", "v0": 0.0, "var": 0.5}))
    with pytest.raises(ConfigError):
        conf.initial_1d(cfg)
