"""Experiment configuration: defaults, schema validation and object builders.

A config is a YAML mapping with an ``experiment`` kind and sections for the
model, the discretization, the initial data and experiment-specific sweeps.
User files are merged over the defaults of their kind, so every value that
a run uses is visible in ``reference_config(kind)``.
"""
from __future__ import annotations

import copy
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .assembly import TestSpaceKind
from .basis import Domain1D
from .errors import ConfigError
from .solver1d import ModelParams1D, gaussian_initial
from .solver2d import (
    NAMED_INPUTS,
    LearningParams,
    constant_input,
    gaussian_voltage_profile,
    periodic_input,
    sin2_voltage_profile,
    sin2_weight_profile,
    zero_input,
)

CONFIG_DIR = Path(__file__).parent / "configs"

KINDS_1D = ("run", "convergence_dt", "convergence_N", "eigen_scan", "steady_states", "entropy", "timing")
KINDS_2D = ("run2d", "convergence_2d", "two_phase", "phase_diagram")
KINDS = KINDS_1D + KINDS_2D

VERBS = {
    "run": ("run", "run2d"),
    "convergence": ("convergence_dt", "convergence_N", "convergence_2d"),
    "eigen": ("eigen_scan",),
    "steady": ("steady_states",),
    "entropy": ("entropy",),
    "timing": ("timing",),
    "two-phase": ("two_phase",),
    "phase-diagram": ("phase_diagram",),
}

_MODEL_1D = {"v_min": -4.0, "v_r": 1.0, "v_f": 2.0, "a0": 1.0, "a1": 0.0, "b": 0.0}
_MODEL_2D = {"v_min": -1.0, "v_r": 1.0, "v_f": 2.0, "a": 1.0, "a1": 0.0, "eps": 0.1,
             "w_min": -1.1, "w_max": 0.1, "dw": 0.01, "sigma": "identity", "K": "inhibitory"}
_DISC_1D = {"N": 12, "dt": 1e-3, "t_max": 1.0, "test_space": "LGM", "method": "normal"}
_DISC_2D = {"N": 12, "dt": 2.5e-4, "test_space": "MPGM"}
_GAUSS = {"kind": "gaussian", "v0": -1.0, "var": 0.5}

DEFAULTS = {
    "run": {
        "model": _MODEL_1D, "discretization": _DISC_1D, "initial": _GAUSS,
        "run": {"test_spaces": [], "blow_up_threshold": 1000.0, "stride": 1,
                "snapshot_times": [], "snapshot_stride": 0},
    },
    "convergence_dt": {
        "model": _MODEL_1D, "discretization": _DISC_1D, "initial": _GAUSS,
        "sweep": {"dt": [0.04, 0.02, 0.01, 0.005]},
        "reference": {"dv": 1.0 / 512, "dt": 1e-5, "drift": "central"},
    },
    "convergence_N": {
        "model": _MODEL_1D, "discretization": _DISC_1D, "initial": _GAUSS,
        "sweep": {"N": [5, 10, 15, 20]},
        "reference": {"dv": 1.0 / 512, "dt": 0.0, "drift": "central"},
    },
    "eigen_scan": {
        "model": _MODEL_1D,
        "sweep": {"N": list(range(4, 21)), "test_spaces": ["LGM", "MPGM", "shifted"]},
    },
    "steady_states": {
        "model": _MODEL_1D, "discretization": _DISC_1D,
        "steady": {"n_max": 20.0, "probes": 2000, "tag_stability": True, "profile_points": 601},
    },
    "entropy": {
        "model": _MODEL_1D, "discretization": _DISC_1D, "initial": _GAUSS,
        "entropy": {"steady": "numerical", "target_rate": 0.0, "t_long": 20.0,
                    "snapshot_stride": 1, "skip_steps": 10, "tolerance": 1e-8},
    },
    "timing": {
        "model": _MODEL_1D, "discretization": _DISC_1D, "initial": _GAUSS,
        "sweep": {"N": [5, 10, 15, 20], "h": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125]},
        "reference": {"dv": 1.0 / 512, "dt": 0.0, "drift": "central"},
        "timing": {"repeats": 5},
    },
    "run2d": {
        "model": _MODEL_2D, "discretization": _DISC_2D, "initial": {"kind": "sin2bump"},
        "input": {"kind": "periodic", "periods": [1.0], "profile": "I1", "first": "I1", "second": "I2"},
        "run": {"t_max": 4.0, "stride": 1, "snapshot_times": [], "frequency_window": [2.0, 4.0],
                "subcycle": False},
    },
    "convergence_2d": {
        "model": {**_MODEL_2D, "v_min": -4.0, "eps": 0.5},
        "discretization": {**_DISC_2D, "N": 16, "test_space": "LGM"},
        "initial": {"kind": "gaussian_bump", "v0": -1.0, "var": 0.5},
        "input": {"kind": "zero"},
        "sweep": {"delta": [0.02, 0.01, 0.005, 0.0025], "N": [], "t_max": 0.1},
        "reference": {"refine": 16},
    },
    "two_phase": {
        "model": _MODEL_2D, "discretization": _DISC_2D, "initial": {"kind": "sin2bump"},
        "input": {"kind": "periodic", "periods": [4.0], "profile": "I1", "first": "I1", "second": "I2"},
        "protocol": {"learning_duration": 4.0, "testing_inputs": ["I1", "I2", "mean"],
                     "testing_duration": 4.0, "equilibrium_rtol": 1e-5, "compute_reference": True},
    },
    "phase_diagram": {
        "model": _MODEL_2D, "discretization": _DISC_2D, "initial": {"kind": "sin2bump"},
        "input": {"kind": "periodic", "periods": [2.0 ** k for k in range(2, -8, -1)],
                  "profile": "I1", "first": "I1", "second": "I2"},
        "protocol": {"learning_duration": 4.0, "testing_inputs": ["I1", "mean"],
                     "testing_duration": 4.0, "equilibrium_rtol": 1e-5, "compute_reference": True},
        "sweep": {"eps": [1.0, 0.5, 0.25, 0.125]},
    },
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NUMS = {"type": "array", "items": _NUM}
_POS_LIST = {"type": "array", "items": _POS}
_INTS = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_SPACE = {"type": "string", "enum": ["LGM", "MPGM", "shifted"]}
_INPUT_NAME = {"type": "string", "enum": sorted(NAMED_INPUTS)}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "experiment": {"type": "string", "enum": list(KINDS)},
    "description": {"type": "string"},
    "output": _obj({"stem": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}}),
    "model": _obj({
        "v_min": _NUM, "v_r": _NUM, "v_f": _NUM, "a0": _POS, "a1": {"type": "number", "minimum": 0},
        "b": _NUM, "a": _POS, "eps": _POS, "w_min": _NUM, "w_max": _NUM, "dw": _POS,
        "sigma": {"type": "string", "enum": ["identity", "zero"]},
        "K": {"type": "string", "enum": ["inhibitory", "zero"]},
    }),
    "discretization": _obj({
        "N": {"type": "integer", "minimum": 0}, "dt": _POS, "t_max": _POS, "test_space": _SPACE,
        "method": {"type": "string", "enum": ["normal", "qr"]},
    }),
    "initial": _obj({
        "kind": {"type": "string", "enum": ["gaussian", "sin2bump", "gaussian_bump", "coefficients"]},
        "v0": _NUM, "var": _POS, "path": {"type": "string"},
    }),
    "input": _obj({
        "kind": {"type": "string", "enum": ["zero", "constant", "periodic"]},
        "periods": _POS_LIST, "profile": _INPUT_NAME, "first": _INPUT_NAME, "second": _INPUT_NAME,
    }),
    "run": _obj({
        "test_spaces": {"type": "array", "items": _SPACE}, "blow_up_threshold": _POS,
        "stride": {"type": "integer", "minimum": 1}, "snapshot_times": _NUMS,
        "snapshot_stride": {"type": "integer", "minimum": 0}, "t_max": _POS,
        "frequency_window": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "subcycle": {"type": "boolean"},
    }),
    "sweep": _obj({
        "dt": _POS_LIST, "N": _INTS, "h": _POS_LIST, "delta": _POS_LIST, "t_max": _POS,
        "test_spaces": {"type": "array", "items": _SPACE}, "eps": _POS_LIST,
    }),
    "reference": _obj({
        "dv": _POS, "dt": {"type": "number", "minimum": 0},
        "drift": {"type": "string", "enum": ["central", "upwind"]},
        "refine": {"type": "integer", "minimum": 2}, "N": {"type": "integer", "minimum": 0},
    }),
    "steady": _obj({
        "n_max": _POS, "probes": {"type": "integer", "minimum": 10}, "tag_stability": {"type": "boolean"},
        "profile_points": {"type": "integer", "minimum": 2},
    }),
    "entropy": _obj({
        "steady": {"type": "string", "enum": ["numerical", "closed_form"]}, "target_rate": _NUM,
        "t_long": _POS, "snapshot_stride": {"type": "integer", "minimum": 1},
        "skip_steps": {"type": "integer", "minimum": 0}, "tolerance": {"type": "number", "minimum": 0},
    }),
    "timing": _obj({"repeats": {"type": "integer", "minimum": 5}}),
    "protocol": _obj({
        "learning_duration": _POS, "testing_inputs": {"type": "array", "items": _INPUT_NAME, "minItems": 1},
        "testing_duration": _POS, "equilibrium_rtol": {"type": ["number", "null"], "minimum": 0},
        "compute_reference": {"type": "boolean"},
    }),
}, required=["experiment"])


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _path(err):
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc):
    """Schema-check a raw document; raises ConfigError naming the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping", "<root>")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError(errors[0].message, _path(errors[0]))


def resolve(doc):
    """Validate ``doc``, fill defaults for its kind and re-check the physics."""
    validate(doc)
    kind = doc["experiment"]
    cfg = _merge(DEFAULTS[kind], doc)
    cfg.setdefault("output", {}).setdefault("stem", kind)
    validate(cfg)
    check(cfg)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", "<file>") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}", "<file>") from None
    return resolve(doc)


def shipped_configs():
    """Names of the experiment manifests installed with the package."""
    return sorted(p.stem for p in CONFIG_DIR.glob("*.yaml"))


def shipped_config(name):
    """Path of an installed manifest, by name without the .yaml suffix."""
    path = CONFIG_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"no shipped config named {name!r}", "<file>")
    return path


def reference_config(kind):
    """The full default config of an experiment kind, as YAML text."""
    if kind not in DEFAULTS:
        raise ConfigError(f"unknown experiment kind {kind!r}", "experiment")
    doc = {"experiment": kind, "output": {"stem": kind}, **copy.deepcopy(DEFAULTS[kind])}
    return yaml.safe_dump(doc, sort_keys=False)


def _guard(path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


def check(cfg):
    """Re-run the model types' own invariants on a merged config."""
    kind = cfg["experiment"]
    if kind in ("run2d", "two_phase", "phase_diagram") and cfg["input"]["kind"] == "periodic" \
            and not cfg["input"]["periods"]:
        raise ConfigError("periodic input needs at least one period", "input/periods")
    if kind in KINDS_2D:
        learning_params(cfg)
    else:
        params_1d(cfg)
    disc = cfg.get("discretization", {})
    if "test_space" in disc:
        _guard("discretization/test_space", TestSpaceKind.parse, disc["test_space"])
    if kind == "entropy" and cfg["entropy"]["steady"] == "closed_form" and not cfg["entropy"]["target_rate"] > 0:
        raise ConfigError("closed_form steady state needs a positive target_rate", "entropy/target_rate")
    if "initial" in cfg and cfg["initial"]["kind"] == "coefficients" and "path" not in cfg["initial"]:
        raise ConfigError("coefficient initial data needs a path", "initial/path")


def domain(cfg):
    m = cfg["model"]
    return _guard("model", Domain1D, float(m["v_min"]), float(m["v_r"]), float(m["v_f"]))


def params_1d(cfg):
    m = cfg["model"]
    return _guard("model", ModelParams1D, float(m["a0"]), float(m["a1"]), float(m["b"]), domain(cfg))


def _sigma(name):
    return {"identity": lambda n: n, "zero": lambda n: 0.0}[name]


def _strength(name):
    return {"inhibitory": lambda w: np.full(np.shape(w), -1.0),
            "zero": lambda w: np.zeros(np.shape(w))}[name]


def input_function(cfg, period=None):
    entry = cfg["input"]
    if entry["kind"] == "zero":
        return zero_input
    if entry["kind"] == "constant":
        return constant_input(NAMED_INPUTS[entry["profile"]])
    return periodic_input(period if period is not None else entry["periods"][0],
                          NAMED_INPUTS[entry["first"]], NAMED_INPUTS[entry["second"]])


def learning_params(cfg, eps=None, dw=None, period=None):
    m = cfg["model"]
    return _guard("model", LearningParams.with_spacing, dw or float(m["dw"]), float(m["w_min"]), float(m["w_max"]),
                  eps=float(eps if eps is not None else m["eps"]), a=float(m["a"]), domain=domain(cfg),
                  sigma=_sigma(m["sigma"]), K=_strength(m["K"]), I=input_function(cfg, period),
                  a1=float(m["a1"]))


def initial_1d(cfg):
    """Callable initial density, or a coefficient vector read from a file."""
    entry = cfg["initial"]
    if entry["kind"] == "gaussian":
        return gaussian_initial(float(entry["v0"]), float(entry["var"]), domain(cfg))
    if entry["kind"] == "sin2bump":
        return sin2_voltage_profile
    if entry["kind"] == "coefficients":
        return np.loadtxt(entry["path"], ndmin=1)
    raise ConfigError(f"initial kind {entry['kind']!r} is for the learning model", "initial/kind")


def initial_2d(cfg):
    """(voltage profile, weight profile) of a separable initial density."""
    entry = cfg["initial"]
    if entry["kind"] == "sin2bump":
        return sin2_voltage_profile, sin2_weight_profile
    if entry["kind"] == "gaussian_bump":
        return gaussian_voltage_profile(float(entry["v0"]), float(entry["var"])), sin2_weight_profile
    raise ConfigError(f"initial kind {entry['kind']!r} is not available for the learning model", "initial/kind")
