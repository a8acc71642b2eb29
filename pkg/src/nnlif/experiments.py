"""Experiment runners behind the command line.

Every runner takes a resolved config and an output directory, writes its
CSV files (17 significant digits) and returns a JSON-ready summary.
"""
from __future__ import annotations

import json
import math
import statistics
import time
from pathlib import Path

import numpy as np

from . import config as conf
from .assembly import TestSpaceKind, assemble, linear_evolution_matrix, project_initial
from .basis import SpectralBasis, composite_rule, eval_solution
from .diagnostics import (
    eigen_report,
    numerical_steady_state,
    relative_entropy,
    steady_firing_rates,
    steady_state,
    tag_stability,
)
from .errors import ConfigError
from .fd_oracle import FdGrid, compare, fd_run
from .solver1d import run
from .solver2d import (
    NAMED_INPUTS,
    TransportStepWarning,
    dominant_frequency,
    learning_phase,
    project_field,
    run2d,
    testing_phase,
)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    return path


def observed_orders(errors):
    """log2(e_k / e_{k+1}) for consecutive entries (for sweeps that halve the step)."""
    e = np.asarray(errors, dtype=float)
    return list(np.log2(e[:-1] / e[1:]))


def _stem(cfg):
    return cfg["output"]["stem"]


def _callable_initial(cfg):
    init = conf.initial_1d(cfg)
    if not callable(init):
        raise ConfigError("this experiment needs an analytic initial density", "initial/kind")
    return init


def _coefficients(cfg, basis, kind, ops):
    init = conf.initial_1d(cfg)
    if callable(init):
        return project_initial(basis, kind, init, ops, cfg["discretization"].get("method", "normal"))
    if init.shape != (basis.size,):
        raise ConfigError(f"coefficient file has {init.size} entries, basis needs {basis.size}", "initial/path")
    return init


def _fd_reference(cfg, params, dt_default, t_max):
    ref = cfg["reference"]
    grid = FdGrid.with_spacing(params.domain, ref["dv"])
    return fd_run(params, grid, _callable_initial(cfg), ref["dt"] or dt_default, t_max, drift=ref["drift"])


def _profiles_csv(path, basis, snapshots, points=601):
    v = np.linspace(basis.domain.v_min, basis.domain.v_f, points)
    times = sorted(snapshots)
    rows = zip(v, *[eval_solution(basis, snapshots[t], v) for t in times])
    return write_csv(path, ["v"] + [f"p(t={t:.6g})" for t in times], rows)


def experiment_run(cfg, out, stride=None):
    p = conf.params_1d(cfg)
    d, r = cfg["discretization"], cfg["run"]
    basis = SpectralBasis(p.domain, d["N"])
    summary = {}
    for name in r["test_spaces"] or [d["test_space"]]:
        kind = TestSpaceKind.parse(name)
        ops = assemble(basis, kind)
        c0 = _coefficients(cfg, basis, kind, ops)
        rec = run(c0, ops, p, d["dt"], d["t_max"], blow_up_threshold=r["blow_up_threshold"],
                  stride=stride or r["stride"], snapshot_times=r["snapshot_times"],
                  snapshot_stride=r["snapshot_stride"] or None, method=d["method"])
        tag = f"{_stem(cfg)}_{kind.variant}"
        rec.to_csv(out / f"{tag}.csv")
        if rec.snapshots:
            rec.to_json(out / f"{tag}_snapshots.json")
            _profiles_csv(out / f"{tag}_profiles.csv", basis, rec.snapshots)
        masses = np.asarray(rec.masses)
        summary[kind.variant] = {
            **rec.summary(),
            "final_rate": rec.rates[-1],
            "final_mass": float(masses[-1]),
            "max_mass_defect": float(np.abs(masses - 1.0).max()),
        }
    return summary


def experiment_convergence_dt(cfg, out, stride=None):
    p = conf.params_1d(cfg)
    d = cfg["discretization"]
    ref = _fd_reference(cfg, p, d["dt"], d["t_max"])
    basis = SpectralBasis(p.domain, d["N"])
    kind = TestSpaceKind.parse(d["test_space"])
    ops = assemble(basis, kind)
    c0 = _coefficients(cfg, basis, kind, ops)
    steps = cfg["sweep"]["dt"]
    linf, l2 = [], []
    for dt in steps:
        rec = run(c0, ops, p, dt, d["t_max"], method=d["method"])
        linf.append(compare(rec, ref, "Linf"))
        l2.append(compare(rec, ref, "L2"))
    o_inf, o_2 = observed_orders(linf) + [None], observed_orders(l2) + [None]
    write_csv(out / f"{_stem(cfg)}.csv", ["dt", "err_linf", "order_linf", "err_l2", "order_l2"],
              zip(steps, linf, o_inf, l2, o_2))
    return {"dt": steps, "err_linf": linf, "err_l2": l2, "order_linf": o_inf[:-1], "order_l2": o_2[:-1]}


def experiment_convergence_n(cfg, out, stride=None):
    p = conf.params_1d(cfg)
    d = cfg["discretization"]
    ref = _fd_reference(cfg, p, d["dt"], d["t_max"])
    kind = TestSpaceKind.parse(d["test_space"])
    ns = cfg["sweep"]["N"]
    rows = []
    for n in ns:
        basis = SpectralBasis(p.domain, n)
        ops = assemble(basis, kind)
        rec = run(_coefficients(cfg, basis, kind, ops), ops, p, d["dt"], d["t_max"], method=d["method"])
        rows.append((n, compare(rec, ref, "Linf"), compare(rec, ref, "L2"), compare(rec, ref, "L1")))
    write_csv(out / f"{_stem(cfg)}.csv", ["N", "err_linf", "err_l2", "err_l1"], rows)
    return {"N": ns, "err_linf": [r[1] for r in rows], "err_l2": [r[2] for r in rows],
            "err_l1": [r[3] for r in rows]}


def experiment_eigen_scan(cfg, out, stride=None):
    dom = conf.domain(cfg)
    rows, summary = [], {}
    for name in cfg["sweep"]["test_spaces"]:
        kind = TestSpaceKind.parse(name)
        worst = []
        for n in cfg["sweep"]["N"]:
            rep = eigen_report(linear_evolution_matrix(assemble(SpectralBasis(dom, n), kind)))
            rows.append((kind.variant, n, rep.max_real_part, rep.min_abs, rep.has_zero_mode, rep.norm))
            worst.append(rep.max_real_part)
        summary[kind.variant] = {"N": list(cfg["sweep"]["N"]), "max_real_part": worst}
    write_csv(out / f"{_stem(cfg)}.csv",
              ["test_space", "N", "max_real_part", "min_abs_eigenvalue", "has_zero_mode", "norm"], rows)
    return summary


def experiment_steady_states(cfg, out, stride=None):
    p = conf.params_1d(cfg)
    s = cfg["steady"]
    roots = steady_firing_rates(p, n_max=s["n_max"], probes=s["probes"])
    basis = SpectralBasis(p.domain, cfg["discretization"]["N"])
    states = []
    for n in roots:
        st = steady_state(p, n)
        if s["tag_stability"]:
            st.stability_tag = tag_stability(p, st, basis=basis)
        states.append(st)
    write_csv(out / f"{_stem(cfg)}.csv", ["n_inf", "stability"], [(st.n_inf, st.stability_tag) for st in states])
    v = np.linspace(p.domain.v_min, p.domain.v_f, s["profile_points"])
    write_csv(out / f"{_stem(cfg)}_profiles.csv", ["v"] + [f"p(N={st.n_inf:.6g})" for st in states],
              zip(v, *[st.sample(v) for st in states]))
    return {"roots": roots, "stability": [st.stability_tag for st in states]}


def experiment_entropy(cfg, out, stride=None):
    p = conf.params_1d(cfg)
    d, e = cfg["discretization"], cfg["entropy"]
    basis = SpectralBasis(p.domain, d["N"])
    kind = TestSpaceKind.parse(d["test_space"])
    ops = assemble(basis, kind)
    if e["steady"] == "numerical":
        steady = numerical_steady_state(p, basis, kind, dt=d["dt"], t_long=e["t_long"])
    else:
        steady = steady_state(p, e["target_rate"])
    rec = run(_coefficients(cfg, basis, kind, ops), ops, p, d["dt"], d["t_max"],
              stride=stride or 1, snapshot_stride=e["snapshot_stride"], method=d["method"])
    series = relative_entropy(rec.snapshots, basis, steady)
    series.to_csv(out / f"{_stem(cfg)}.csv")
    rec.to_csv(out / f"{_stem(cfg)}_run.csv")
    inc = series.increments()[e["skip_steps"]:]
    worst = float(inc.max()) if inc.size else 0.0
    return {"n_inf": steady.n_inf, "steady": e["steady"], "increments_checked": int(inc.size), "max_increment_after_skip": worst,
            "non_increasing": bool(worst <= e["tolerance"]), "termination": rec.termination,
            "S_first": float(series.values[0]), "S_last": float(series.values[-1])}


def _median_time(fn, repeats):
    fn()  # warm-up, not timed
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples), result


def timing_harness(cfg):
    """Error and median wall time (warm-up excluded) for spectral N and FD h sweeps.

    Both solvers use the model, initial data, dt and t_max of the config and
    are measured against one shared finite-difference reference.
    """
    p = conf.params_1d(cfg)
    d = cfg["discretization"]
    repeats = cfg["timing"]["repeats"]
    init = _callable_initial(cfg)
    ref = _fd_reference(cfg, p, d["dt"], d["t_max"])
    kind = TestSpaceKind.parse(d["test_space"])
    rows = []
    for n in cfg["sweep"]["N"]:
        def spectral(n=n):
            basis = SpectralBasis(p.domain, n)
            ops = assemble(basis, kind)
            return run(project_initial(basis, kind, init, ops), ops, p, d["dt"], d["t_max"], method=d["method"])

        sec, rec = _median_time(spectral, repeats)
        rows.append(("spectral", n, compare(rec, ref, "Linf"), compare(rec, ref, "L1"), sec))
    for h in cfg["sweep"]["h"]:
        grid = FdGrid.with_spacing(p.domain, h)

        def finite_difference(grid=grid):
            return fd_run(p, grid, init, d["dt"], d["t_max"], drift=cfg["reference"]["drift"])

        sec, res = _median_time(finite_difference, repeats)
        rows.append(("fd", h, compare(res, ref, "Linf"), compare(res, ref, "L1"), sec))
    return rows


def experiment_timing(cfg, out, stride=None):
    rows = timing_harness(cfg)
    write_csv(out / f"{_stem(cfg)}.csv", ["solver", "resolution", "err_linf", "err_l1", "median_seconds"], rows)
    return {"rows": [dict(zip(("solver", "resolution", "err_linf", "err_l1", "median_seconds"), r)) for r in rows]}


def _learning_setup(cfg, eps=None, period=None, dw=None, n=None):
    params = conf.learning_params(cfg, eps=eps, dw=dw, period=period)
    d = cfg["discretization"]
    ops = assemble(SpectralBasis(params.domain, n or d["N"]), TestSpaceKind.parse(d["test_space"]))
    field = project_field(ops, params, None, separable=conf.initial_2d(cfg))
    return params, ops, field


def _periods(cfg):
    return cfg["input"]["periods"] if cfg["input"]["kind"] == "periodic" else [None]


def experiment_run2d(cfg, out, stride=None):
    r = cfg["run"]
    dt = cfg["discretization"]["dt"]
    summary = {}
    for period in _periods(cfg):
        params, ops, field = _learning_setup(cfg, period=period)
        rec = run2d(field, dt, r["t_max"], stride=stride or r["stride"], snapshot_times=r["snapshot_times"],
                    subcycle=r["subcycle"])
        tag = _stem(cfg) if period is None else f"{_stem(cfg)}_D{period:g}"
        rec.to_csv(out / f"{tag}_nbar.csv")
        if rec.h_snapshots:
            rec.snapshots_to_csv(out / f"{tag}_H.csv")
        f = rec.final
        write_csv(out / f"{tag}_signal.csv", ["w", "N", "H"],
                  zip(params.w_nodes, f.subnetwork_rates(), f.weight_marginal()))
        m = np.asarray(rec.masses)
        item = {"termination": rec.termination, "final_time": f.time, "final_total_rate": f.total_rate(),
                "max_relative_mass_drift": float(np.abs(m / m[0] - 1.0).max()),
                "transport_residual": rec.transport_residual}
        lo, hi = r["frequency_window"]
        if period is not None and hi <= r["t_max"] + 1e-12 and (stride or r["stride"]) == 1:
            freq, width = dominant_frequency(rec.times, rec.total_rates, lo, hi)
            item.update({"dominant_frequency": freq, "frequency_bin": width, "input_frequency": 1.0 / period})
        summary["constant" if period is None else f"D={period:g}"] = item
    return summary


def experiment_convergence_2d(cfg, out, stride=None):
    sw, ref_cfg = cfg["sweep"], cfg["reference"]
    t_max = sw["t_max"]
    dom = conf.domain(cfg)
    x1, w1 = composite_rule(dom.v_min, dom.v_r, order=32, panels=4)
    x2, w2 = composite_rule(dom.v_r, dom.v_f, order=32, panels=2)
    x, wq = np.concatenate([x1, x2]), np.concatenate([w1, w2])

    def final(delta, n=None):
        _, _, field = _learning_setup(cfg, dw=delta, n=n)
        return run2d(field, delta, t_max).final

    def errors(coarse, fine):
        ratio = int(round(coarse.params.dw / fine.params.dw))
        diff = coarse.density(x) - fine.density(x)[::ratio]
        dw = coarse.params.dw
        return float(dw * np.sum(np.abs(diff) @ wq)), float(math.sqrt(dw * np.sum(diff ** 2 @ wq)))

    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TransportStepWarning)
        if sw["N"]:
            delta = sw["delta"][0]
            fine = final(delta, ref_cfg.get("N", max(sw["N"]) + 8))
            rows = [(n, *errors(final(delta, n), fine)) for n in sw["N"]]
            write_csv(out / f"{_stem(cfg)}.csv", ["N", "err_l1", "err_l2"], rows)
            return {"N": sw["N"], "err_l1": [r[1] for r in rows], "err_l2": [r[2] for r in rows]}
        deltas = sw["delta"]
        fine = final(min(deltas) / ref_cfg["refine"])
        errs = [errors(final(dl), fine) for dl in deltas]
    l1, l2 = [e[0] for e in errs], [e[1] for e in errs]
    o1, o2 = observed_orders(l1) + [None], observed_orders(l2) + [None]
    write_csv(out / f"{_stem(cfg)}.csv", ["dt", "dw", "err_l1", "order_l1", "err_l2", "order_l2"],
              zip(deltas, deltas, l1, o1, l2, o2))
    return {"delta": deltas, "err_l1": l1, "err_l2": l2, "order_l1": o1[:-1], "order_l2": o2[:-1],
            "reference_delta": min(deltas) / ref_cfg["refine"]}


def _e_table(cfg, eps, out, write_files):
    """E for every (period, testing input) at one eps; returns rows (eps, D, J, E, Nbar_out, Nbar_ref)."""
    proto = cfg["protocol"]
    dt = cfg["discretization"]["dt"]
    tol = proto["equilibrium_rtol"]
    _, _, field = _learning_setup(cfg, eps=eps)
    names = proto["testing_inputs"]
    reference = {}
    if proto["compute_reference"]:
        for name in names:
            fn = NAMED_INPUTS[name]
            learned = learning_phase(field, lambda w, t, fn=fn: fn(w), proto["learning_duration"], dt, tol)
            reference[name] = testing_phase(learned.field, fn, proto["testing_duration"], dt, tol).total_rate
    rows = []
    for period in _periods(cfg):
        params = conf.learning_params(cfg, eps=eps, period=period)
        learned = learning_phase(field, params.I, proto["learning_duration"], dt, tol)
        tag = f"{_stem(cfg)}_eps{eps:g}_D{period:g}" if period is not None else f"{_stem(cfg)}_eps{eps:g}"
        if write_files:
            learned.record.to_csv(out / f"{tag}_learning_nbar.csv")
        for name in names:
            tested = testing_phase(learned.field, NAMED_INPUTS[name], proto["testing_duration"], dt, tol)
            ref = reference.get(name)
            e = None if ref is None else abs(tested.total_rate - ref)
            rows.append((eps, period, name, e, tested.total_rate, ref, learned.total_rate))
            if write_files:
                write_csv(out / f"{tag}_{name}_signals.csv", ["w", "prediction", "output", "H_learned"],
                          zip(params.w_nodes, learned.signal, tested.signal, learned.field.weight_marginal()))
    return rows


_E_HEADER = ["eps", "D", "J", "E", "nbar_output", "nbar_reference", "nbar_learning_end"]


def experiment_two_phase(cfg, out, stride=None):
    rows = _e_table(cfg, cfg["model"]["eps"], out, write_files=True)
    write_csv(out / f"{_stem(cfg)}.csv", _E_HEADER, rows)
    return {"rows": [dict(zip(_E_HEADER, r)) for r in rows]}


def experiment_phase_diagram(cfg, out, stride=None):
    rows = []
    for eps in cfg["sweep"]["eps"]:
        rows += _e_table(cfg, eps, out, write_files=False)
    write_csv(out / f"{_stem(cfg)}.csv", _E_HEADER, rows)
    return {"rows": [dict(zip(_E_HEADER, r)) for r in rows]}


RUNNERS = {
    "run": experiment_run,
    "convergence_dt": experiment_convergence_dt,
    "convergence_N": experiment_convergence_n,
    "eigen_scan": experiment_eigen_scan,
    "steady_states": experiment_steady_states,
    "entropy": experiment_entropy,
    "timing": experiment_timing,
    "run2d": experiment_run2d,
    "convergence_2d": experiment_convergence_2d,
    "two_phase": experiment_two_phase,
    "phase_diagram": experiment_phase_diagram,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def run_experiment(cfg, out_dir, stride=None):
    """Run a resolved config; writes its files plus ``<stem>_summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = _jsonable(RUNNERS[cfg["experiment"]](cfg, out, stride))
    doc = {"experiment": cfg["experiment"], "stem": _stem(cfg), "results": summary}
    (out / f"{_stem(cfg)}_summary.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc
