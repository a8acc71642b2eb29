"""Finite-difference reference solver for the NNLIF equation with a point source.

The reset condition is rewritten as a source term,

    p_t + (h p)_v - a p_vv = N(t) delta(v - v_r),

on a uniform node grid with homogeneous Dirichlet values at both ends. The
scheme is conservative: the equation is discretized as a difference of
interface fluxes, and the point source re-injects exactly the flux that leaves
through v_f. Drift and diffusion are implicit with coefficients frozen at the
old firing rate; the re-injected flux is implicit too, so for b = 0 the
discrete mass changes only by what leaks through v_min.

Each step solves a tridiagonal system plus one rank-one correction (the
source couples the last interior node to the reset node).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import Domain1D, eval_solution
from .errors import DenominatorVanishing, MismatchedRuns, UnstableStep

UNSTABLE_LIMIT = 1e12
COMPLETED = "completed"
BLOW_UP = "blow_up"


@dataclass(frozen=True)
class FdGrid:
    """Uniform nodes v_min = v_0 < ... < v_M = v_f with v_r on node ``reset_index``."""

    domain: Domain1D
    n_v: int

    def __post_init__(self):
        if self.n_v < 4:
            raise ValueError("need at least 4 cells")
        pos = (self.domain.v_r - self.domain.v_min) / self.dv
        if abs(pos - round(pos)) > 1e-9:
            raise ValueError(f"v_r = {self.domain.v_r} does not fall on a grid node (dv = {self.dv})")

    @classmethod
    def with_spacing(cls, domain: Domain1D, dv):
        n = (domain.v_f - domain.v_min) / dv
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"dv = {dv} does not divide the domain length")
        return cls(domain, int(round(n)))

    @property
    def dv(self):
        return (self.domain.v_f - self.domain.v_min) / self.n_v

    @property
    def nodes(self):
        return self.domain.v_min + self.dv * np.arange(self.n_v + 1)

    @property
    def reset_index(self):
        return int(round((self.domain.v_r - self.domain.v_min) / self.dv))

    def dump(self, path):
        np.savetxt(path, self.nodes, fmt="%.17g")
        return path


@dataclass
class FdRun:
    grid: FdGrid
    params: object
    times: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    final: np.ndarray | None = None
    final_time: float = 0.0
    termination: str = COMPLETED
    blow_up_time: float | None = None
    left_leak: list = field(default_factory=list)

    @property
    def blew_up(self):
        return self.termination == BLOW_UP

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,N,mass\n")
            for t, n, m in zip(self.times, self.rates, self.masses):
                fh.write(f"{t:.17g},{n:.17g},{m:.17g}\n")
        return path


def _outflux_rate(p_last, grid, params):
    """Firing rate from the flux through v_f, solved with N inside a(N) and h(N)."""
    dv = grid.dv
    v_half = grid.domain.v_f - dv / 2
    num = (-v_half * 0.5 + params.a0 / dv) * p_last
    den = 1.0 - (params.b * 0.5 + params.a1 / dv) * p_last
    if not den > 1e-8:
        raise DenominatorVanishing(f"firing-rate denominator {den:.3e} in finite-difference closure")
    return num / den


class _FdStepper:
    def __init__(self, grid, params, dt, drift="central"):
        if drift not in ("central", "upwind"):
            raise ValueError(f"unknown drift discretization {drift!r}")
        self.grid, self.params, self.dt, self.drift = grid, params, dt, drift
        v = grid.nodes
        self.v_half = 0.5 * (v[:-1] + v[1:])  # interfaces i+1/2, i = 0..M-1

    def flux_weights(self, rate):
        """Weights (wl, wr) so that F_{i+1/2} = wl p_i + wr p_{i+1}."""
        a = self.params.diffusion(rate)
        h = -self.v_half + self.params.b * rate
        dv = self.grid.dv
        if self.drift == "central":
            wl, wr = 0.5 * h, 0.5 * h
        else:
            wl, wr = np.maximum(h, 0.0), np.minimum(h, 0.0)
        return wl + a / dv, wr - a / dv

    def advance(self, p, rate):
        """One implicit step; returns the new interior values and the left leak flux."""
        m = self.grid.n_v
        dv, dt = self.grid.dv, self.dt
        r = self.grid.reset_index
        wl, wr = self.flux_weights(rate)
        lam = dt / dv
        # Interior unknowns p_1..p_{M-1}; row i: p_i + lam (F_{i+1/2} - F_{i-1/2}).
        n = m - 1
        main = 1.0 + lam * (wl[1:m] - wr[0:m - 1])
        upper = lam * wr[1:m - 1]       # coefficient of p_{i+1} in row i
        lower = -lam * wl[1:m - 1]      # coefficient of p_{i-1} in row i
        band = np.zeros((3, n))
        band[0, 1:] = upper
        band[1] = main
        band[2, :-1] = lower
        rhs = p[1:m].copy()
        # Outflux F_{M-1/2} = wl[M-1] p_{M-1} (p_M = 0) is re-injected at node r.
        u = np.zeros(n)
        u[r - 1] = -lam * wl[m - 1]
        # Solve (T + u e_last^T) x = rhs by Sherman-Morrison.
        y = scipy.linalg.solve_banded((1, 1), band, rhs, check_finite=False)
        z = scipy.linalg.solve_banded((1, 1), band, u, check_finite=False)
        x = y - z * (y[-1] / (1.0 + z[-1]))
        out = np.zeros(m + 1)
        out[1:m] = x
        leak = -wr[0] * x[0]  # F_{1/2} with p_0 = 0 (outward when negative)
        return out, leak


def fd_run(params, grid: FdGrid, p0, dt, t_max, snapshot_times=(), blow_up_threshold=1e3,
           drift="central", stride=1) -> FdRun:
    """Run the finite-difference scheme from initial density ``p0`` to ``t_max``."""
    if not dt > 0 or not t_max > 0:
        raise ValueError("dt and t_max must be positive")
    v = grid.nodes
    p = np.asarray(p0(v), dtype=float).copy() if callable(p0) else np.asarray(p0, dtype=float).copy()
    p[0] = p[-1] = 0.0
    rec = FdRun(grid, params)
    stepper = _FdStepper(grid, params, dt, drift)
    n_steps = int(round(t_max / dt))
    if abs(n_steps * dt - t_max) > 1e-9 * t_max:
        n_steps = int(math.ceil(t_max / dt))
    wanted = {int(round(t / dt)) for t in snapshot_times}
    rate = _outflux_rate(p[-2], grid, params)

    def log(k, t):
        if k % stride == 0 or k == n_steps:
            rec.times.append(t)
            rec.rates.append(rate)
            rec.masses.append(float(p.sum() * grid.dv))
        if k in wanted:
            rec.snapshots[t] = p.copy()

    log(0, 0.0)
    t = 0.0
    for k in range(1, n_steps + 1):
        t = k * dt
        p, leak = stepper.advance(p, rate)
        rec.left_leak.append(leak)
        try:
            rate = _outflux_rate(p[-2], grid, params)
        except DenominatorVanishing:
            rec.termination, rec.blow_up_time = BLOW_UP, t
            break
        log(k, t)
        if rate > blow_up_threshold:
            rec.termination, rec.blow_up_time = BLOW_UP, t
            break
        if not np.all(np.isfinite(p)) or np.abs(p).max() > UNSTABLE_LIMIT:
            raise UnstableStep(f"density magnitude exceeded {UNSTABLE_LIMIT:g} at t = {t:.6g}")
    rec.final, rec.final_time = p, t
    return rec


def _norm(diff, dv, norm):
    norm = norm.lower()
    if norm == "linf":
        return float(np.abs(diff).max())
    if norm == "l2":
        return float(math.sqrt(np.sum(diff ** 2) * dv))
    if norm == "l1":
        return float(np.sum(np.abs(diff)) * dv)
    raise ValueError(f"unknown norm {norm!r}")


def _fd_values_on(run: FdRun, nodes):
    """FD values at ``nodes``; exact sampling when nodes sit on the run's grid."""
    g = run.grid
    pos = (nodes - g.domain.v_min) / g.dv
    idx = np.rint(pos).astype(int)
    if np.allclose(pos, idx, atol=1e-9):
        return run.final[idx]
    return np.interp(nodes, g.nodes, run.final)


def compare(spectral_run, fd_run_result: FdRun, norm="Linf"):
    """Discrete norm of the difference between a run and a finite-difference run.

    ``spectral_run`` may be a spectral RunRecord or another FdRun. The
    difference is taken on the interior nodes of the coarser grid involved.
    """
    from .solver1d import RunRecord

    fd = fd_run_result
    if spectral_run.params != fd.params:
        raise MismatchedRuns("runs use different model parameters")
    if isinstance(spectral_run, RunRecord):
        state = spectral_run.final
        if abs(state.time - fd.final_time) > 1e-9 * max(1.0, fd.final_time):
            raise MismatchedRuns(f"final times differ: {state.time} vs {fd.final_time}")
        nodes = fd.grid.nodes[1:-1]
        mine = eval_solution(spectral_run.ops.basis, state.coeffs, nodes)
        theirs = fd.final[1:-1]
        dv = fd.grid.dv
    else:
        if abs(spectral_run.final_time - fd.final_time) > 1e-9 * max(1.0, fd.final_time):
            raise MismatchedRuns("final times differ")
        coarse, fine = sorted((spectral_run, fd), key=lambda r: r.grid.n_v)
        nodes = coarse.grid.nodes[1:-1]
        mine, theirs = coarse.final[1:-1], _fd_values_on(fine, nodes)
        dv = coarse.grid.dv
    return _norm(np.asarray(mine) - np.asarray(theirs), dv, norm)
