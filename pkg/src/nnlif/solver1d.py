"""Semi-implicit time stepping for the one-dimensional NNLIF density.

The density obeys

    p_t + (h p)_v - a(N) p_vv = 0,    h = -v + b N,    a(N) = a0 + a1 N,

with the firing rate N = -a(N) p_v(v_f). Because the trial space stores
lambda3 = p_v(v_f) as its last coefficient, N follows in closed form as
N = -a0 lambda3 / (1 + a1 lambda3). Each step freezes N at the old level and
solves one linear system in the coefficients.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .assembly import OperatorSet
from .basis import Domain1D, boundary_lambdas
from .errors import DenominatorVanishing, SingularStepMatrix

EPS_DEN = 1e-8
DEFAULT_BLOW_UP = 1e3
REFINE_STEPS = 2  # iterative refinement rounds for the normal equations

COMPLETED = "completed"
BLOW_UP = "blow_up"


@dataclass(frozen=True)
class ModelParams1D:
    a0: float
    a1: float
    b: float
    domain: Domain1D

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError(f"a0 must be positive, got {self.a0}")
        if not self.a1 >= 0:
            raise ValueError(f"a1 must be non-negative, got {self.a1}")
        if not math.isfinite(self.b):
            raise ValueError("b must be finite")

    def diffusion(self, rate):
        return self.a0 + self.a1 * rate


def firing_rate(lambda3, params: ModelParams1D, eps_den=EPS_DEN):
    """Firing rate N = -a0 lambda3 / (1 + a1 lambda3).

    Raises DenominatorVanishing when ``1 + a1 lambda3 <= eps_den``, which for
    a1 > 0 is the firing-rate divergence itself.
    """
    den = 1.0 + params.a1 * lambda3
    if not den > eps_den:
        raise DenominatorVanishing(f"1 + a1*lambda3 = {den:.3e} <= {eps_den:.0e}")
    return -params.a0 * lambda3 / den


@dataclass(frozen=True)
class SolverState1D:
    coeffs: np.ndarray
    time: float
    firing_rate: float
    mass: float
    lambdas: tuple

    @property
    def lambda3(self):
        return self.lambdas[2]

    @classmethod
    def from_coeffs(cls, coeffs, ops: OperatorSet, params: ModelParams1D, time=0.0):
        coeffs = np.array(coeffs, dtype=float)
        lams = tuple(float(x) for x in boundary_lambdas(ops.basis, coeffs))
        rate = firing_rate(lams[2], params)
        return cls(coeffs, float(time), float(rate), float(ops.mass(coeffs)), lams)


def step_matrix(ops: OperatorSet, params: ModelParams1D, rate, dt, drift_offset=0.0):
    """System matrix S/dt - A + (b N + c) B - a(N) C for frozen rate N.

    ``drift_offset`` adds a constant c to the drift -v + bN; the learning
    model uses it for its input and synaptic terms.
    """
    shift = params.b * rate + drift_offset
    return ops.s / dt - ops.a + shift * ops.b - params.diffusion(rate) * ops.c


class _StepSolver:
    """Factor-and-reuse solver for step systems (refactors when N changes)."""

    def __init__(self, ops, params, dt, method="normal"):
        self.ops, self.params, self.dt, self.method = ops, params, dt, method
        self._key = None
        self._factor = None
        self._matrix = None

    def _prepare(self, rate, drift_offset):
        key = (rate, drift_offset)
        if key == self._key:
            return
        with np.errstate(invalid="ignore", over="ignore"):
            m = step_matrix(self.ops, self.params, rate, self.dt, drift_offset)
        if not np.all(np.isfinite(m)):
            raise SingularStepMatrix("step matrix has non-finite entries")
        self._matrix = m
        square = m.T @ m if self.ops.least_squares and self.method == "normal" else m
        if self.ops.least_squares and self.method == "qr":
            self._factor = None
        else:
            lu, piv = scipy.linalg.lu_factor(square, check_finite=False)
            if np.any(np.diag(lu) == 0.0):
                raise SingularStepMatrix("step matrix is singular")
            self._factor = (lu, piv)
        self._key = key

    def solve(self, coeffs, rate, drift_offset=0.0):
        self._prepare(rate, drift_offset)
        rhs = self.ops.s @ coeffs / self.dt
        if self._factor is None:
            return np.linalg.lstsq(self._matrix, rhs, rcond=None)[0]
        if not self.ops.least_squares:
            return scipy.linalg.lu_solve(self._factor, rhs, check_finite=False)
        m = self._matrix
        x = scipy.linalg.lu_solve(self._factor, m.T @ rhs, check_finite=False)
        for _ in range(REFINE_STEPS):
            x = x + scipy.linalg.lu_solve(self._factor, m.T @ (rhs - m @ x), check_finite=False)
        return x


def step(state: SolverState1D, ops: OperatorSet, params: ModelParams1D, dt, method="normal",
         drift_offset=0.0) -> SolverState1D:
    """Advance one semi-implicit step of length ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    new = _StepSolver(ops, params, dt, method).solve(state.coeffs, state.firing_rate, drift_offset)
    return SolverState1D.from_coeffs(new, ops, params, state.time + dt)


@dataclass
class RunRecord:
    """Telemetry of one run: a row per recorded step plus optional snapshots."""

    times: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    termination: str = COMPLETED
    blow_up_time: float | None = None
    reason: str = ""
    final: SolverState1D | None = None
    params: ModelParams1D | None = None
    ops: OperatorSet | None = None

    def record(self, state: SolverState1D):
        self.times.append(state.time)
        self.rates.append(state.firing_rate)
        self.masses.append(state.mass)
        self.lambdas.append(state.lambdas)

    @property
    def blew_up(self):
        return self.termination == BLOW_UP

    def arrays(self):
        return (np.asarray(self.times), np.asarray(self.rates),
                np.asarray(self.masses), np.asarray(self.lambdas).reshape(-1, 3))

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "N", "mass", "lambda1", "lambda2", "lambda3"])
            for t, n, m, lam in zip(self.times, self.rates, self.masses, self.lambdas):
                out.writerow([f"{x:.17g}" for x in (t, n, m, *lam)])
        return path

    def summary(self):
        return {
            "termination": self.termination,
            "blow_up_time": self.blow_up_time,
            "reason": self.reason,
            "steps_recorded": len(self.times),
            "final_time": self.times[-1] if self.times else None,
        }

    def to_json(self, path):
        doc = self.summary()
        doc["snapshots"] = [{"t": t, "coeffs": [float(c) for c in v]}
                            for t, v in sorted(self.snapshots.items())]
        path = Path(path)
        path.write_text(json.dumps(doc, indent=1))
        return path


def _step_count(t_max, dt):
    n = t_max / dt
    return int(round(n)) if abs(n - round(n)) < 1e-9 * max(1.0, n) else int(math.ceil(n))


def run(initial, ops: OperatorSet, params: ModelParams1D, dt, t_max,
        blow_up_threshold=DEFAULT_BLOW_UP, stride=1, snapshot_times=(), snapshot_stride=None,
        method="normal", drift_offset=0.0) -> RunRecord:
    """Step from ``initial`` (coefficients) to ``t_max`` or until blow-up.

    Blow-up means the firing rate exceeds ``blow_up_threshold``, the
    firing-rate denominator vanishes, or the coefficients stop being finite.
    Each is recorded on the returned record rather than raised.

    ``stride`` thins the telemetry rows; ``snapshot_times`` keeps full
    coefficient vectors at the steps nearest the requested times and
    ``snapshot_stride`` keeps one every so many steps.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    record = RunRecord(params=params, ops=ops)
    n_steps = _step_count(t_max, dt)
    wanted = {int(round(t / dt)): t for t in snapshot_times}

    def keep(k, state):
        if k in wanted or (snapshot_stride and k % snapshot_stride == 0):
            record.snapshots[state.time] = state.coeffs.copy()

    try:
        state = SolverState1D.from_coeffs(initial, ops, params, 0.0)
    except DenominatorVanishing as exc:
        record.termination, record.blow_up_time, record.reason = BLOW_UP, 0.0, str(exc)
        return record
    record.record(state)
    keep(0, state)
    solver = _StepSolver(ops, params, dt, method)
    for k in range(1, n_steps + 1):
        t = min(k * dt, t_max) if k == n_steps else k * dt
        coeffs = solver.solve(state.coeffs, state.firing_rate, drift_offset)
        if not np.all(np.isfinite(coeffs)):
            record.termination, record.blow_up_time, record.reason = BLOW_UP, t, "non-finite coefficients"
            break
        try:
            state = SolverState1D.from_coeffs(coeffs, ops, params, t)
        except DenominatorVanishing as exc:
            record.termination, record.blow_up_time, record.reason = BLOW_UP, t, str(exc)
            break
        if k % stride == 0 or k == n_steps or state.firing_rate > blow_up_threshold:
            record.record(state)
        keep(k, state)
        if state.firing_rate > blow_up_threshold:
            record.termination, record.blow_up_time = BLOW_UP, t
            record.reason = f"firing rate {state.firing_rate:.6g} > {blow_up_threshold:g}"
            break
    record.final = state
    return record


def gaussian_initial(v0, var, domain: Domain1D):
    """Gaussian density truncated to the domain and renormalized to unit mass."""
    from .basis import composite_rule

    sigma = math.sqrt(var)

    def raw(v):
        return np.exp(-(np.asarray(v, dtype=float) - v0) ** 2 / (2 * var)) / (math.sqrt(2 * math.pi) * sigma)

    x, w = composite_rule(domain.v_min, domain.v_f, order=64, panels=32)
    m0 = float(raw(x) @ w)

    def density(v):
        return raw(v) / m0

    density.normalization = m0
    return density
