"""NNLIF density with Hebbian learning in the synaptic weight w.

After rescaling time by the learning rate the density p(v, w, t) obeys

    p_t + ((Nbar N(w) K(w) - w) p)_w
        = (1/eps) { a p_vv - ((-v + I(w, t) + w sigma(Nbar)) p)_v },

with N(w) = -a p_v(v_f, w) and Nbar the integral of N over w. On the node
grid w_j = w_min + j dw each column j carries a coefficient vector in the
voltage trial space. Transport in w is explicit (Godunov fluxes applied to
each coefficient index); the stiff voltage operator is implicit. After the
fluxes and activities are known the column solves are independent, and they
are done as one batched solve.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .assembly import OperatorSet, galerkin_solve, load_vector
from .basis import Domain1D
from .errors import SingularStepMatrix
from .solver1d import REFINE_STEPS, _step_count

COMPLETED = "completed"
EQUILIBRATED = "equilibrated"
DIVERGED = "diverged"
CFL_NUMBER = 0.9
EQUILIBRIUM_RTOL = 1e-5


class TransportStepWarning(RuntimeWarning):
    """The explicit w-transport step exceeds its stability bound."""


def identity_response(n_bar):
    return n_bar


def hebbian_strength(w):
    """K(w) = -1, the inhibitory learning strength, used on the whole weight range."""
    return np.full(np.shape(w), -1.0)


def zero_input(w, t):
    return np.zeros_like(np.asarray(w, dtype=float))


@dataclass(frozen=True)
class LearningParams:
    eps: float
    a: float
    domain: Domain1D
    w_min: float
    w_max: float
    n_w: int
    sigma: Callable = identity_response
    K: Callable = hebbian_strength
    I: Callable = zero_input
    a1: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if self.a1 != 0.0:
            raise ValueError("the learning model takes a constant diffusion (a1 must be 0)")
        if int(self.n_w) != self.n_w or self.n_w < 2:
            raise ValueError(f"n_w must be an integer >= 2, got {self.n_w}")
        if not self.w_max > self.w_min:
            raise ValueError("w_max must exceed w_min")

    @classmethod
    def with_spacing(cls, dw, w_min, w_max, **kw):
        n = (w_max - w_min) / dw
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"dw = {dw} does not divide [{w_min}, {w_max}]")
        return cls(w_min=w_min, w_max=w_max, n_w=int(round(n)), **kw)

    @property
    def dw(self):
        return (self.w_max - self.w_min) / self.n_w

    @property
    def w_nodes(self):
        return self.w_min + self.dw * np.arange(self.n_w + 1)


def ascending_sum(values):
    """Left-to-right sum (the last entry of a cumulative sum)."""
    values = np.asarray(values, dtype=float)
    return float(np.cumsum(values)[-1]) if values.size else 0.0


@dataclass(frozen=True)
class LearningField:
    """Coefficient vectors of every w column; row j belongs to w_j."""

    coeffs: np.ndarray
    params: LearningParams
    ops: OperatorSet
    time: float = 0.0

    def __post_init__(self):
        expected = (self.params.n_w + 1, self.ops.basis.size)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array has shape {self.coeffs.shape}, expected {expected}")

    def subnetwork_rates(self):
        """N_j = -a times the last (g3) coefficient of column j."""
        return -self.params.a * self.coeffs[:, -1]

    def total_rate(self):
        """Rectangle rule dw * sum_j N_j, summed in ascending j."""
        return self.params.dw * ascending_sum(self.subnetwork_rates())

    def weight_marginal(self):
        """H_j, the voltage integral of column j."""
        return self.coeffs @ self.ops.mass_vector

    def total_mass(self):
        return self.params.dw * ascending_sum(self.weight_marginal())

    def density(self, v):
        """p(v, w_j) on a voltage grid, shape (n_w + 1, len(v))."""
        return self.coeffs @ self.ops.basis.evaluate(np.asarray(v, dtype=float))


def interface_fluxes(coeffs, velocity):
    """Godunov fluxes at every interface j - 1/2, j = 0..n_w + 1.

    ``coeffs`` has one row per node; each coefficient index is transported as
    its own scalar. Row 0 and row n_w + 1 of the result are the closed
    boundaries and are exactly zero.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    phi = np.asarray(velocity, dtype=float)[:, None] * coeffs
    left, right = phi[:-1], phi[1:]
    rising = coeffs[:-1] <= coeffs[1:]
    inner = np.where(rising, np.minimum(left, right), np.maximum(left, right))
    out = np.zeros((coeffs.shape[0] + 1, coeffs.shape[1]))
    out[1:-1] = inner
    return out


def learning_velocity(params: LearningParams, n_bar, rates):
    w = params.w_nodes
    return n_bar * rates * params.K(w) - w


def godunov_flux(field_: LearningField, params: LearningParams, n_bar, rates):
    """Interface fluxes of the w-transport for the activities ``n_bar`` and ``rates``."""
    return interface_fluxes(field_.coeffs, learning_velocity(params, n_bar, rates))


def transport_bound(params: LearningParams, velocity):
    """Largest stable dt for explicit transport, CFL_NUMBER * dw / max |velocity|."""
    vmax = float(np.abs(velocity).max())
    return math.inf if vmax == 0.0 else CFL_NUMBER * params.dw / vmax


def sample_callable(fn, *args):
    return np.broadcast_to(np.asarray(fn(*args), dtype=float), np.shape(args[0])).astype(float)


@dataclass
class StepInfo:
    n_bar: float
    transport_residual: float
    substeps: int


class _ColumnSolver:
    """Batched solve of (S/h - A - aC + c_j B) x_j = S y_j / h over all columns, h = dt/eps.

    For the least-squares test space the normal matrix is quadratic in c_j,
    so it is assembled from three fixed products instead of per column.
    """

    def __init__(self, ops: OperatorSet, params: LearningParams, dt, refine=REFINE_STEPS):
        self.ops, self.params, self.refine = ops, params, refine
        self.h = dt / params.eps
        self.base = ops.s / self.h - ops.a - params.a * ops.c
        self.drift = np.asarray(ops.b)
        if ops.least_squares:
            m0, b = self.base, self.drift
            self.q0 = m0.T @ m0
            self.q1 = m0.T @ b + b.T @ m0
            self.q2 = b.T @ b

    def matrices(self, shift):
        if self.ops.least_squares:
            c = shift[:, None, None]
            return self.q0 + c * self.q1 + c * c * self.q2
        return self.base + shift[:, None, None] * self.drift

    def _batched(self, mats, rhs):
        try:
            return np.linalg.solve(mats, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            for j, m in enumerate(mats):
                try:
                    np.linalg.solve(m, rhs[j])
                except np.linalg.LinAlgError:
                    raise SingularStepMatrix(f"step matrix of column {j} is singular", column=j) from None
            raise

    def solve(self, y, shift):
        bad = np.flatnonzero(~np.isfinite(shift))
        if bad.size:
            j = int(bad[0])
            raise SingularStepMatrix(f"non-finite drift in column {j}", column=j)
        rhs = y @ self.ops.s.T / self.h
        mats = self.matrices(shift)
        if not self.ops.least_squares:
            return self._batched(mats, rhs)

        def apply_m(x):
            return x @ self.base.T + shift[:, None] * (x @ self.drift.T)

        def apply_mt(r):
            return r @ self.base + shift[:, None] * (r @ self.drift)

        x = self._batched(mats, apply_mt(rhs))
        for _ in range(self.refine):
            x = x + self._batched(mats, apply_mt(rhs - apply_m(x)))
        return x


class Stepper2D:
    """Reusable time stepper; holds the per-run constant matrix products."""

    def __init__(self, ops: OperatorSet, params: LearningParams, dt, subcycle=False, refine=REFINE_STEPS):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.ops, self.params, self.dt, self.subcycle = ops, params, dt, subcycle
        self.solver = _ColumnSolver(ops, params, dt, refine)
        self._warned = False

    def _transport(self, coeffs, velocity):
        p = self.params
        bound = transport_bound(p, velocity)
        substeps = 1
        if self.dt > bound:
            if self.subcycle:
                substeps = int(math.ceil(self.dt / bound))
            elif not self._warned:
                warnings.warn(f"dt = {self.dt:g} exceeds the transport bound {bound:.4g}",
                              TransportStepWarning, stacklevel=3)
                self._warned = True
        ratio = self.dt / substeps / p.dw
        worst = 0.0
        for _ in range(substeps):
            flux = interface_fluxes(coeffs, velocity)
            div = flux[1:] - flux[:-1]
            scale = np.abs(flux).max(axis=0)
            col = np.abs(div.sum(axis=0))
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.where(scale > 0, col / np.where(scale > 0, scale, 1.0), 0.0)
            worst = max(worst, float(rel.max()))
            coeffs = coeffs - ratio * div
        return coeffs, worst, substeps

    def step(self, field_: LearningField, learning=True, new_time=None):
        p = self.params
        rates = field_.subnetwork_rates()
        n_bar = p.dw * ascending_sum(rates)
        w = p.w_nodes
        coeffs = field_.coeffs
        residual, substeps = 0.0, 0
        if learning:
            coeffs, residual, substeps = self._transport(coeffs, learning_velocity(p, n_bar, rates))
        shift = sample_callable(p.I, w, field_.time) + w * p.sigma(n_bar)
        new = self.solver.solve(coeffs, shift)
        t = field_.time + self.dt if new_time is None else new_time
        out = LearningField(new, p, self.ops, t)
        return out, StepInfo(n_bar, residual, substeps)


def step2d(field_: LearningField, ops: OperatorSet, params: LearningParams, dt, learning=True,
           subcycle=False) -> LearningField:
    """One step of length ``dt``; ``learning=False`` removes the w-transport."""
    return Stepper2D(ops, params, dt, subcycle).step(field_, learning)[0]


def project_field(ops: OperatorSet, params: LearningParams, p0, time=0.0, separable=None) -> LearningField:
    """Per-column least-squares projection of an initial density p0(v, w).

    When ``separable=(f, g)`` is given, p0(v, w) = f(v) g(w) and the voltage
    projection is done once.
    """
    w = params.w_nodes
    kind = ops.test_kind
    if separable is not None:
        f, g = separable
        base = galerkin_solve(ops.s, load_vector(ops.basis, kind, f), kind.least_squares)
        coeffs = np.asarray(g(w), dtype=float)[:, None] * base[None, :]
    else:
        rhs = np.column_stack([load_vector(ops.basis, kind, lambda v, wj=wj: p0(v, wj)) for wj in w])
        coeffs = galerkin_solve(ops.s, rhs, kind.least_squares).T
    return LearningField(np.ascontiguousarray(coeffs), params, ops, time)


def _sin2_window(x, lo, hi):
    x = np.asarray(x, dtype=float)
    return np.where((x > lo) & (x < hi), np.sin(np.pi * x) ** 2, 0.0)


def sin2_weight_profile(w):
    """sin^2(pi w) on -1 < w < 0, exactly zero elsewhere."""
    return _sin2_window(w, -1.0, 0.0)


def sin2_voltage_profile(v):
    """sin^2(pi v) on -1 < v < 1, exactly zero elsewhere."""
    return _sin2_window(v, -1.0, 1.0)


def sin2_bump(v, w):
    return sin2_voltage_profile(v) * sin2_weight_profile(w)


def gaussian_voltage_profile(v0, var):
    """Unit Gaussian density in v (not renormalized to the truncated domain)."""
    norm = 1.0 / math.sqrt(2 * math.pi * var)

    def f(v):
        return norm * np.exp(-(np.asarray(v, dtype=float) - v0) ** 2 / (2 * var))

    return f


def first_input(w):
    z = 10.0 * np.asarray(w, dtype=float) + 5.0
    return np.pi ** -0.25 * np.exp(-0.5 * z * z) + 2.0


def second_input(w):
    z = 10.0 * np.asarray(w, dtype=float) + 5.0
    return np.pi ** -0.25 * math.sqrt(2.0) * z * np.exp(-0.5 * z * z) + 2.0


def average_input(w):
    return 0.5 * (first_input(w) + second_input(w))


NAMED_INPUTS = {"I1": first_input, "I2": second_input, "mean": average_input}


def constant_input(fn):
    """Lift a function of w to a time-independent input I(w, t)."""

    def inp(w, t):
        return fn(w)

    inp.profile = fn
    return inp


def switching_weight(t, period):
    """a(t) = (1 + cos(2 pi t / D)) / 2; the weight of the first input."""
    return 0.5 * (1.0 + math.cos(2.0 * math.pi * t / period))


def periodic_input(period, first=first_input, second=second_input):
    """I(w, t) = a(t) first(w) + (1 - a(t)) second(w)."""
    if not period > 0:
        raise ValueError("period must be positive")

    def inp(w, t):
        s = switching_weight(t, period)
        return s * first(w) + (1.0 - s) * second(w)

    inp.period = period
    return inp


@dataclass
class Run2DRecord:
    times: list = field(default_factory=list)
    total_rates: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    transport_residual: float = 0.0
    substeps: int = 0
    h_snapshots: dict = field(default_factory=dict)
    signal_snapshots: dict = field(default_factory=dict)
    termination: str = COMPLETED
    final: LearningField | None = None

    def record(self, f: LearningField):
        self.times.append(f.time)
        self.total_rates.append(f.total_rate())
        self.masses.append(f.total_mass())

    def extend(self, other: "Run2DRecord"):
        skip = 1 if self.times and other.times and other.times[0] == self.times[-1] else 0
        self.times += other.times[skip:]
        self.total_rates += other.total_rates[skip:]
        self.masses += other.masses[skip:]
        self.h_snapshots.update(other.h_snapshots)
        self.signal_snapshots.update(other.signal_snapshots)
        self.transport_residual = max(self.transport_residual, other.transport_residual)
        self.substeps = max(self.substeps, other.substeps)
        self.termination, self.final = other.termination, other.final
        return self

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "Nbar", "mass"])
            for row in zip(self.times, self.total_rates, self.masses):
                out.writerow([f"{x:.17g}" for x in row])
        return path

    def snapshots_to_csv(self, path, which="H"):
        snaps = self.h_snapshots if which == "H" else self.signal_snapshots
        w = self.final.params.w_nodes
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "w", which])
            for t in sorted(snaps):
                for wj, x in zip(w, snaps[t]):
                    out.writerow([f"{t:.17g}", f"{wj:.17g}", f"{x:.17g}"])
        return path


def run2d(initial: LearningField, dt, duration, learning=True, stride=1, snapshot_times=(),
          equilibrium_rtol=None, subcycle=False, refine=REFINE_STEPS, params=None) -> Run2DRecord:
    """Advance ``initial`` by ``duration`` in steps of ``dt``.

    ``params`` overrides the field's parameters (a new input, for instance).
    With ``equilibrium_rtol`` the run stops at the first whole time unit over
    which the total activity changed by less than that fraction of itself.
    Snapshot times are absolute.
    """
    params = params or initial.params
    f = LearningField(initial.coeffs, params, initial.ops, initial.time)
    t0 = f.time
    stepper = Stepper2D(f.ops, params, dt, subcycle, refine)
    rec = Run2DRecord()
    n_steps = _step_count(duration, dt)
    unit = max(1, int(round(1.0 / dt)))
    wanted = {int(round((t - f.time) / dt)) for t in snapshot_times}
    marks = {}

    def keep(k, f):
        if k in wanted:
            rec.h_snapshots[f.time] = f.weight_marginal()
            rec.signal_snapshots[f.time] = f.subnetwork_rates()

    rec.record(f)
    keep(0, f)
    marks[0] = rec.total_rates[-1]
    for k in range(1, n_steps + 1):
        f, info = stepper.step(f, learning, t0 + k * dt)
        rec.transport_residual = max(rec.transport_residual, info.transport_residual)
        rec.substeps = max(rec.substeps, info.substeps)
        if not np.all(np.isfinite(f.coeffs)):
            rec.termination = DIVERGED
            rec.record(f)
            break
        last = k == n_steps
        if k % stride == 0 or last or k % unit == 0:
            rec.record(f)
        keep(k, f)
        if k % unit == 0:
            now = f.total_rate()
            marks[k] = now
            before = marks.get(k - unit)
            if equilibrium_rtol is not None and before is not None \
                    and abs(now - before) <= equilibrium_rtol * abs(now):
                rec.termination = EQUILIBRATED
                break
    rec.final = f
    return rec


@dataclass(frozen=True)
class TwoPhaseProtocol:
    learning_input: Callable
    learning_duration: float
    testing_input: Callable
    testing_duration: float
    equilibrium_rtol: float | None = EQUILIBRIUM_RTOL

    def reference(self):
        """Same protocol with the testing input also used for learning."""
        return replace(self, learning_input=constant_input(self.testing_input))


@dataclass
class PhaseResult:
    record: Run2DRecord
    signal: np.ndarray
    total_rate: float

    @property
    def field(self):
        return self.record.final


def learning_phase(initial: LearningField, learning_input, duration, dt, equilibrium_rtol=None,
                   **kw) -> PhaseResult:
    """Phase 1: transport on, input I(w, t). The signal is the prediction N_I(w)."""
    params = replace(initial.params, I=learning_input)
    rec = run2d(initial, dt, duration, learning=True, equilibrium_rtol=equilibrium_rtol,
                params=params, **kw)
    return PhaseResult(rec, rec.final.subnetwork_rates(), rec.final.total_rate())


def testing_phase(learned: LearningField, testing_input, duration, dt,
                  equilibrium_rtol=EQUILIBRIUM_RTOL, **kw) -> PhaseResult:
    """Phase 2: transport off, time-independent input J(w). The signal is N*_J(w)."""
    params = replace(learned.params, I=constant_input(testing_input))
    rec = run2d(learned, dt, duration, learning=False, equilibrium_rtol=equilibrium_rtol,
                params=params, **kw)
    return PhaseResult(rec, rec.final.subnetwork_rates(), rec.final.total_rate())


@dataclass
class TwoPhaseResult:
    learning: PhaseResult
    testing: PhaseResult
    e_metric: float | None = None
    reference_total_rate: float | None = None

    @property
    def prediction_signal(self):
        return self.learning.signal

    @property
    def output_signal(self):
        return self.testing.signal

    def series(self):
        rec = Run2DRecord()
        rec.extend(self.learning.record)
        rec.extend(self.testing.record)
        return rec

    def write(self, directory, stem="two_phase"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.series().to_csv(directory / f"{stem}_nbar.csv")
        w = self.learning.field.params.w_nodes
        with (directory / f"{stem}_signals.csv").open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["w", "prediction", "output", "H_learned"])
            for row in zip(w, self.prediction_signal, self.output_signal,
                           self.learning.field.weight_marginal()):
                out.writerow([f"{x:.17g}" for x in row])
        series = self.series()
        if series.h_snapshots:
            series.final = self.testing.field
            series.snapshots_to_csv(directory / f"{stem}_H.csv")
        doc = {
            "total_rate_learning_end": self.learning.total_rate,
            "total_rate_output": self.testing.total_rate,
            "reference_total_rate": self.reference_total_rate,
            "E": self.e_metric,
            "learning_termination": self.learning.record.termination,
            "testing_termination": self.testing.record.termination,
        }
        (directory / f"{stem}_summary.json").write_text(json.dumps(doc, indent=1))
        return directory


def discrimination_metric(total_rate, reference_total_rate):
    """E = |Nbar_J^{eps, D} - Nbar_J^{eps}|."""
    return abs(total_rate - reference_total_rate)


def run_two_phase(protocol: TwoPhaseProtocol, initial: LearningField, dt, reference_total_rate=None,
                  compute_reference=False, **kw) -> TwoPhaseResult:
    """Learning then testing; E is filled in when a reference is given or computed.

    The reference run repeats the protocol with the testing input as a
    constant learning input, so E compares against a network that learned J.
    """
    learned = learning_phase(initial, protocol.learning_input, protocol.learning_duration, dt,
                             protocol.equilibrium_rtol, **kw)
    tested = testing_phase(learned.field, protocol.testing_input, protocol.testing_duration, dt,
                           protocol.equilibrium_rtol, **kw)
    if reference_total_rate is None and compute_reference:
        ref = run_two_phase(protocol.reference(), initial, dt, **kw)
        reference_total_rate = ref.testing.total_rate
    e = None if reference_total_rate is None else discrimination_metric(tested.total_rate,
                                                                        reference_total_rate)
    return TwoPhaseResult(learned, tested, e, reference_total_rate)


def dominant_frequency(times, values, t_start, t_end):
    """Frequency of the largest non-constant DFT component of values on [t_start, t_end).

    Returns (frequency, bin width). Samples must be uniformly spaced.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    sel = (t >= t_start - 1e-12) & (t < t_end - 1e-12)
    t, x = t[sel], x[sel]
    if t.size < 4:
        raise ValueError("need at least four samples in the window")
    dt = np.diff(t)
    if np.ptp(dt) > 1e-6 * dt.mean():
        raise ValueError("samples are not uniformly spaced")
    amplitude = np.abs(np.fft.rfft(x - x.mean()))
    freqs = np.fft.rfftfreq(t.size, d=dt.mean())
    k = int(np.argmax(amplitude[1:])) + 1
    return float(freqs[k]), float(freqs[1])

