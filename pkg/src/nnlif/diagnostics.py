"""Spectral stability checks, stationary states and relative entropy.

Stationary densities have the closed form

    p(v) = N/a * exp(-h(v)^2 / 2a) * int_{max(v, v_r)}^{v_f} exp(h(w)^2 / 2a) dw,

with h(v) = -v + bN and a = a0 + a1 N. Writing u = (w - bN)/sqrt(2a) the
inner integral is an erfi difference; it is evaluated through Dawson's
function so that no exponential is formed on its own (h^2/2a can exceed 700).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.special

from .assembly import TestSpaceKind, assemble, project_initial
from .basis import SpectralBasis, composite_rule, eval_solution
from .errors import DegenerateSteadyState, NonConvergence, NoRootFound
from .solver1d import ModelParams1D, gaussian_initial, run

ZERO_MODE_RTOL = 1e-8
SCAN_MAX = 20.0
SCAN_PROBES = 2000
ROOT_TOL = 1e-10

STABLE = "stable"
UNSTABLE = "unstable"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class EigenReport:
    eigenvalues: np.ndarray
    max_real_part: float
    has_zero_mode: bool
    norm: float

    @property
    def min_abs(self):
        return float(np.abs(self.eigenvalues).min())


def eigen_report(k_matrix, zero_rtol=ZERO_MODE_RTOL) -> EigenReport:
    """Eigenvalues of K; a zero mode is any |lambda| < zero_rtol * ||K||_2."""
    k_matrix = np.asarray(k_matrix, dtype=float)
    if k_matrix.ndim != 2 or k_matrix.shape[0] != k_matrix.shape[1]:
        raise ValueError("K must be square")
    try:
        ev = np.linalg.eigvals(k_matrix)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"eigenvalue iteration failed: {exc}") from exc
    ev = ev[np.lexsort((ev.imag, -ev.real))]
    norm = float(np.linalg.norm(k_matrix, 2))
    zero = bool(np.any(np.abs(ev) < zero_rtol * norm))
    return EigenReport(ev, float(ev.real.max()), zero, norm)


def _inner_scaled(x, lower, shift, a, v_f):
    """exp(-h(x)^2/2a) * int_lower^{v_f} exp(h(w)^2/2a) dw with h(w) = shift - w, elementwise."""
    s = math.sqrt(2.0 * a)
    ux = (x - shift) / s
    u1 = (lower - shift) / s
    u2 = (v_f - shift) / s
    dawsn = scipy.special.dawsn
    return s * (np.exp(u2 * u2 - ux * ux) * dawsn(u2) - np.exp(u1 * u1 - ux * ux) * dawsn(u1))


def _stationary_shape(v, shift, a, domain):
    v = np.asarray(v, dtype=float)
    inside = (v >= domain.v_min) & (v <= domain.v_f)
    vals = _inner_scaled(v, np.maximum(v, domain.v_r), shift, a, domain.v_f) / a
    return np.where(inside, vals, 0.0)


def steady_profile(v, n_rate, params: ModelParams1D):
    """Closed-form stationary density for firing rate ``n_rate`` (zero outside the domain)."""
    return n_rate * _stationary_shape(v, params.b * n_rate, params.diffusion(n_rate), params.domain)


def drift_steady_profile(v, shift, a, domain, mass=1.0):
    """Stationary density of p_t + ((shift - v) p)_v = a p_vv with reset, scaled to ``mass``.

    This is the voltage equilibrium for a frozen drift offset, as seen by one
    weight column of the learning model.
    """
    x, w = _mass_rule(domain)
    total = _stationary_shape(x, shift, a, domain) @ w
    return mass / total * _stationary_shape(v, shift, a, domain)


def _mass_rule(domain, order=64, panels=8):
    xl, wl = composite_rule(domain.v_min, domain.v_r, order=order, panels=panels)
    xr, wr = composite_rule(domain.v_r, domain.v_f, order=order, panels=panels)
    return np.concatenate([xl, xr]), np.concatenate([wl, wr])


def steady_mass(n_rate, params: ModelParams1D):
    """Total mass of the stationary profile for a trial firing rate."""
    x, w = _mass_rule(params.domain)
    return float(steady_profile(x, n_rate, params) @ w)


def steady_firing_rates(params: ModelParams1D, n_max=SCAN_MAX, probes=SCAN_PROBES, tol=ROOT_TOL):
    """All roots of F(N) = mass(p_N) - 1 on (0, n_max], by scan and bracketing.

    Raises NoRootFound when the scan sees no sign change.
    """
    grid = n_max * np.arange(1, probes + 1) / probes
    f = np.array([steady_mass(n, params) - 1.0 for n in grid])
    roots = []
    for i in range(len(grid) - 1):
        if f[i] == 0.0:
            roots.append(float(grid[i]))
            continue
        if np.sign(f[i]) * np.sign(f[i + 1]) < 0:
            root = scipy.optimize.brentq(lambda n: steady_mass(n, params) - 1.0,
                                         grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            resid = abs(steady_mass(root, params) - 1.0)
            if resid > tol:
                raise NonConvergence(f"root near {root:.6g} has residual {resid:.2e}")
            roots.append(float(root))
    if f[-1] == 0.0:
        roots.append(float(grid[-1]))
    if not roots:
        raise NoRootFound(f"no sign change of mass(N) - 1 on (0, {n_max}]")
    return roots


@dataclass
class SteadyState:
    n_inf: float
    profile: object
    stability_tag: str = UNKNOWN

    def sample(self, v):
        return np.asarray(self.profile(np.asarray(v, dtype=float)))


def steady_state(params: ModelParams1D, n_rate) -> SteadyState:
    """SteadyState for one root; the profile closes over the closed form."""
    return SteadyState(float(n_rate), lambda v: steady_profile(v, n_rate, params))


def numerical_steady_state(params, basis: SpectralBasis, test_kind="MPGM", dt=1e-3, t_long=20.0,
                           initial=None) -> SteadyState:
    """Long-time solver output used as a stationary profile."""
    test_kind = TestSpaceKind.parse(test_kind)
    ops = assemble(basis, test_kind)
    p0 = initial or gaussian_initial(-1.0, 0.5, params.domain)
    rec = run(project_initial(basis, test_kind, p0, ops), ops, params, dt, t_long, stride=1000)
    coeffs = rec.final.coeffs.copy()
    return SteadyState(rec.final.firing_rate, lambda v: eval_solution(basis, coeffs, v), STABLE)


def tag_stability(params, steady: SteadyState, basis=None, delta=1e-3, dt=1e-3, t_max=5.0,
                  blow_up_threshold=50.0):
    """Empirical stability tag from a perturbed MPGM run.

    The run starts at (1 - delta) p_inf + delta * Gaussian(-1, 0.5). The state
    is Stable when the firing-rate deviation has shrunk by the end, Unstable
    when it has grown by an order of magnitude (or the run blew up).
    """
    basis = basis or SpectralBasis(params.domain, 16)
    kind = TestSpaceKind.parse("MPGM")
    ops = assemble(basis, kind)
    g = gaussian_initial(-1.0, 0.5, params.domain)

    def p0(v):
        return (1 - delta) * steady.sample(v) + delta * g(v)

    rec = run(project_initial(basis, kind, p0, ops), ops, params, dt, t_max,
              blow_up_threshold=blow_up_threshold)
    if rec.blew_up:
        return UNSTABLE
    dev = np.abs(np.asarray(rec.rates) - steady.n_inf)
    start = dev[: max(2, len(dev) // 50)].max()
    if dev[-1] > 10 * max(start, 1e-12):
        return UNSTABLE
    if dev[-1] < 0.5 * start:
        return STABLE
    return UNKNOWN


@dataclass
class EntropySeries:
    times: np.ndarray
    values: np.ndarray

    def increments(self):
        return np.diff(self.values)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,S\n")
            for t, s in zip(self.times, self.values):
                fh.write(f"{t:.17g},{s:.17g}\n")
        return path


def relative_entropy(snapshots, basis: SpectralBasis, steady: SteadyState, order=64, panels=8):
    """S(t) = int G(p/p_inf) p_inf dv, G(x) = (x - 1)^2 / 2, per snapshot.

    ``snapshots`` maps time to coefficient vectors (a RunRecord's
    ``snapshots``). The integral runs over (v_min, v_f) with no clipping of
    the numerical density.
    """
    x, w = _mass_rule(basis.domain, order, panels)
    ref = steady.sample(x)
    if np.any(ref <= 0.0) or not np.all(np.isfinite(ref)):
        raise DegenerateSteadyState("stationary profile is not strictly positive on the quadrature nodes")
    psi = basis.evaluate(x)
    times = np.array(sorted(snapshots))
    vals = np.array([((np.asarray(snapshots[t]) @ psi - ref) ** 2 / (2.0 * ref)) @ w for t in times])
    return EntropySeries(times, vals)
