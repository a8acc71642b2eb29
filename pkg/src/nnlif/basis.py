"""Split-interval polynomial trial space for the NNLIF Fokker-Planck equation.

The voltage domain ``[v_min, v_f]`` is cut at the reset potential ``v_r``.
Every trial function is a polynomial on each side, continuous at ``v_r`` and
satisfies, by construction,

    p(v_min) = p'(v_min) = 0,    p(v_f) = 0,
    p'(v_r-) - p'(v_r+) = -p'(v_f).

The space is the sum of two families of compact Legendre combinations (one per
subinterval, homogeneous value and slope at both ends) and three piecewise
cubics ``g1, g2, g3`` that carry the boundary data. Basis ordering is::

    [hL_0 .. hL_{N-1}, hR_0 .. hR_{N-1}, g1, g2, g3]

so the last coefficient is ``p'(v_f)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SideRequired

LEFT = "left"
RIGHT = "right"


@dataclass(frozen=True)
class Domain1D:
    v_min: float
    v_r: float
    v_f: float

    def __post_init__(self):
        if not (self.v_min < self.v_r < self.v_f):
            raise ValueError(
                f"need v_min < v_r < v_f, got ({self.v_min}, {self.v_r}, {self.v_f})"
            )

    @property
    def left(self):
        return (self.v_min, self.v_r)

    @property
    def right(self):
        return (self.v_r, self.v_f)


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval [-1, 1]."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def mapped(self, a, b):
        """Nodes and weights transported affinely onto ``[a, b]``."""
        half = 0.5 * (b - a)
        return 0.5 * (a + b) + half * self.nodes, half * self.weights


@lru_cache(maxsize=None)
def gauss_rule(order: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``order`` points, exact up to degree 2*order-1."""
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w, order)


def composite_rule(a, b, order=64, panels=1):
    """Composite Gauss rule on ``[a, b]`` with ``panels`` equal panels."""
    rule = gauss_rule(order)
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = rule.mapped(lo, hi)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


# ------------------------------------------------------------------ Legendre


def legendre_table(kmax: int, x):
    """Values, first and second derivatives of L_0..L_kmax at ``x``.

    Returns three arrays of shape ``(kmax + 1,) + x.shape``. Uses Bonnet's
    recurrence for values and ``L'_{k+1} = L'_{k-1} + (2k+1) L_k`` (and its
    derivative) for the slopes, which stays exact at x = +-1.
    """
    x = np.asarray(x, dtype=float)
    val = np.empty((kmax + 1,) + x.shape)
    d1 = np.empty_like(val)
    d2 = np.empty_like(val)
    val[0], d1[0], d2[0] = 1.0, 0.0, 0.0
    if kmax >= 1:
        val[1], d1[1], d2[1] = x, 1.0, 0.0
    for k in range(1, kmax):
        val[k + 1] = ((2 * k + 1) * x * val[k] - k * val[k - 1]) / (k + 1)
        d1[k + 1] = d1[k - 1] + (2 * k + 1) * val[k]
        d2[k + 1] = d2[k - 1] + (2 * k + 1) * d1[k]
    return val, d1, d2


def legendre_eval(k: int, x):
    """Return ``(L_k(x), L_k'(x), L_k''(x))``."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    val, d1, d2 = legendre_table(k, x)
    return val[k], d1[k], d2[k]


def compact_coefficients(k: int):
    """(beta_k, eta_k) so that L_k + beta L_{k+2} + eta L_{k+4} is clamped at +-1."""
    return -(4 * k + 10) / (2 * k + 7), (2 * k + 3) / (2 * k + 7)


def _w2_table(n, a, b, v):
    """All N members of X_N(a, b) at points ``v`` inside ``[a, b]``."""
    scale = 2.0 / (b - a)
    x = (2.0 * np.asarray(v, dtype=float) - (a + b)) / (b - a)
    val, d1, d2 = legendre_table(n + 3, x)
    k = np.arange(n)
    beta, eta = compact_coefficients(k)
    shape = (n,) + (1,) * x.ndim
    beta = beta.reshape(shape)
    eta = eta.reshape(shape)
    h0 = val[k] + beta * val[k + 2] + eta * val[k + 4]
    h1 = (d1[k] + beta * d1[k + 2] + eta * d1[k + 4]) * scale
    h2 = (d2[k] + beta * d2[k + 2] + eta * d2[k + 4]) * scale**2
    return h0, h1, h2


def w2_member(k: int, subinterval, v):
    """Compact Legendre combination number ``k`` on ``subinterval``.

    Zero outside the closed subinterval; derivatives at the endpoints are the
    one-sided limits from inside.
    """
    a, b = subinterval
    v = np.asarray(v, dtype=float)
    inside = (v >= a) & (v <= b)
    h0, h1, h2 = _w2_table(k + 1, a, b, np.where(inside, v, 0.5 * (a + b)))
    return tuple(np.where(inside, h[k], 0.0) for h in (h0, h1, h2))


# ----------------------------------------------------------- boundary cubics


def _cubic_coefficients(domain: Domain1D):
    """Coefficients of g1..g3 on each side, as cubics in the local coordinate.

    Each piece is stored as ``(origin, length, (c3, c2, c1, c0))`` with the
    polynomial in ``s = (v - origin) / length``. This is the closed-form cubic
    rewritten about the left end of its subinterval, which avoids the
    cancellation the plain monomial form suffers away from v = 0.
    """
    vm, vr, vf = domain.v_min, domain.v_r, domain.v_f
    hl, hr = vr - vm, vf - vr
    left = {
        1: (vm, hl, (-2.0, 3.0, 0.0, 0.0)),
        2: (vm, hl, (hl, -hl, 0.0, 0.0)),
        3: (vm, hl, (0.0, 0.0, 0.0, 0.0)),
    }
    right = {
        1: (vr, hr, (2.0, -3.0, 0.0, 1.0)),
        2: (vr, hr, (hr, -2.0 * hr, hr, 0.0)),
        3: (vr, hr, (2.0 * hr, -3.0 * hr, hr, 0.0)),
    }
    return left, right


def _cubic(piece, v):
    origin, length, (c3, c2, c1, c0) = piece
    s = (v - origin) / length
    return (
        ((c3 * s + c2) * s + c1) * s + c0,
        ((3 * c3 * s + 2 * c2) * s + c1) / length,
        (6 * c3 * s + 2 * c2) / length**2,
    )


def _side_masks(domain, v, deriv, side):
    v = np.asarray(v, dtype=float)
    at_reset = v == domain.v_r
    if side is None:
        if deriv >= 1 and np.any(at_reset):
            raise SideRequired("derivative at v_r needs side='left' or 'right'")
        left = v < domain.v_r
    elif side == LEFT:
        left = v <= domain.v_r
    elif side == RIGHT:
        left = v < domain.v_r
    else:
        raise ValueError(f"side must be 'left', 'right' or None, got {side!r}")
    inside = (v >= domain.v_min) & (v <= domain.v_f)
    return left & inside, ~left & inside


def w1_member(idx: int, domain: Domain1D, v, side=None):
    """Boundary cubic ``g_idx`` (idx in 1, 2, 3) with its first two derivatives."""
    if idx not in (1, 2, 3):
        raise ValueError("idx must be 1, 2 or 3")
    v = np.asarray(v, dtype=float)
    left_c, right_c = _cubic_coefficients(domain)
    lm, rm = _side_masks(domain, v, 0, side)
    out = []
    for lo, hi in zip(_cubic(left_c[idx], v), _cubic(right_c[idx], v)):
        out.append(np.where(lm, lo, np.where(rm, hi, 0.0)))
    return tuple(out)


# ------------------------------------------------------------- trial space


class SpectralBasis:
    """Trial space W_N of dimension 2N+3 on a split domain.

    Parameters
    ----------
    domain : Domain1D
    n : int
        Number of compact Legendre members per subinterval. ``n=0`` leaves only
        the three boundary cubics and is accepted with ``diagnostic=True``.
    """

    def __init__(self, domain: Domain1D, n: int, diagnostic: bool = False):
        if n < 1 and not (diagnostic and n == 0):
            raise ValueError("need n >= 1 (n = 0 only in diagnostic mode)")
        self.domain = domain
        self.n = int(n)
        self.size = 2 * self.n + 3
        self._left_c, self._right_c = _cubic_coefficients(domain)

    # index bookkeeping
    @property
    def left_slice(self):
        return slice(0, self.n)

    @property
    def right_slice(self):
        return slice(self.n, 2 * self.n)

    @property
    def g_index(self):
        """Positions of g1, g2, g3 in the coefficient vector."""
        return (2 * self.n, 2 * self.n + 1, 2 * self.n + 2)

    @property
    def max_degree(self):
        return max(self.n + 3, 3)

    def __repr__(self):
        d = self.domain
        return f"SpectralBasis(({d.v_min}, {d.v_r}, {d.v_f}), n={self.n})"

    def __eq__(self, other):
        return (
            isinstance(other, SpectralBasis)
            and self.domain == other.domain
            and self.n == other.n
        )

    def __hash__(self):
        return hash((self.domain, self.n))

    def evaluate(self, v, deriv: int = 0, side=None):
        """Matrix of basis values (or derivatives), shape ``(size,) + v.shape``."""
        if deriv not in (0, 1, 2):
            raise ValueError("deriv must be 0, 1 or 2")
        v = np.asarray(v, dtype=float)
        lm, rm = _side_masks(self.domain, v, deriv, side)
        out = np.zeros((self.size,) + v.shape)
        n = self.n
        d = self.domain
        if n:
            if lm.any():
                out[:n, lm] = _w2_table(n, d.v_min, d.v_r, v[lm])[deriv]
            if rm.any():
                out[n : 2 * n, rm] = _w2_table(n, d.v_r, d.v_f, v[rm])[deriv]
        for i, idx in enumerate((1, 2, 3)):
            lo = _cubic(self._left_c[idx], v[lm])[deriv]
            hi = _cubic(self._right_c[idx], v[rm])[deriv]
            out[2 * n + i, lm] = lo
            out[2 * n + i, rm] = hi
        return out

    def pieces(self, v_left, v_right):
        """Basis values and derivatives on nodes known to lie in each subinterval.

        Returns ``(left, right)`` where each is a tuple ``(val, d1, d2)`` of
        arrays with shape ``(size, m)``. Used by the assembly routines.
        """
        return (
            self._piece(np.asarray(v_left, dtype=float), LEFT),
            self._piece(np.asarray(v_right, dtype=float), RIGHT),
        )

    def _piece(self, v, side):
        n, d = self.n, self.domain
        vals = [np.zeros((self.size, v.size)) for _ in range(3)]
        if side == LEFT:
            sl, (a, b), coeffs = self.left_slice, d.left, self._left_c
        else:
            sl, (a, b), coeffs = self.right_slice, d.right, self._right_c
        if n:
            for out, h in zip(vals, _w2_table(n, a, b, v)):
                out[sl] = h
        for i, idx in enumerate((1, 2, 3)):
            for out, g in zip(vals, _cubic(coeffs[idx], v)):
                out[2 * n + i] = g
        return tuple(vals)


def eval_solution(basis: SpectralBasis, coeffs, v, deriv: int = 0, side=None):
    """Evaluate ``sum_k coeffs[k] * psi_k^(deriv)(v)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.size:
        raise ValueError(f"expected {basis.size} coefficients, got {coeffs.shape[-1]}")
    return np.tensordot(coeffs, basis.evaluate(v, deriv, side), axes=(-1, 0))


def boundary_lambdas(basis: SpectralBasis, coeffs):
    """(lambda1, lambda2, lambda3) = (p(v_r), p'(v_r-), p'(v_f))."""
    coeffs = np.asarray(coeffs, dtype=float)
    i1, i2, i3 = basis.g_index
    return coeffs[..., i1], coeffs[..., i2], coeffs[..., i3]
