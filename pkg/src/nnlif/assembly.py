"""Galerkin and Petrov-Galerkin operators on the split Legendre trial space.

For trial functions psi_k and test functions phi_j the assembled matrices are

    S[j, k] = (psi_k, phi_j)            A[j, k] = ((v psi_k)', phi_j)
    B[j, k] = (psi_k', phi_j)           C[j, k] = (psi_k'', phi_j)

integrated piecewise over (v_min, v_r) and (v_r, v_f). Three test spaces are
supported: the trial space itself (LGM), the trial space plus the constant
function (MPGM, overdetermined, solved in the least-squares sense) and the
trial space with one member swapped for the constant (a diagnostic that is
known to be unstable for some N).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .basis import SpectralBasis, composite_rule, gauss_rule
from .errors import RankDeficient

COND_LIMIT = 1e14


@dataclass(frozen=True)
class TestSpaceKind:
    """Choice of test space: ``"LGM"``, ``"MPGM"`` or ``"shifted"``."""

    __test__ = False  # keep pytest from collecting this class

    variant: str
    replaced_index: int | None = None

    def __post_init__(self):
        if self.variant not in ("LGM", "MPGM", "shifted"):
            raise ValueError(f"unknown test space {self.variant!r}")
        if self.variant != "shifted" and self.replaced_index is not None:
            raise ValueError("replaced_index only applies to the shifted space")

    @classmethod
    def shifted_constant(cls, replaced_index=None):
        return cls("shifted", replaced_index)

    @property
    def least_squares(self):
        return self.variant == "MPGM"

    def dimension(self, basis: SpectralBasis):
        return basis.size + (1 if self.variant == "MPGM" else 0)

    def replaced(self, basis: SpectralBasis):
        """Index of the trial member swapped out (default: last right-hand W2 member)."""
        if self.variant != "shifted":
            return None
        k = self.replaced_index
        if k is None:
            k = 2 * basis.n - 1 if basis.n else basis.size - 1
        if not 0 <= k < basis.size:
            raise ValueError(f"replaced_index {k} out of range for size {basis.size}")
        return k

    def constant_row(self, basis: SpectralBasis):
        if self.variant == "MPGM":
            return basis.size
        return self.replaced(basis)

    def __str__(self):
        if self.variant == "shifted":
            return "shifted" if self.replaced_index is None else f"shifted:{self.replaced_index}"
        return self.variant

    @classmethod
    def parse(cls, text):
        """Parse ``"LGM"``, ``"MPGM"``, ``"shifted"`` or ``"shifted:<k>"``."""
        if isinstance(text, cls):
            return text
        name, _, idx = str(text).partition(":")
        name = name.strip()
        if name.upper() in ("LGM", "MPGM"):
            if idx:
                raise ValueError(f"{name} takes no index")
            return cls(name.upper())
        if name.lower() in ("shifted", "shiftedconstant", "shifted_constant"):
            return cls("shifted", int(idx) if idx else None)
        raise ValueError(f"unknown test space {text!r}")


LGM = TestSpaceKind("LGM")
MPGM = TestSpaceKind("MPGM")


@dataclass(frozen=True, eq=False)
class OperatorSet:
    basis: SpectralBasis
    test_kind: TestSpaceKind
    s: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mass_vector: np.ndarray

    @property
    def least_squares(self):
        return self.test_kind.least_squares

    def mass(self, coeffs):
        return np.asarray(coeffs) @ self.mass_vector


def _test_values(basis, test_kind, trial_values):
    """Test-function values from trial values at the same nodes."""
    if test_kind.variant == "LGM":
        return trial_values
    ones = np.ones((1, trial_values.shape[1]))
    if test_kind.variant == "MPGM":
        return np.vstack([trial_values, ones])
    phi = trial_values.copy()
    phi[test_kind.replaced(basis)] = 1.0
    return phi


def _check_rank(s, limit=COND_LIMIT):
    sv = np.linalg.svd(s, compute_uv=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > limit:
        cond = np.inf if sv[-1] == 0.0 else sv[0] / sv[-1]
        raise RankDeficient(f"mass matrix condition estimate {cond:.3e} exceeds {limit:.0e}")


def assemble(basis: SpectralBasis, test_kind: TestSpaceKind = LGM, quad_order=None) -> OperatorSet:
    """Assemble S, A, B, C and the mass vector with exact Gauss quadrature."""
    test_kind = TestSpaceKind.parse(test_kind)
    q = quad_order or basis.max_degree + 3
    rule = gauss_rule(q)
    d = basis.domain
    xl, wl = rule.mapped(*d.left)
    xr, wr = rule.mapped(*d.right)
    dim = test_kind.dimension(basis)
    mats = {name: np.zeros((dim, basis.size)) for name in "sabc"}
    mass = np.zeros(basis.size)
    for x, w, (val, d1, d2) in zip((xl, xr), (wl, wr), basis.pieces(xl, xr)):
        phi = _test_values(basis, test_kind, val) * w
        mats["s"] += phi @ val.T
        mats["a"] += phi @ (val + x * d1).T
        mats["b"] += phi @ d1.T
        mats["c"] += phi @ d2.T
        mass += val @ w
    _check_rank(mats["s"])
    for m in (*mats.values(), mass):
        m.setflags(write=False)
    return OperatorSet(basis, test_kind, mats["s"], mats["a"], mats["b"], mats["c"], mass)


def galerkin_solve(matrix, rhs, least_squares=False, method="normal", refine=2):
    """Solve ``matrix @ x = rhs``; least squares for tall systems.

    ``method="normal"`` solves the normal equations and then applies
    ``refine`` rounds of iterative refinement on the original residual; the
    plain normal equations lose cond(matrix)**2 * eps, which is already 1e-5
    at N = 14. ``"qr"`` uses an orthogonal factorization
    (``numpy.linalg.lstsq``).
    """
    if not least_squares:
        return np.linalg.solve(matrix, rhs)
    if method == "normal":
        gram = scipy.linalg.lu_factor(matrix.T @ matrix)
        x = scipy.linalg.lu_solve(gram, matrix.T @ rhs)
        for _ in range(refine):
            x = x + scipy.linalg.lu_solve(gram, matrix.T @ (rhs - matrix @ x))
        return x
    if method == "qr":
        return np.linalg.lstsq(matrix, rhs, rcond=None)[0]
    raise ValueError(f"unknown least-squares method {method!r}")


def load_vector(basis, test_kind, f, order=64, panels=8):
    """Inner products ``(f, phi_j)`` of a (non-polynomial) function with the test space."""
    d = basis.domain
    xl, wl = composite_rule(*d.left, order=order, panels=panels)
    xr, wr = composite_rule(*d.right, order=order, panels=panels)
    out = np.zeros(test_kind.dimension(basis))
    for x, w, (val, _, _) in zip((xl, xr), (wl, wr), basis.pieces(xl, xr)):
        fx = np.asarray(f(x), dtype=float) * w
        out += _test_values(basis, test_kind, val) @ fx
    return out


def project_initial(basis, test_kind, p0, ops=None, method="normal", order=64, panels=8):
    """Coefficients of the (least-squares) projection of ``p0`` onto the trial space."""
    test_kind = TestSpaceKind.parse(test_kind)
    if ops is None:
        ops = assemble(basis, test_kind)
    rhs = load_vector(basis, test_kind, p0, order=order, panels=panels)
    return galerkin_solve(ops.s, rhs, test_kind.least_squares, method)


def linear_evolution_matrix(ops: OperatorSet, method="normal"):
    """Evolution matrix K of the linear (a = 1, b = 0) semi-discrete system."""
    return galerkin_solve(ops.s, ops.a + ops.c, ops.least_squares, method)


def dump_operators(ops: OperatorSet, directory):
    """Write S, A, B, C and the mass vector as plain text (17 significant digits)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("s", "a", "b", "c"):
        np.savetxt(directory / f"{name}.txt", getattr(ops, name), fmt="%.16e")
    np.savetxt(directory / "mass_vector.txt", ops.mass_vector[None, :], fmt="%.16e")
    return directory
