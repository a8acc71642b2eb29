"""Independent exact-arithmetic oracles shared by the test modules."""
import sympy as sp


def sympy_basis(dom, n):
    """Piecewise polynomials (left, right) for every basis member, exact rationals."""
    v = sp.Symbol("v")
    vm, vr, vf = (sp.Rational(x) for x in dom)
    out = []
    for a, b, side in ((vm, vr, 0), (vr, vf, 1)):
        x = (2 * v - (a + b)) / (b - a)
        for k in range(n):
            beta = -sp.Rational(4 * k + 10, 2 * k + 7)
            eta = sp.Rational(2 * k + 3, 2 * k + 7)
            h = sp.expand(sp.legendre(k, x) + beta * sp.legendre(k + 2, x) + eta * sp.legendre(k + 4, x))
            out.append((h, 0) if side == 0 else (0, h))
    dl, dr = vm - vr, vf - vr
    g1 = (
        2 / dl**3 * v**3 - 3 * (vm + vr) / dl**3 * v**2 + 6 * vm * vr / dl**3 * v - vm**2 * (3 * vr - vm) / dl**3,
        2 / dr**3 * v**3 - 3 * (vf + vr) / dr**3 * v**2 + 6 * vf * vr / dr**3 * v - vf**2 * (3 * vr - vf) / dr**3,
    )
    g2 = (
        v**3 / dl**2 - (2 * vm + vr) / dl**2 * v**2 + vm * (vm + 2 * vr) / dl**2 * v - vm**2 * vr / dl**2,
        v**3 / dr**2 - (2 * vf + vr) / dr**2 * v**2 + vf * (vf + 2 * vr) / dr**2 * v - vf**2 * vr / dr**2,
    )
    g3 = (
        sp.Integer(0),
        2 / dr**2 * v**3 - 3 * (vf + vr) / dr**2 * v**2 + ((vf + vr) ** 2 + 2 * vr * vf) / dr**2 * v - vf * vr * (vr + vf) / dr**2,
    )
    return v, (vm, vr, vf), out + [g1, g2, g3]


def exact_operators(dom, n, variant="LGM", replaced=None):
    """S, A, B, C as sympy rational matrices by piecewise symbolic integration."""
    v, (vm, vr, vf), members = sympy_basis(dom, n)
    one = (sp.Integer(1), sp.Integer(1))
    if variant == "LGM":
        tests = list(members)
    elif variant == "MPGM":
        tests = list(members) + [one]
    else:
        tests = list(members)
        tests[replaced] = one

    def inner(f, g):
        return sp.integrate(sp.expand(f[0] * g[0]), (v, vm, vr)) + sp.integrate(sp.expand(f[1] * g[1]), (v, vr, vf))

    def apply(op):
        return [tuple(op(piece) for piece in m) for m in members]

    trial = {
        "s": members,
        "a": apply(lambda p: sp.diff(v * p, v)),
        "b": apply(lambda p: sp.diff(p, v)),
        "c": apply(lambda p: sp.diff(p, v, 2)),
    }
    out = {name: sp.Matrix(len(tests), len(members), lambda j, k: inner(fs[k], tests[j]))
           for name, fs in trial.items()}
    out["mass"] = [inner(m, one) for m in members]
    return out


def to_float(matrix):
    import numpy as np

    return np.array(matrix.tolist(), dtype=float)


def exact_max_real_eigenvalue(dom, n, variant="LGM", digits=50):
    """Largest real part of eig(K), K formed in rational arithmetic."""
    import mpmath as mp

    ops = exact_operators(dom, n, variant)
    s, ac = ops["s"], ops["a"] + ops["c"]
    if variant == "MPGM":
        k = (s.T * s).LUsolve(s.T * ac)
    else:
        k = s.LUsolve(ac)
    with mp.workdps(digits):
        ev = mp.eig(mp.matrix(k.evalf(digits).tolist()))[0]
        return float(max(mp.re(e) for e in ev))
