import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from nnlif.basis import (
    Domain1D,
    SpectralBasis,
    boundary_lambdas,
    eval_solution,
    gauss_rule,
    legendre_eval,
    w1_member,
    w2_member,
)
from nnlif.errors import SideRequired
from oracles import sympy_basis

X = sp.Symbol("x")


def sympy_legendre(k, x):
    p = sp.legendre(k, X)
    return tuple(float(sp.diff(p, X, m).subs(X, sp.Rational(x))) for m in range(3))


@pytest.mark.parametrize(
    "k, x, expected",
    [
        (0, 0.3, (1.0, 0.0, 0.0)),
        (2, 0.0, (-0.5, 0.0, 3.0)),
        # L_4'(1) = k(k+1)/2 = 10; L_4''(1) from the symbolic oracle is 45
        (4, 1.0, (1.0, 10.0, sympy_legendre(4, 1)[2])),
    ],
)
def test_legendre_examples(k, x, expected):
    got = legendre_eval(k, x)
    np.testing.assert_allclose(got, expected, atol=1e-14)


@pytest.mark.parametrize("k", [0, 1, 3, 7, 12, 20])
@pytest.mark.parametrize("x", ["-1", "-7/10", "0", "1/3", "1"])
def test_legendre_matches_symbolic(k, x):
    expected = sympy_legendre(k, sp.Rational(x))
    got = legendre_eval(k, float(sp.Rational(x)))
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-10)


def test_legendre_endpoints_exact():
    for k in range(30):
        assert legendre_eval(k, 1.0)[0] == 1.0
        assert legendre_eval(k, -1.0)[0] == (-1.0) ** k


def test_w2_member_examples():
    assert w2_member(0, (-1, 1), 1.0)[0] == pytest.approx(0.0, abs=1e-15)
    assert w2_member(0, (-1, 1), 0.0)[0] == pytest.approx(1.875, abs=1e-14)
    val, d1, _ = w2_member(1, (0, 1), 0.0)
    assert val == pytest.approx(0.0, abs=1e-14)
    assert d1 == pytest.approx(0.0, abs=1e-13)


def test_w2_member_zero_outside():
    v = np.array([-3.0, 1.5, 2.5])
    for out in w2_member(2, (0.0, 1.0), v):
        np.testing.assert_array_equal(out, 0.0)


def test_w2_member_chain_rule():
    # finite-difference oracle on a stretched interval
    a, b, k, v, h = -4.0, 1.0, 3, -1.3, 1e-5
    val, d1, d2 = w2_member(k, (a, b), v)
    fp = w2_member(k, (a, b), v + h)[0]
    fm = w2_member(k, (a, b), v - h)[0]
    assert d1 == pytest.approx((fp - fm) / (2 * h), rel=1e-8)
    assert d2 == pytest.approx((fp - 2 * val + fm) / h**2, rel=1e-4)


def hermite_cubic(a, b, fa, fb, da, db):
    """Cubic on [a, b] with prescribed end values and slopes (linear solve)."""
    m = np.array(
        [
            [a**3, a**2, a, 1.0],
            [b**3, b**2, b, 1.0],
            [3 * a**2, 2 * a, 1.0, 0.0],
            [3 * b**2, 2 * b, 1.0, 0.0],
        ]
    )
    return np.linalg.solve(m, [fa, fb, da, db])


HERMITE_DATA = {
    # idx: ((left fa, fb, da, db), (right fa, fb, da, db))
    1: ((0, 1, 0, 0), (1, 0, 0, 0)),
    2: ((0, 0, 0, 1), (0, 0, 1, 0)),
    3: ((0, 0, 0, 0), (0, 0, 1, 1)),
}


@pytest.mark.parametrize("idx", [1, 2, 3])
@pytest.mark.parametrize("dom", [(-1.0, 0.0, 1.0), (-4.0, 1.0, 2.0), (-1.0, 1.0, 2.0)])
def test_w1_member_matches_hermite_oracle(idx, dom):
    d = Domain1D(*dom)
    lc = hermite_cubic(d.v_min, d.v_r, *HERMITE_DATA[idx][0])
    rc = hermite_cubic(d.v_r, d.v_f, *HERMITE_DATA[idx][1])
    vl = np.linspace(d.v_min, d.v_r, 7)[:-1]
    vr = np.linspace(d.v_r, d.v_f, 7)[1:]
    np.testing.assert_allclose(w1_member(idx, d, vl)[0], np.polyval(lc, vl), atol=1e-12)
    np.testing.assert_allclose(w1_member(idx, d, vr)[0], np.polyval(rc, vr), atol=1e-12)
    np.testing.assert_allclose(
        w1_member(idx, d, vr)[1], np.polyval(np.polyder(rc), vr), atol=1e-11
    )


def test_w1_member_examples():
    d = Domain1D(-1.0, 0.0, 1.0)
    assert w1_member(1, d, 0.0)[0] == pytest.approx(1.0)
    assert w1_member(1, d, -0.5)[0] == pytest.approx(0.5, abs=1e-15)
    assert w1_member(3, d, -0.5) == (0.0, 0.0, 0.0)


def test_w1_boundary_table():
    d = Domain1D(-4.0, 1.0, 2.0)
    L, R = "left", "right"
    g = lambda i, v, side=None: w1_member(i, d, v, side)
    assert g(1, d.v_r)[0] == pytest.approx(1.0)
    for v, side in [(d.v_min, None), (d.v_r, L), (d.v_r, R), (d.v_f, None)]:
        assert g(1, v, side)[1] == pytest.approx(0.0, abs=1e-13)
    assert g(2, d.v_r, L)[1] == pytest.approx(1.0)
    assert g(2, d.v_r, R)[1] == pytest.approx(1.0)
    assert g(2, d.v_f)[1] == pytest.approx(0.0, abs=1e-13)
    for v in (d.v_min, d.v_r, d.v_f):
        assert g(2, v)[0] == pytest.approx(0.0, abs=1e-13)
    assert g(3, d.v_r, R)[1] == pytest.approx(1.0)
    assert g(3, d.v_f)[1] == pytest.approx(1.0)
    assert g(3, d.v_r)[0] == pytest.approx(0.0, abs=1e-13)
    assert g(3, d.v_f)[0] == pytest.approx(0.0, abs=1e-13)


def test_eval_solution_examples():
    d = Domain1D(-4.0, 1.0, 2.0)
    basis = SpectralBasis(d, 5)
    zero = np.zeros(basis.size)
    assert eval_solution(basis, zero, -2.0) == 0.0
    assert eval_solution(basis, zero, 1.5, deriv=2) == 0.0
    e = np.zeros(basis.size)
    e[basis.g_index[0]] = 1.0
    assert eval_solution(basis, e, d.v_r) == pytest.approx(1.0)
    c = np.zeros(basis.size)
    c[basis.g_index[1]] = 0.3
    c[basis.g_index[2]] = -0.2
    assert eval_solution(basis, c, d.v_r, 1, side="right") == pytest.approx(0.1)
    with pytest.raises(SideRequired):
        eval_solution(basis, c, d.v_r, 1)


def test_diagnostic_mode_n0():
    d = Domain1D(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        SpectralBasis(d, 0)
    assert SpectralBasis(d, 0, diagnostic=True).size == 3


def test_gauss_rule_examples():
    r1 = gauss_rule(1)
    np.testing.assert_allclose(r1.nodes, [0.0], atol=1e-15)
    np.testing.assert_allclose(r1.weights, [2.0])
    r2 = gauss_rule(2)
    np.testing.assert_allclose(np.sort(r2.nodes), [-1 / np.sqrt(3), 1 / np.sqrt(3)])
    np.testing.assert_allclose(r2.weights, [1.0, 1.0])
    assert r2.weights @ r2.nodes**2 == pytest.approx(2 / 3)
    assert r2.weights @ r2.nodes**3 == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("order", [1, 2, 5, 17, 40])
def test_gauss_rule_exactness(order):
    r = gauss_rule(order)
    assert abs(r.weights.sum() - 2.0) < 1e-14
    assert abs(r.weights @ r.nodes ** (2 * order - 1)) < 1e-14
    deg = 2 * order - 2
    assert r.weights @ r.nodes**deg == pytest.approx(2.0 / (deg + 1), rel=1e-13)


domains = st.tuples(
    st.floats(-6.0, 0.0), st.floats(0.2, 3.0), st.floats(0.2, 3.0)
).map(lambda t: Domain1D(t[0], t[0] + t[1], t[0] + t[1] + t[2]))


@settings(max_examples=40, deadline=None)
@given(dom=domains, n=st.integers(1, 24))
def test_endpoint_conditions(dom, n):
    basis = SpectralBasis(dom, n)
    for v in (dom.v_min, dom.v_f):
        assert np.abs(basis.evaluate(v)).max() < 1e-12
    assert np.abs(basis.evaluate(dom.v_min, 1)).max() < 1e-12 * max(1.0, n**2)


@settings(max_examples=40, deadline=None)
@given(dom=domains, n=st.integers(1, 24), seed=st.integers(0, 2**31))
def test_jump_and_continuity(dom, n, seed):
    basis = SpectralBasis(dom, n)
    c = np.random.default_rng(seed).standard_normal(basis.size)
    l1, l2, l3 = boundary_lambdas(basis, c)
    left = eval_solution(basis, c, dom.v_r, 1, side="left")
    right = eval_solution(basis, c, dom.v_r, 1, side="right")
    at_f = eval_solution(basis, c, dom.v_f, 1)
    scale = max(1.0, np.abs(c).sum())
    assert abs(left - l2) < 1e-12 * scale * n**2
    assert abs((left - right) + l3) < 1e-12 * scale * n**2
    assert abs(at_f - l3) < 1e-12 * scale * n**2
    pl = eval_solution(basis, c, dom.v_r, 0, side="left")
    pr = eval_solution(basis, c, dom.v_r, 0, side="right")
    assert abs(pl - l1) < 1e-12 * scale
    assert abs(pr - l1) < 1e-12 * scale


@pytest.mark.parametrize("n", [2, 7, 16])
def test_w2_bandwidth(n):
    d = Domain1D(-4.0, 1.0, 2.0)
    basis = SpectralBasis(d, n)
    x, w = gauss_rule(n + 6).mapped(*d.left)
    (lv, _, _), _ = basis.pieces(x, x)
    gram = (lv[:n] * w) @ lv[:n].T
    for j in range(n):
        for k in range(n):
            if abs(j - k) not in (0, 2, 4):
                assert abs(gram[j, k]) < 1e-12


@pytest.mark.parametrize("n", [1, 3])
def test_quadrature_exact_on_products(n):
    dom = ("-4", "1", "2")
    v, (vm, vr, vf), members = sympy_basis(dom, n)
    basis = SpectralBasis(Domain1D(-4.0, 1.0, 2.0), n)
    q = n + 5  # 2q - 1 >= 2(n + 4) + 1
    (lv, _, _), (rv, _, _) = basis.pieces(
        gauss_rule(q).mapped(-4.0, 1.0)[0], gauss_rule(q).mapped(1.0, 2.0)[0]
    )
    xl, wl = gauss_rule(q).mapped(-4.0, 1.0)
    xr, wr = gauss_rule(q).mapped(1.0, 2.0)
    for j, (pj_l, pj_r) in enumerate(members):
        for k, (pk_l, pk_r) in enumerate(members):
            for weight in (1, v):
                exact = sp.integrate(weight * pj_l * pk_l, (v, vm, vr)) + sp.integrate(
                    weight * pj_r * pk_r, (v, vr, vf)
                )
                wf_l = wl * (xl if weight is v else 1.0)
                wf_r = wr * (xr if weight is v else 1.0)
                num = (lv[j] * lv[k]) @ wf_l + (rv[j] * rv[k]) @ wf_r
                assert num == pytest.approx(float(exact), rel=1e-13, abs=1e-13)
