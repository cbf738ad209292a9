import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sosmeans.poly import ONE, Monomial, Poly, PolyMatrix, VariableSpace
from sosmeans.program import build_program, gaussian_moment
from sosmeans.sos_core import (DegreeOverflow, PseudoExpectation, certify_explicit_boundedness,
                               check_satisfies, localizing_matrix, matrix_localizing, moment_matrix,
                               pe_eval, sos_certify)

X1 = VariableSpace(("x",))
U2 = VariableSpace(("u1", "u2"))
U3 = VariableSpace(("u1", "u2", "u3"))


def test_moment_matrix_examples():
    pm = PseudoExpectation.point_mass(X1, [2.0], 2)
    np.testing.assert_allclose(moment_matrix(pm, 1).entries, [[1, 2], [2, 4]])
    sym = PseudoExpectation.from_distribution(X1, [[-1.0], [1.0]], 2)
    np.testing.assert_allclose(moment_matrix(sym, 1).entries, np.eye(2))
    coin = PseudoExpectation.from_distribution(X1, [[0.0], [1.0]], 2)
    np.testing.assert_allclose(moment_matrix(coin, 1).entries, [[1, .5], [.5, .5]])


def test_localizing_examples():
    x = X1.var(0)
    pE = PseudoExpectation.from_distribution(X1, [[0.5], [3.0]], 4)
    np.testing.assert_allclose(localizing_matrix(pE, X1.const(1), 1).entries, moment_matrix(pE, 1).entries)
    at3 = PseudoExpectation.point_mass(X1, [3.0], 2)
    np.testing.assert_allclose(localizing_matrix(at3, x - 1, 0).entries, [[2.0]])
    at0 = PseudoExpectation.point_mass(X1, [0.0], 2)
    L = localizing_matrix(at0, x - 1, 0)
    np.testing.assert_allclose(L.entries, [[-1.0]])
    assert L.min_eigenvalue() < 0


def test_matrix_localizing_structure():
    x = X1.var(0)
    pE = PseudoExpectation.from_distribution(X1, [[0.5], [2.0], [-1.0]], 4)
    ident = PolyMatrix(X1, [[X1.const(1)]])
    np.testing.assert_allclose(matrix_localizing(pE, ident, 1), moment_matrix(pE, 1).entries)
    g1, g2 = x + 2, 3 - x
    B = matrix_localizing(pE, PolyMatrix.diag([g1, g2]), 1)
    L1 = localizing_matrix(pE, g1, 1).entries
    L2 = localizing_matrix(pE, g2, 1).entries
    # rows ordered (monomial, matrix row): reorder to (matrix row, monomial)
    perm = [0, 2, 1, 3]
    np.testing.assert_allclose(B[np.ix_(perm, perm)], np.block([[L1, np.zeros((2, 2))],
                                                               [np.zeros((2, 2)), L2]]))


def test_pe_eval_examples():
    pt = np.array([0.3, -1.2])
    pE = PseudoExpectation.point_mass(U2, pt, 4)
    p = U2.var(0) ** 3 * U2.var(1) - 2 * U2.var(1) + 7
    assert pe_eval(pE, U2.const(1)) == 1
    assert pe_eval(pE, p) == pytest.approx(p.eval(pt))
    with pytest.raises(DegreeOverflow):
        pe_eval(pE, U2.var(0) ** 6)


def test_sos_examples():
    sq = sum((v * v for v in U3.variables()), U3.zero())
    cert = sos_certify(sq, 2)
    assert cert
    assert cert.residual <= 1e-6
    np.testing.assert_allclose(cert.gram, np.eye(3), atol=1e-6)
    assert not sos_certify(U2.var(0) * U2.var(1), 2)


def test_motzkin_not_sos():
    u1, u2 = U2.var(0), U2.var(1)
    motzkin = u1 ** 4 * u2 ** 2 + u1 ** 2 * u2 ** 4 - 3 * u1 ** 2 * u2 ** 2 + 1
    # nonnegative: check on a grid (AM-GM), yet no Gram certificate exists
    g = np.linspace(-2, 2, 81)
    vals = [motzkin.eval((a, b)) for a in g for b in g]
    assert min(vals) >= -1e-12
    assert not sos_certify(motzkin, 6)


def _gauss(theta):
    return gaussian_moment(theta)


def _rademacher(theta):
    return float(all(a % 2 == 0 for a in theta))


def test_explicit_boundedness_gaussian():
    rep = certify_explicit_boundedness(_gauss, 2, 4)
    assert [r["s"] for r in rep] == [2, 4]
    assert all(r["sos"] and r["residual"] <= 1e-6 for r in rep)
    sp = rep[0]["polynomial"].space
    sq = sp.var(0) ** 2 + sp.var(1) ** 2
    assert rep[0]["polynomial"].approx_equal(sq, 1e-12)
    assert rep[1]["polynomial"].approx_equal(13 * sq ** 2, 1e-9)


def test_explicit_boundedness_rademacher_enumeration():
    # oracle from direct enumeration over {-1, +1}^2
    def enum(theta):
        return float(np.mean([np.prod(np.power(s, theta)) for s in itertools.product([-1, 1], repeat=2)]))

    for theta in itertools.product(range(5), repeat=2):
        assert enum(theta) == _rademacher(theta)
    rep = certify_explicit_boundedness(enum, 2, 4)
    assert all(r["sos"] for r in rep)


def test_explicit_boundedness_fails_for_heavy_moments():
    # E<X,u>^4 = 100 ||u||^4 exceeds 16 ||u||^4
    rep = certify_explicit_boundedness(lambda th: 100.0 if th in ((4,),) else float(th == (2,)), 1, 4)
    assert rep[0]["sos"] and not rep[1]["sos"]


coefs = st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6)


@given(coefs, coefs)
def test_sum_of_two_squares_is_certified(a, b):
    basis = [ONE] + [Monomial(((i, 1),)) for i in range(2)] + [
        Monomial(((0, 2),)), Monomial(((0, 1), (1, 1))), Monomial(((1, 2),))]
    p = Poly(U2, dict(zip(basis, a))) ** 2 + Poly(U2, dict(zip(basis, b))) ** 2
    if p.is_zero:
        return
    cert = sos_certify(p, 4)
    assert cert
    rng = np.random.default_rng(0)
    for pt in rng.standard_normal((5, 2)):
        assert cert.evaluate_gram(pt) == pytest.approx(p.eval(pt), rel=1e-5, abs=1e-5 * (1 + p.max_abs_coef()))


@given(st.lists(st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=2), min_size=1, max_size=6))
def test_empirical_moment_matrices_psd(points):
    pE = PseudoExpectation.from_distribution(U2, np.array(points), 4)
    M = moment_matrix(pE, 2).entries
    assert np.linalg.eigvalsh(M)[0] >= -1e-8 * max(1.0, np.abs(M).max())


def test_check_satisfies_point_mass_and_normalization():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((4, 1))
    prog = build_program(X, 1.0, 4, 0.0)
    x = prog.solution_point(range(4))
    rel = prog.relaxation()
    pE = PseudoExpectation.point_mass(prog.space, x, rel.degree, boolean=prog.boolean)
    rep = check_satisfies(pE, prog, relaxation=rel)
    assert rep.passed
    assert rep.max_equality_residual <= 1e-9
    mom = {m: pE[m] for m in rel.moments}
    mom[ONE] = 2.0
    bad = PseudoExpectation(prog.space, rel.degree, mom, boolean=prog.boolean)
    rep = check_satisfies(bad, prog, relaxation=rel)
    assert not rep.passed
    assert rep.normalization_residual == pytest.approx(1.0)
