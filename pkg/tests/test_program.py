import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sosmeans.poly import Monomial, VariableSpace, inner_power
from sosmeans.program import (GaussianMomentRhs, build_program, build_sdp, find_pseudoexpectation,
                              symmetric_basis, symmetric_multisets, verify_indicator_satisfiability)
from sosmeans.sdp import solve
from sosmeans.sos_core import MomentRelaxation, PseudoExpectation, pe_eval


def test_dimension_counting():
    prog = build_program(np.array([[0.5], [-1.0]]), 1.0, 4, 0.0)
    assert sum(1 for p in prog.equalities if p.degree == 2 and len(p.terms) == 2
               and any(m.degree == 2 and len(m) == 1 for m in p.terms)) == 2
    assert len(prog.equalities) == 3
    assert len(prog.scalar_inequalities) == 2
    assert len(prog.matrix_inequalities) == 1
    assert prog.matrix_inequalities[0].dim == 1


def test_gaussian_rhs_wick():
    np.testing.assert_allclose(GaussianMomentRhs(4, 1).matrix, [[3.0]])
    G = GaussianMomentRhs(4, 2).matrix
    # E x1^2 x2^2 = 1, E x1^4 = 3
    assert G[0, 0] == 3 and G[0, 3] == 1 and G[1, 1] == 1


def test_invalid_arguments():
    X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        build_program(X, 0.5, 6, 0.0)
    with pytest.raises(ValueError):
        build_program(X, 1.5, 4, 0.0)
    with pytest.raises(ValueError):
        build_program(X, 0.5, 4, 0.2)
    with pytest.raises(ValueError):
        build_program(np.zeros((0, 2)), 0.5, 4, 0.0)
    with pytest.raises(ValueError):
        build_program(X, 0.5, 4, 0.0).relaxation(2)


def test_symmetric_basis_orthonormal():
    for d, h in [(2, 2), (3, 2), (2, 4)]:
        P = symmetric_basis(d, h)
        np.testing.assert_allclose(P.T @ P, np.eye(len(symmetric_multisets(d, h))), atol=1e-12)


def _full_tensor_matrix(Mq, d, h):
    """Expand multiset-indexed M_{g,r} to the d^h x d^h tensor matrix."""
    ms = symmetric_multisets(d, h)
    pos = {m: k for k, m in enumerate(ms)}
    idx = list(itertools.product(range(d), repeat=h))

    def key(I):
        e = [0] * d
        for a in I:
            e[a] += 1
        return pos[tuple(e)]

    return np.array([[Mq[key(I), key(J)] for J in idx] for I in idx]), idx


@given(st.integers(0, 10 ** 6))
def test_general_explicit_identity_matches_expansion(seed):
    rng = np.random.default_rng(seed)
    n, d, t, alpha = 3, 2, 4, 1.0
    X = rng.standard_normal((n, d))
    prog = build_program(X, alpha, t, 0.0, variant="general_explicit")
    q = len(symmetric_multisets(d, t // 2))
    A = rng.standard_normal((q, q))
    Mq = A + A.T
    x = np.zeros(prog.space.count)
    x[:n] = rng.integers(0, 2, n)
    x[prog.mu_vars] = rng.standard_normal(d)
    for k, (g, r) in enumerate(prog.aux_pairs):
        x[prog.aux_vars[k]] = Mq[g, r]
    # independent expansion in u with the polynomial module
    U = VariableSpace(("u1", "u2"))
    u = [U.var(0), U.var(1)]
    full, idx = _full_tensor_matrix(Mq, d, t // 2)
    lhs = U.zero()
    for a, I in enumerate(idx):
        for b, J in enumerate(idx):
            mono = U.const(full[a, b])
            for c in I + J:
                mono = mono * u[c]
            lhs = lhs + mono
    rhs = (u[0] ** 2 + u[1] ** 2) ** (t // 2) * (2 * t ** (t / 2))
    for i in range(n):
        if x[i]:
            rhs = rhs - inner_power(X[i] - x[prog.mu_vars], u, t, space=U) * (1 / (alpha * n))
    diff = lhs - rhs
    eqs = {name: k for (kind, k), name in prog.names.items() if kind == "eq"}
    for e in symmetric_multisets(d, t):
        got = prog.equalities[eqs["identity" + "".join(map(str, e))]].eval(x)
        want = diff.coefficient(Monomial.from_exponents(e))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_boolean_relaxation_interval():
    S = VariableSpace(("w",))
    w = S.var(0)
    rel = MomentRelaxation(S, 2, equalities=[w * w - w])
    mono = Monomial(((0, 1),))
    hi = solve(rel.to_sdp({mono: 1.0}, mode="minimize"))
    lo = solve(rel.to_sdp({mono: -1.0}, mode="minimize"))
    assert rel.extract(hi)[mono] == pytest.approx(1.0, abs=1e-6)
    assert rel.extract(lo)[mono] == pytest.approx(0.0, abs=1e-6)


def test_point_mass_at_solution_is_feasible():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 2))
    for S in itertools.combinations(range(6), 4):
        prog = build_program(X, len(S) / 6, 4, 0.0)
        x = prog.solution_point(S)
        ev = prog.evaluate_point(x)
        if ev["min_matrix_eigenvalue"] >= 0:
            break
    assert ev["max_equality_residual"] <= 1e-9 and ev["min_inequality"] >= 0
    msdp = build_sdp(prog)
    pE = PseudoExpectation.point_mass(prog.space, x, msdp.relaxation.degree, boolean=prog.boolean)
    assert msdp.relaxation.evaluate(pE).passed


def test_satisfiable_instance_solves_and_moment_bound_holds():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((16, 2))
    t, alpha = 4, 1.0
    prog = build_program(X, alpha, t, 1e-3)
    pE, sol, msdp = find_pseudoexpectation(prog)
    assert sol.status == "optimal"
    assert msdp.relaxation.evaluate(pE).passed
    # pE[(1/an) sum w_i <X_i - mu, c>^t] <= 2 t^{t/2} for random unit c
    S = prog.space
    w = [S.var(i) for i in prog.w_vars]
    mu = [S.var(v) for v in prog.mu_vars]
    for c in rng.standard_normal((20, 2)):
        c /= np.linalg.norm(c)
        acc = S.zero()
        for i in range(16):
            lin = S.const(float(X[i] @ c)) - inner_power(mu, c, 1, space=S)
            acc = acc + w[i] * lin ** t
        assert pe_eval(pE, acc) / (alpha * 16) <= 2 * t ** (t / 2) + 1e-6


def test_verify_indicator_examples():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 2))
    assert verify_indicator_satisfiability(X, range(40), 4, 0.1).passed
    Y = X.copy()
    Y[0] = [100.0, 0.0]
    rep = verify_indicator_satisfiability(Y, range(40), 4, 0.1)
    assert not rep.passed and rep.slack_min_eigenvalue < 0
    one = verify_indicator_satisfiability(np.array([[3.0, -1.0]]), [0], 4, 0.0)
    assert one.passed and one.slack_min_eigenvalue >= 0


def test_program_json_roundtrip():
    prog = build_program(np.arange(6.0).reshape(3, 2), 1.0, 4, 0.0)
    js = prog.to_json()
    assert js["n"] == 3 and js["d"] == 2 and js["t"] == 4
