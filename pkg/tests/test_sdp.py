import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from sosmeans.sdp import (SdpProblem, SolverSettings, random_feasible_sdp, random_infeasible_sdp,
                          read_sdpa, selftest, solve, solve_min_frobenius, write_sdpa)


def one_by_one(rhs, mode="minimize"):
    return SdpProblem.from_matrices([1], [({0: [[1.0]]}, rhs)], {0: [[1.0]]}, mode=mode)


def test_scalar_equality():
    sol = solve(one_by_one(1.0))
    assert sol.status == "optimal"
    assert sol.primal[0][0, 0] == pytest.approx(1.0, abs=1e-7)


def test_trace_with_fixed_offdiagonal():
    # min tr X s.t. X12 = 1: X = [[a,1],[1,b]] needs ab >= 1, so a + b >= 2
    E = np.array([[0, 0.5], [0.5, 0]])
    prob = SdpProblem.from_matrices([2], [({0: E}, 1.0)], {0: np.eye(2)})
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)
    np.testing.assert_allclose(sol.primal[0], np.ones((2, 2)), atol=1e-4)
    assert sol.gap <= 1e-7


def test_negative_scalar_is_infeasible():
    assert solve(one_by_one(-1.0)).status == "infeasible"
    assert solve(one_by_one(-1.0, mode="feasibility")).status == "infeasible"


def test_min_frobenius_fixed_matrix():
    X = np.array([[2.0, 0.5], [0.5, 1.0]])
    cons = []
    for i, j in [(0, 0), (0, 1), (1, 1)]:
        E = np.zeros((2, 2))
        E[i, j] = E[j, i] = 1.0 if i == j else 0.5
        cons.append(({0: E}, X[i, j]))
    sol = solve_min_frobenius(SdpProblem.from_matrices([2], cons), 0)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.primal[0], X, atol=1e-6)
    assert sol.primal_objective == pytest.approx(np.linalg.norm(X), abs=1e-6)


def test_min_frobenius_with_slack():
    # X - s = 2 with X, s >= 0 (two 1x1 blocks); smallest |X| is 2
    prob = SdpProblem.from_matrices([1, 1], [({0: [[1.0]], 1: [[-1.0]]}, 2.0)])
    sol = solve_min_frobenius(prob, 0)
    assert sol.primal[0][0, 0] == pytest.approx(2.0, abs=1e-6)


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SdpProblem.from_matrices([2], [({0: np.eye(3)}, 1.0)])
    with pytest.raises(ValueError):
        SdpProblem.from_matrices([2], [({0: np.array([[0, 1], [0, 0.0]])}, 1.0)])
    with pytest.raises(ValueError):
        SdpProblem([0], [np.zeros((1, 0))], [1.0])


@given(st.integers(0, 2 ** 31 - 1))
def test_solution_invariants(seed):
    prob = random_feasible_sdp(seed, max_blocks=2, max_dim=6, max_constraints=12)
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.min_eigenvalue("primal") >= -1e-8
    assert sol.min_eigenvalue("dual") >= -1e-8
    res = np.abs(sum(A @ X.ravel() for A, X in zip(prob.A, sol.primal)) - prob.b)
    assert res.max() <= 1e-6 * (1 + np.abs(prob.b).max())
    assert sol.gap <= 1e-7


@given(st.integers(0, 2 ** 31 - 1))
@example(19855)  # more constraints than degrees of freedom
def test_infeasible_instances_detected(seed):
    assert solve(random_infeasible_sdp(seed, max_dim=6, max_constraints=8)).status == "infeasible"


@given(st.integers(0, 2 ** 31 - 1))
def test_sdpa_roundtrip(tmp_path_factory, seed):
    prob = random_feasible_sdp(seed, max_blocks=3, max_dim=5, max_constraints=8)
    path = tmp_path_factory.mktemp("sdpa") / "p.dat-s"
    write_sdpa(prob, path, comment="random instance")
    back = read_sdpa(path)
    assert back.block_dims == prob.block_dims
    np.testing.assert_array_equal(back.b, prob.b)
    for A0, A1, C0, C1 in zip(prob.A, back.A, prob.C, back.C):
        np.testing.assert_array_equal(A0.toarray(), A1.toarray())
        np.testing.assert_array_equal(C0, C1)


def test_read_sdpa_handwritten(tmp_path):
    # max -x11 - x22 s.t. x12 = 1 in SDPA's sign convention
    path = tmp_path / "h.dat-s"
    path.write_text('"hand written\n1 =mdim\n1 =nblocks\n{2}\n{1.0}\n'
                    "0 1 1 1 -1.0\n0 1 2 2 -1.0\n1 1 1 2 0.5\n")
    sol = solve(read_sdpa(path))
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)


def test_against_clarabel():
    cp = pytest.importorskip("cvxpy")
    for seed in range(5):
        prob = random_feasible_sdp(seed, max_blocks=2, max_dim=8, max_constraints=15)
        Xs = [cp.Variable((n, n), symmetric=True) for n in prob.block_dims]
        cons = [X >> 0 for X in Xs]
        for i in range(prob.num_constraints):
            cons.append(sum(cp.trace(prob.constraint_matrix(i, bi) @ X) for bi, X in enumerate(Xs))
                        == prob.b[i])
        obj = cp.Minimize(sum(cp.trace(C @ X) for C, X in zip(prob.C, Xs)))
        ref = cp.Problem(obj, cons).solve(solver="CLARABEL")
        sol = solve(prob)
        assert sol.primal_objective == pytest.approx(ref, rel=1e-5, abs=1e-5)


def test_selftest_small():
    rep = selftest(8, 3, seed=11)
    assert rep["feasible_solved"] == 8
    assert rep["max_gap"] <= 1e-7
    assert rep["infeasible_detected"] == 3


def test_max_iters_status():
    prob = random_feasible_sdp(3, max_dim=10)
    sol = solve(prob, SolverSettings(max_iters=2))
    assert sol.status == "max_iters"
