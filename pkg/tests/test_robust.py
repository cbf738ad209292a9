import numpy as np
import pytest

from sosmeans.datagen import CORRUPTED, DistributionSpec, MixtureSpec, corrupt, sample_mixture
from sosmeans.robust import (InfeasibleRelaxation, check_conditions_e, estimate_mean, naive_prune,
                             prune_radius)


def gaussian_data(n, seed, d=2):
    return sample_mixture(MixtureSpec.single(DistributionSpec("gaussian", np.zeros(d))), n, seed)


def test_prune_keeps_clean_gaussians():
    kept_all = sum(naive_prune(gaussian_data(60, s).samples).size == 60 for s in range(100))
    assert kept_all >= 99


def test_prune_removes_far_point():
    X = gaussian_data(60, 0).samples
    X[5] = [1e6, 0.0]
    kept = naive_prune(X, 0.05)
    assert 5 not in kept and kept.size == 59


def test_prune_single_point_and_bad_eps():
    np.testing.assert_array_equal(naive_prune(np.array([[4.0, 2.0]])), [0])
    assert prune_radius(np.array([[4.0, 2.0]])) == 0.0
    with pytest.raises(ValueError):
        naive_prune(np.zeros((3, 2)), 0.5)


def test_estimate_mean_clean_is_close_to_empirical():
    X = gaussian_data(30, 1).samples
    est = estimate_mean(X, 0.0)
    assert np.linalg.norm(est.mean - X.mean(axis=0)) <= 2 / np.sqrt(30)
    d = est.diagnostics
    assert d["status"] == "optimal"
    assert d["normalization_residual"] <= 1e-7
    assert d["positivity_margin"] >= -1e-6
    assert d["cauchy_schwarz_gap"] >= -1e-6


def test_estimate_mean_beats_naive_mean():
    ds = corrupt(gaussian_data(40, 2), 0.1, "mean_shift", 2, shift=[10.0, 0.0])
    est = estimate_mean(ds.samples, 0.1)
    err = np.linalg.norm(est.mean - ds.true_mean)
    naive = np.linalg.norm(ds.samples.mean(axis=0) - ds.true_mean)
    assert err <= 1.0 and err <= 0.5 * naive


def test_equivariance():
    X = gaussian_data(20, 3).samples
    base = estimate_mean(X, 0.1).mean
    v = np.array([3.0, -7.0])
    np.testing.assert_allclose(estimate_mean(X + v, 0.1).mean, base + v, atol=1e-6)
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    np.testing.assert_allclose(estimate_mean(X @ Q.T, 0.1).mean, Q @ base, atol=1e-6)


def test_estimate_mean_validation():
    X = gaussian_data(10, 0).samples
    with pytest.raises(ValueError):
        estimate_mean(X, 0.3)
    with pytest.raises(ValueError):
        estimate_mean(X, -0.1)
    with pytest.raises(ValueError):
        estimate_mean(np.zeros((0, 2)), 0.1)
    with pytest.raises(ValueError):
        estimate_mean(np.array([[np.nan, 1.0]]), 0.1)


def test_infeasible_error_carries_diagnostics():
    exc = InfeasibleRelaxation("x", {"status": "infeasible"})
    assert exc.diagnostics["status"] == "infeasible"


def test_conditions_clean_gaussian():
    # the fixed 0.1 slack on the moment tensor needs n around 1e5 at d = 2
    passes = sum(check_conditions_e(gaussian_data(100_000, s)).passed for s in range(10))
    assert passes >= 9


def test_conditions_heavy_tail_point_fails_e4():
    ds = gaussian_data(200, 0)
    ds.samples[0] = ds.clean_copies[0] = [12.0, 0.0]
    rep = check_conditions_e(ds)
    assert rep.e4 is False
    assert rep.details["e4_margin"] < 0


def test_conditions_vacuous_without_good_points():
    ds = gaussian_data(5, 0)
    ds.labels[:] = CORRUPTED
    rep = check_conditions_e(ds)
    assert rep.vacuous and rep.e3 is None and rep.e4 is None


def test_breakdown_terminates():
    ds = corrupt(gaussian_data(20, 4), 0.4, "mean_shift", 4)
    try:
        est = estimate_mean(ds.samples, 0.4, eps_max=0.5)
        assert np.all(np.isfinite(est.mean))
    except InfeasibleRelaxation as exc:
        assert "status" in exc.diagnostics
