import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sosmeans.datagen import (CORRUPTED, DatasetWithTruth, DistributionSpec, MixtureSpec, corrupt,
                              population_moment_tensor, read_samples_csv, sample_balanced,
                              sample_mixture)
from sosmeans.sos_core import certify_explicit_boundedness


def _spec(kind, d, seed=0):
    if kind == "rotated_product":
        return DistributionSpec.random_rotation(np.zeros(d), seed=seed)
    return DistributionSpec(kind, np.zeros(d))


def test_degenerate_weights():
    spec = MixtureSpec.collinear(2, 2, 5.0, weights=[1.0, 0.0])
    assert np.all(sample_mixture(spec, 50, 3).labels == 0)


def test_fixed_seed_is_bit_identical():
    spec = MixtureSpec.collinear(3, 2, 4.0, kind="product_uniform")
    a, b = sample_mixture(spec, 40, 7), sample_mixture(spec, 40, 7)
    assert a.samples.tobytes() == b.samples.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    c = corrupt(a, 0.2, "far_outliers", 1)
    d = corrupt(b, 0.2, "far_outliers", 1)
    assert c.samples.tobytes() == d.samples.tobytes()


def test_eps_zero_only_shuffles():
    ds = sample_mixture(MixtureSpec.single(_spec("gaussian", 2)), 30, 0)
    out = corrupt(ds, 0.0, "mean_shift", 5)
    assert not out.corrupted.any()
    key = lambda X: sorted(map(tuple, X))
    assert key(out.samples) == key(ds.samples)


def test_mean_shift_counts():
    ds = sample_mixture(MixtureSpec.single(_spec("gaussian", 2)), 60, 0)
    out = corrupt(ds, 0.1, "mean_shift", 0, shift=[10.0, 0.0])
    target = ds.true_mean + np.array([10.0, 0.0])
    at_target = np.all(np.isclose(out.samples, target), axis=1)
    assert at_target.sum() == 6
    np.testing.assert_array_equal(at_target, out.labels == CORRUPTED)


@given(st.floats(0, 0.45), st.integers(1, 80), st.sampled_from(["mean_shift", "far_outliers", "moment_stealth"]),
       st.integers(0, 1000))
def test_corruption_preserves_clean_rows(eps, n, adversary, seed):
    ds = sample_mixture(MixtureSpec.single(_spec("product_rademacher", 2)), n, seed)
    out = corrupt(ds, eps, adversary, seed + 1)
    nbad = int(np.floor(eps * n + 1e-9))
    assert out.corrupted.sum() == nbad
    good = ~out.corrupted
    np.testing.assert_array_equal(out.samples[good], out.clean_copies[good])
    key = lambda X: sorted(map(tuple, X))
    assert key(out.clean_copies) == key(ds.samples)


def test_population_tensor_examples():
    np.testing.assert_allclose(population_moment_tensor(_spec("gaussian", 1), 4), [[3.0]])
    # variance proxy 2 makes the product coordinates plain +-1
    rad = DistributionSpec("product_rademacher", np.zeros(2), variance_proxy=2.0)
    T = population_moment_tensor(rad, 4)
    for r, (i, j) in enumerate(itertools.product(range(2), repeat=2)):
        for c, (k, l) in enumerate(itertools.product(range(2), repeat=2)):
            want = np.mean([s[i] * s[j] * s[k] * s[l] for s in itertools.product([-1, 1], repeat=2)])
            assert T[r, c] == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("kind", ["gaussian", "product_rademacher", "product_uniform", "rotated_product"])
def test_population_tensor_monte_carlo(kind):
    spec = _spec(kind, 2, seed=4)
    N = 10 ** 6
    Y = spec.sample(N, np.random.default_rng(12)) - spec.mean
    V = np.einsum("ni,nj->nij", Y, Y).reshape(N, -1)
    prods = V[:, :, None] * V[:, None, :]
    emp = prods.mean(axis=0)
    se = prods.std(axis=0) / np.sqrt(N)
    T = population_moment_tensor(spec, 4)
    # near-deterministic entries (rotated +-1 products) need a roundoff floor
    assert np.all(np.abs(emp - T) <= 3 * se + 1e-9)


@given(st.sampled_from(["gaussian", "product_rademacher", "product_uniform", "rotated_product"]),
       st.integers(1, 3), st.integers(0, 10 ** 6))
def test_every_kind_explicitly_bounded(kind, d, seed):
    spec = _spec(kind, d, seed)
    rep = certify_explicit_boundedness(spec.centered_moment, d, 4)
    assert all(r["sos"] for r in rep)


def test_rotation_validation():
    with pytest.raises(ValueError):
        DistributionSpec("rotated_product", np.zeros(2), rotation=np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        DistributionSpec("gaussian", np.zeros(2), rotation=np.eye(2))
    R = DistributionSpec.random_rotation(np.zeros(3), seed=2).rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-10


def test_weights_validation():
    comp = _spec("gaussian", 1)
    with pytest.raises(ValueError):
        MixtureSpec((comp, comp), [0.7, 0.2])
    with pytest.raises(ValueError):
        MixtureSpec((comp, comp), [1.2, -0.2])


def test_collinear_separation():
    spec = MixtureSpec.collinear(3, 2, 6.0)
    assert spec.separation == pytest.approx(6.0)
    np.testing.assert_allclose(spec.means.mean(axis=0), 0.0)


def test_balanced_counts():
    spec = MixtureSpec.collinear(2, 2, 10.0, weights=[0.7, 0.3])
    ds = sample_balanced(spec, 30, 1)
    assert np.bincount(ds.labels).tolist() == [21, 9]


def test_save_load_roundtrip(tmp_path):
    ds = corrupt(sample_mixture(MixtureSpec.collinear(2, 3, 4.0), 25, 0), 0.2, "moment_stealth", 3)
    csv_path, side = ds.save(tmp_path / "data.csv")
    assert side.exists()
    back = DatasetWithTruth.load(csv_path)
    np.testing.assert_array_equal(back.samples, ds.samples)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.clean_copies, ds.clean_copies)
    assert back.spec["corruption"]["count"] == 5
    np.testing.assert_array_equal(read_samples_csv(csv_path), ds.samples)
