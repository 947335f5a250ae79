import numpy as np
import pytest

from bernmix.model import Priors
from bernmix.oracle import (
    ORACLE_MAX_COMPONENTS,
    ORACLE_MAX_UNITS,
    SyntheticSpec,
    adjusted_rand_index,
    brute_force_posterior,
    canonical_partition,
    generate_synthetic,
    total_variation,
)

from conftest import make_dataset


class TestSyntheticGenerator:
    def spec(self, **kw):
        base = dict(
            pi=(0.5, 0.5),
            theta=((0.9, 0.1), (0.2, 0.8), (0.5, 0.5)),
            n_units=200,
            seed=5,
        )
        base.update(kw)
        return SyntheticSpec(**base)

    def test_shapes_and_ids(self):
        data, z_true = generate_synthetic(self.spec())
        assert data.x.shape == (200, 3)
        assert z_true.shape == (200,)
        assert data.unit_ids[0] == "u0000"
        assert data.column_names == ["v00", "v01", "v02"]

    def test_reproducible(self):
        a, za = generate_synthetic(self.spec())
        b, zb = generate_synthetic(self.spec())
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(za, zb)

    def test_missing_rate_applied(self):
        data, _ = generate_synthetic(self.spec(missing_rate=0.3, n_units=2000))
        rate = 1.0 - data.observed.mean()
        assert abs(rate - 0.3) < 0.02

    def test_component_frequencies_follow_theta(self):
        data, z_true = generate_synthetic(self.spec(n_units=20000))
        for comp, expect in ((0, 0.9), (1, 0.1)):
            rate = data.x[z_true == comp, 0].mean()
            assert abs(rate - expect) < 0.02

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            self.spec(pi=(0.7, 0.7))

    def test_theta_domain(self):
        with pytest.raises(ValueError, match="inside"):
            self.spec(theta=((1.0, 0.1), (0.2, 0.8), (0.5, 0.5)))


class TestBruteForce:
    def test_guards(self):
        data = make_dataset(np.zeros((11, 1), dtype=np.int8))
        with pytest.raises(ValueError, match="n <= 10"):
            brute_force_posterior(data, Priors(k_max=2))
        data = make_dataset(np.zeros((3, 1), dtype=np.int8))
        with pytest.raises(ValueError, match="k_max"):
            brute_force_posterior(data, Priors(k_max=ORACLE_MAX_COMPONENTS + 1))

    def test_distribution_normalizes(self, tiny_data, tiny_priors):
        exact = brute_force_posterior(tiny_data, tiny_priors)
        assert exact.p_k_nonempty.sum() == pytest.approx(1.0, abs=1e-10)
        assert exact.p_k_nonempty[0] == 0.0
        assert np.isfinite(exact.log_normalizer)

    def test_coclustering_symmetric_unit_diagonal(self, tiny_data, tiny_priors):
        exact = brute_force_posterior(tiny_data, tiny_priors)
        np.testing.assert_allclose(exact.coclustering, exact.coclustering.T)
        np.testing.assert_allclose(np.diag(exact.coclustering), 1.0, atol=1e-12)
        assert (exact.coclustering >= 0).all() and (exact.coclustering <= 1 + 1e-12).all()

    def test_partition_probs_normalize(self, tiny_data, tiny_priors):
        exact = brute_force_posterior(tiny_data, tiny_priors, include_partitions=True)
        total = sum(exact.partition_probs.values())
        assert total == pytest.approx(1.0, abs=1e-10)
        # every key is a canonical relabeling of itself
        for key in exact.partition_probs:
            assert canonical_partition(np.array(key)) == key

    def test_k_one_puts_all_units_together(self):
        data = make_dataset(np.array([[1], [0]], dtype=np.int8))
        exact = brute_force_posterior(data, Priors(k_max=1))
        np.testing.assert_allclose(exact.p_k_nonempty, [0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(exact.coclustering, 1.0, atol=1e-12)

    def test_identical_units_cocluster_more(self, tiny_priors):
        x = np.array([[1, 1], [1, 1], [0, 0], [0, 0]], dtype=np.int8)
        exact = brute_force_posterior(make_dataset(x), tiny_priors)
        assert exact.coclustering[0, 1] > exact.coclustering[0, 2]

    def test_chunking_consistent(self, tiny_priors):
        # n = 8 at k_max = 3 crosses the chunk boundary; spot-check the
        # normalization is still a proper distribution
        rng = np.random.default_rng(0)
        x = (rng.random((8, 2)) < 0.5).astype(np.int8)
        exact = brute_force_posterior(make_dataset(x), tiny_priors)
        assert exact.p_k_nonempty.sum() == pytest.approx(1.0, abs=1e-10)

    def test_limits_exported(self):
        assert ORACLE_MAX_UNITS == 10
        assert ORACLE_MAX_COMPONENTS == 4


class TestMetrics:
    def test_total_variation(self):
        assert total_variation(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
        assert total_variation(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
        assert total_variation(
            np.array([0.6, 0.4]), np.array([0.5, 0.5])
        ) == pytest.approx(0.1)

    def test_ari_perfect_and_permuted(self):
        a = np.array([0, 0, 1, 1, 2, 2])
        assert adjusted_rand_index(a, a) == pytest.approx(1.0)
        permuted = np.array([2, 2, 0, 0, 1, 1])
        assert adjusted_rand_index(a, permuted) == pytest.approx(1.0)

    def test_ari_independent_labels_near_zero(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 3, size=3000)
        b = rng.integers(0, 3, size=3000)
        assert abs(adjusted_rand_index(a, b)) < 0.05

    def test_canonical_partition(self):
        assert canonical_partition(np.array([2, 2, 0, 1])) == (0, 0, 1, 2)
        assert canonical_partition(np.array([0, 1, 2])) == (0, 1, 2)
