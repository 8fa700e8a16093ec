"""Perturbation batches: support, binary features, determinism, weights."""

import math

import numpy as np
import pytest

from tablime.grid import bin_id, fit_grid
from tablime.numerics import trunc_normal_stats
from tablime.sampler import (
    BoundednessViolationError,
    sample_batch,
    weights_default,
    weights_general,
)


def make_grid(seed=0, d=3, p=4, m=500):
    rng = np.random.default_rng(seed)
    return fit_grid(rng.normal(size=(m, d)) * rng.uniform(0.5, 3, size=d), p)


class TestSampleBatch:
    def test_values_inside_their_bin(self):
        grid = make_grid()
        batch = sample_batch(grid, np.array([0, 1, 2]), n=2000, seed=9)
        for j in range(grid.d):
            lo = grid.boundaries[j, batch.bins[:, j]]
            hi = grid.boundaries[j, batch.bins[:, j] + 1]
            assert np.all(batch.x[:, j] >= lo) and np.all(batch.x[:, j] <= hi)

    def test_z_matches_bin_agreement(self):
        grid = make_grid()
        b_star = np.array([3, 0, 2])
        batch = sample_batch(grid, b_star, n=1000, seed=1)
        np.testing.assert_array_equal(batch.z, (batch.bins == b_star).astype(np.uint8))

    def test_deterministic_per_seed(self):
        grid = make_grid()
        a = sample_batch(grid, np.array([0, 0, 0]), n=500, seed=77)
        b = sample_batch(grid, np.array([0, 0, 0]), n=500, seed=77)
        np.testing.assert_array_equal(a.bins, b.bins)
        np.testing.assert_array_equal(a.x, b.x)

    def test_same_bin_examples_share_the_batch(self):
        grid = make_grid(d=2)
        xi_a = grid.bin_center(np.array([1, 2]))
        xi_b = xi_a + 1e-4 * (grid.boundaries[:, 2] - grid.boundaries[:, 1])
        ba, bb = bin_id(xi_a, grid), bin_id(xi_b, grid)
        np.testing.assert_array_equal(ba, bb)
        a = sample_batch(grid, ba, n=200, seed=5)
        b = sample_batch(grid, bb, n=200, seed=5)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.z, b.z)

    def test_bin_frequencies_uniform(self):
        grid = make_grid(p=4)
        n = 100_000
        batch = sample_batch(grid, np.array([0, 0, 0]), n=n, seed=3)
        se = math.sqrt(0.25 * 0.75 * n)
        for j in range(grid.d):
            for b in range(4):
                count = int(np.sum(batch.bins[:, j] == b))
                assert abs(count - n * 0.25) < 4 * se

    def test_bin_conditional_mean_matches_truncated_moments(self):
        grid = make_grid(p=3, d=2)
        n = 100_000
        batch = sample_batch(grid, np.array([0, 0]), n=n, seed=8)
        for j in range(grid.d):
            for b in range(grid.p):
                sel = batch.x[batch.bins[:, j] == b, j]
                mean, std = trunc_normal_stats(grid.bin_params(j, b))
                assert abs(sel.mean() - mean) < 4 * std / math.sqrt(sel.size)

    def test_rejects_empty_batch(self):
        with pytest.raises(ValueError):
            sample_batch(make_grid(), np.array([0, 0, 0]), n=0, seed=0)

    def test_debug_csv_dump(self, tmp_path):
        from tablime.sampler import batch_to_csv
        grid = make_grid(d=2)
        batch = sample_batch(grid, np.array([0, 1]), n=5, seed=2)
        weights = weights_default(batch.z, nu=1.0)
        path = tmp_path / "batch.csv"
        batch_to_csv(batch, weights, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "i,j,bin,x,z,pi"
        assert len(lines) == 1 + 5 * 2


class TestWeightsDefault:
    def test_full_agreement_gives_one(self):
        w = weights_default(np.ones((5, 4), dtype=np.uint8), nu=0.7)
        np.testing.assert_allclose(w.pi, 1.0)

    def test_full_disagreement_two_features(self):
        w = weights_default(np.zeros((3, 2), dtype=np.uint8), nu=1.0)
        # exp(-1) = 0.36787944117144233 (mpmath)
        np.testing.assert_allclose(w.pi, 0.36787944117144233, atol=1e-15)

    def test_large_bandwidth_saturates(self):
        z = np.random.default_rng(0).integers(0, 2, size=(50, 6))
        w = weights_default(z, nu=1e9)
        np.testing.assert_allclose(w.pi, 1.0, atol=1e-9)

    def test_lower_bound(self):
        z = np.zeros((4, 7), dtype=np.uint8)
        nu = 0.4
        w = weights_default(z, nu)
        assert np.all(w.pi >= math.exp(-7 / (2 * nu * nu)) - 1e-300)

    def test_rejects_nonpositive_bandwidth(self):
        with pytest.raises(ValueError):
            weights_default(np.ones((2, 2)), nu=0.0)


class TestWeightsGeneral:
    def setup_method(self):
        self.grid = make_grid(seed=12, d=2, p=4)
        self.xi = self.grid.bin_center(np.array([1, 3]))
        self.b_star = bin_id(self.xi, self.grid)
        self.batch = sample_batch(self.grid, self.b_star, n=5000, seed=21)

    def test_bin_indicator_maps_recover_default(self):
        taus = []
        for j in range(2):
            lo = self.grid.boundaries[j, self.b_star[j]]
            hi = self.grid.boundaries[j, self.b_star[j] + 1]
            taus.append(lambda t, lo=lo, hi=hi:
                        ((np.asarray(t) >= lo) & (np.asarray(t) <= hi)).astype(float))
        general = weights_general(self.batch.x, self.xi, taus, nu=1.1)
        default = weights_default(self.batch.z, nu=1.1)
        np.testing.assert_allclose(general.pi, default.pi, atol=1e-12)

    def test_identity_maps_give_euclidean_weights(self):
        # rescale the batch into [0, 1] so the unit-variation bound holds
        lo = self.grid.boundaries[:, 0]
        span = self.grid.boundaries[:, -1] - lo
        x01 = (self.batch.x - lo) / span
        xi01 = (self.xi - lo) / span
        taus = [np.asarray] * 2
        w = weights_general(x01, xi01, taus, nu=0.8)
        expected = np.exp(-np.sum((xi01 - x01) ** 2, axis=1) / (2 * 0.8 ** 2))
        np.testing.assert_allclose(w.pi, expected, atol=1e-12)

    def test_constant_maps_give_unit_weights(self):
        taus = [lambda t: np.zeros_like(np.asarray(t, dtype=float))] * 2
        w = weights_general(self.batch.x, self.xi, taus, nu=0.5)
        np.testing.assert_allclose(w.pi, 1.0)

    def test_unbounded_map_rejected(self):
        taus = [np.asarray] * 2  # raw coordinates move far more than 1
        with pytest.raises(BoundednessViolationError):
            weights_general(self.batch.x * 100, self.xi * 100, taus, nu=1.0)
