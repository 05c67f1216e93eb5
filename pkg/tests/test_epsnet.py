import math

import numpy as np
import pytest

from lsno.epsnet import (
    GREEDY_SLACK,
    EpsNet,
    build_greedy,
    mu_fixed,
    pairwise_distances,
    suggest_eps,
    verify_coverage,
)
from lsno.errors import DimensionError, ParameterError
from lsno.grid import GridFunction, SpaceTimeGrid
from lsno.quadrature import NormSpec, grid_norm, lp_norm, make_rule
from lsno.verify import random_fields

GRID = SpaceTimeGrid(8, 5, 2)
NORM = grid_norm(GRID)


def fn(values):
    return GridFunction(values, GRID.axes)


@pytest.fixture
def samples():
    return random_fields(np.random.default_rng(0), 100, GRID)


def brute_distance(a, b):
    # independent L2 evaluation: explicit loops over nodes
    w = NORM.rule.weights
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            total += w[i, j] * float(np.sum((a[i, j] - b[i, j]) ** 2))
    return math.sqrt(total)


class TestBuildGreedy:
    def test_single_sample(self, samples):
        net = build_greedy([fn(samples[0])], 1.0, NORM)
        assert len(net) == 1
        np.testing.assert_array_equal(net.centers[0], samples[0])

    def test_far_apart_pair(self):
        a = np.zeros((8, 5, 2))
        b = np.full((8, 5, 2), 3.0 / math.sqrt(2))  # norm 3 under the unit-area rule
        assert lp_norm(b - a, NORM) == pytest.approx(3.0)
        assert len(build_greedy([fn(a), fn(b)], 1.0, NORM)) == 2

    def test_every_sample_covered(self, samples):
        eps = suggest_eps(samples, NORM)
        net = build_greedy(samples, eps, NORM)
        for s in samples:
            assert min(brute_distance(s, c) for c in net.centers) <= eps

    def test_centers_pairwise_distinct(self, samples):
        net = build_greedy(samples, suggest_eps(samples, NORM), NORM)
        d = pairwise_distances(net.centers, NORM)
        assert np.all(d > net.eps * (1 - GREEDY_SLACK))

    def test_mixed_grids_rejected(self, samples):
        other = GridFunction(np.zeros((4, 5, 2)), SpaceTimeGrid(4, 5, 2).axes)
        with pytest.raises(DimensionError):
            build_greedy([fn(samples[0]), other], 1.0, NORM)

    def test_eps_must_be_positive(self, samples):
        with pytest.raises(ParameterError):
            build_greedy(samples, 0.0, NORM)


class TestMuFixed:
    def test_at_center(self):
        c = fn(np.ones((8, 5, 2)))
        assert mu_fixed(c, c, 0.7, NORM) == 0.7

    def test_cutoff_and_linear_branches(self):
        c = fn(np.zeros((8, 5, 2)))
        unit = np.full((8, 5, 2), 1 / math.sqrt(2))
        assert mu_fixed(fn(2.0 * unit), c, 1.0, NORM) == 0.0
        assert mu_fixed(fn(0.5 * unit), c, 1.0, NORM) == pytest.approx(0.5)

    def test_grid_mismatch(self):
        with pytest.raises(DimensionError):
            mu_fixed(fn(np.zeros((8, 5, 2))), GridFunction(np.zeros((8, 4, 2)), SpaceTimeGrid(8, 4, 2).axes), 1.0, NORM)

    def test_range_and_lipschitz(self, samples):
        c = fn(samples[0])
        for a, b in zip(samples[1:20], samples[20:40]):
            ma, mb = mu_fixed(fn(a), c, 2.0, NORM), mu_fixed(fn(b), c, 2.0, NORM)
            assert 0.0 <= ma <= 2.0
            assert abs(ma - mb) <= lp_norm(a - b, NORM) + 1e-12

    def test_quadrature_consistency_trend(self):
        # mu on a smooth 1-D function approaches the fine-grid reference as nodes are added
        def values(k):
            x = np.arange(k) / k
            return np.stack([np.sin(2 * np.pi * x) + x, np.cos(2 * np.pi * x) * x], axis=-1)

        def mu_at(k):
            spec = NormSpec(2.0, make_rule("rectangle_forward", k))
            return max(0.0, 2.0 - lp_norm(values(k), spec))

        reference = mu_at(128 * 64)
        gaps = [abs(mu_at(k) - reference) for k in (16, 32, 64, 128)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))


class TestCoverage:
    def test_self_built_net(self, samples):
        net = build_greedy(samples, suggest_eps(samples, NORM), NORM)
        report = verify_coverage(samples, net)
        assert report.covered and report.m_hat > 0 and report.m_hat <= report.M_hat

    def test_far_sample_reported(self, samples):
        net = build_greedy(samples[:10], 0.5, NORM)
        far = samples[:3].copy()
        far[1] += 100.0
        report = verify_coverage(far, net)
        assert report.uncovered == [1] and not report.covered and report.m_hat == 0.0

    def test_m_hat_matches_brute_force(self, samples):
        eps = suggest_eps(samples, NORM)
        net = build_greedy(samples, eps, NORM)
        sums = [sum(max(0.0, eps - brute_distance(s, c)) for c in net.centers) for s in samples]
        report = verify_coverage(samples, net)
        assert report.m_hat == pytest.approx(min(sums), rel=1e-12)
        assert report.M_hat == pytest.approx(max(sums), rel=1e-12)


class TestSuggestEps:
    def test_quantile_of_pairwise_distances(self, samples):
        d = [brute_distance(samples[i], samples[j]) for i in range(20) for j in range(i + 1, 20)]
        assert suggest_eps(samples[:20], NORM, 0.4) == pytest.approx(np.quantile(d, 0.4), rel=1e-12)

    def test_identical_samples(self):
        with pytest.raises(ParameterError):
            suggest_eps(np.zeros((3, 8, 5, 2)), NORM)


def test_distances_shape_check(samples):
    net = EpsNet(samples[:3], 1.0, NORM)
    assert net.distances(samples[:5]).shape == (5, 3)
    with pytest.raises(DimensionError):
        net.distances(np.zeros((2, 8, 4, 2)))
