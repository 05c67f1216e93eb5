import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsno import tensor as T
from lsno.epsnet import EpsNet, build_greedy, suggest_eps, verify_coverage
from lsno.errors import DimensionError, DomainError, NotCovered, ParameterError
from lsno.gradcheck import check
from lsno.grid import GridFunction, SpaceTimeGrid
from lsno.leray import (
    LerayCoefficients,
    OutputCoefficients,
    combine,
    evaluate_basis,
    project_fixed,
    project_fixed_batch,
    project_learned,
    project_learned_batch,
    projected_function,
    reconstruct,
)
from lsno.nn import MlpSpec, MuNetSpec, ParamStore, conv_layout, init_mlp, init_mu
from lsno.quadrature import grid_norm, lp_norm_values
from lsno.tensor import Tensor
from lsno.verify import random_fields

GRID = SpaceTimeGrid(8, 5, 2)
NORM = grid_norm(GRID)


def fn(values):
    return GridFunction(values, GRID.axes)


def unit_field(scale):
    return np.full((8, 5, 2), scale / math.sqrt(2))


class TestCoefficientTypes:
    def test_simplex_required(self):
        LerayCoefficients([0.25, 0.75])
        with pytest.raises(ParameterError):
            LerayCoefficients([0.5, 0.6])
        with pytest.raises(ParameterError):
            LerayCoefficients([-0.1, 1.1])

    def test_output_coefficients_finite(self):
        OutputCoefficients([1e9, -3.0])
        with pytest.raises(ParameterError):
            OutputCoefficients([np.nan, 1.0])


class TestProjectFixed:
    def test_single_center(self):
        net = EpsNet(np.zeros((1, 8, 5, 2)), 1.0, NORM, GRID.axes)
        assert project_fixed(fn(unit_field(0.3)), net).q.tolist() == [1.0]

    def test_equidistant_pair(self):
        centers = np.stack([unit_field(-0.5), unit_field(0.5)])
        net = EpsNet(centers, 1.0, NORM, GRID.axes)
        assert project_fixed(fn(np.zeros((8, 5, 2))), net).q.tolist() == [0.5, 0.5]

    def test_uncovered_input(self):
        net = EpsNet(np.zeros((1, 8, 5, 2)), 1.0, NORM, GRID.axes)
        with pytest.raises(NotCovered):
            project_fixed(fn(unit_field(2.0)), net)

    def test_grid_mismatch(self):
        net = EpsNet(np.zeros((1, 8, 5, 2)), 1.0, NORM, GRID.axes)
        other = SpaceTimeGrid(8, 5, 2)
        shifted = GridFunction(np.zeros((8, 5, 2)), (other.x + 0.01, other.t))
        with pytest.raises(DimensionError):
            project_fixed(shifted, net)

    def test_projection_bound_on_random_inputs(self):
        rng = np.random.default_rng(0)
        samples = random_fields(rng, 150, GRID)
        eps = suggest_eps(samples, NORM)
        net = build_greedy(samples, eps, NORM)
        fresh = random_fields(rng, 200, GRID)
        keep = np.delete(fresh, verify_coverage(fresh, net).uncovered, axis=0)
        q = project_fixed_batch(keep, net)
        dist = lp_norm_values(keep - projected_function(q, net), NORM, batch_dims=1)
        assert len(keep) > 50 and np.all(dist < eps)


class TestProjectLearned:
    spec = MuNetSpec((4,), (3,), (2,), head_width=6)

    def params(self, n=4, seed=0):
        return ParamStore(init_mu(self.spec, 2, 9, n, seed)).params

    def test_identical_networks_give_uniform_q(self):
        params = self.params()
        for p in params.values():
            p.data[...] = p.data[:1] if p.data.shape[0] == 4 else p.data
        y = GridFunction(np.random.default_rng(1).normal(size=(9, 2)), (np.linspace(0, 1, 9),))
        np.testing.assert_allclose(project_learned(y, params, self.spec).q, 0.25, rtol=1e-14)

    def test_simplex_on_random_inputs(self):
        params = self.params()
        rng = np.random.default_rng(2)
        y = rng.normal(size=(1000, 2, 9)) * rng.uniform(0.1, 20, (1000, 1, 1))
        with T.no_grad():
            q = project_learned_batch(params, self.spec, Tensor(y), 4).data
        assert np.all(q >= 0) and np.max(np.abs(q.sum(axis=1) - 1)) < 1e-9

    def test_gradient(self):
        params = self.params()
        y = Tensor(np.random.default_rng(3).normal(size=(3, 2, 9)))
        w = Tensor(np.random.default_rng(4).normal(size=(3, 4)))
        fn_ = lambda: T.reduce_sum(T.mul(project_learned_batch(params, self.spec, y, 4), w))
        assert max(check(fn_, list(params.values()))) < 1e-4


class TestBasisAndReconstruct:
    spec = MlpSpec((2, 8, 1), "tanh")

    def store(self, n=3, seed=0):
        return ParamStore(init_mlp(self.spec, seed, "g", stack=n)).params

    def test_zero_network(self):
        params = {k: Tensor(np.zeros_like(v.data)) for k, v in self.store(1).items()}
        assert not evaluate_basis(params, self.spec, GRID.points()).data.any()

    def test_subsample_consistency(self):
        params = self.store()
        pts = GRID.points()
        full = evaluate_basis(params, self.spec, pts).data
        idx = np.array([0, 7, 13, 39])
        np.testing.assert_array_equal(full[:, idx], evaluate_basis(params, self.spec, pts[idx]).data)

    def test_outside_domain(self):
        with pytest.raises(DomainError):
            evaluate_basis(self.store(), self.spec, np.array([[0.5, 1.5]]))

    def test_basis_gradient(self):
        params = self.store()
        pts = GRID.points()[:10]
        assert max(check(lambda: T.reduce_sum(T.square(evaluate_basis(params, self.spec, pts))),
                         list(params.values()))) < 1e-4

    def test_one_hot_selects_basis(self):
        params = self.store()
        basis = evaluate_basis(params, self.spec, GRID.points()).data
        for j in range(3):
            b = np.eye(3)[j]
            out = reconstruct(OutputCoefficients(b), params, self.spec, GRID.points(), "g").data
            np.testing.assert_array_equal(out, basis[j])

    def test_zero_coefficients(self):
        out = reconstruct(np.zeros(3), self.store(), self.spec, GRID.points(), "g")
        assert not out.data.any()

    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.sampled_from([-2.0, 0.5, 4.0]))
    @settings(max_examples=30, deadline=None)
    def test_linearity(self, b1, b2, c):
        params = self.store()
        pts = GRID.points()
        r = lambda b: reconstruct(np.asarray(b), params, self.spec, pts, "g").data
        np.testing.assert_allclose(r(np.add(b1, b2)), r(b1) + r(b2), atol=1e-12)
        np.testing.assert_array_equal(r(c * np.asarray(b1)), c * r(b1))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            combine(np.ones(2), Tensor(np.ones((3, 4, 1))))

    def test_upsampling_restriction_bit_exact(self):
        params = self.store()
        coarse = SpaceTimeGrid(16, 11, 1)
        fine = coarse.refine(2)
        b = np.random.default_rng(5).normal(size=(2, 3))
        on_coarse = combine(b, evaluate_basis(params, self.spec, coarse.points())).data
        on_fine = combine(b, evaluate_basis(params, self.spec, fine.points())).data
        restricted = np.stack([coarse.restrict(f.reshape(32, 21, 1), 2) for f in on_fine])
        np.testing.assert_array_equal(restricted.reshape(2, -1, 1), on_coarse)
