"""Self-generating property suite: gradients, quadrature, covering and projection."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import gradcheck
from . import tensor as T
from .data.dataset import Dataset
from .epsnet import build_greedy, suggest_eps, verify_coverage
from .errors import ParameterError
from .grid import SpaceTimeGrid
from .leray import project_fixed_batch, project_learned_batch
from .model import LerayOperator, ModelConfig, loss
from .nn import MuNetSpec, ParamStore, conv_layout, init_mu
from .quadrature import SmoothnessSpec, error_bound, grid_norm, integrate, lp_norm_values, make_rule
from .tensor import Tensor

PRIMITIVE_TOL = 1e-4
END_TO_END_TOL = 1e-3
BOUND_NODES = (16, 64, 256)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured={self.measured:.3e} threshold={self.threshold:.3e} {self.detail}".rstrip()


# quadrature


def trig_family(rng: np.random.Generator, count: int, terms: int = 4):
    """Random trigonometric sums with exact integrals and derivative bounds.

    Each function is ``c + sum_j a_j sin(2 pi f_j x + phi_j)`` on [0, 1];
    ``rho = sum_j |a_j| 2 pi f_j`` bounds ``sup |u'|``.
    """
    out = []
    for _ in range(count):
        c = rng.uniform(-1, 1)
        a = rng.uniform(-1, 1, terms)
        f = rng.uniform(0.2, 6.0, terms)
        phi = rng.uniform(0, 2 * np.pi, terms)

        def u(x, c=c, a=a, f=f, phi=phi):
            x = np.asarray(x, dtype=np.float64)[..., None]
            return c + np.sum(a * np.sin(2 * np.pi * f * x + phi), axis=-1)

        w = 2 * np.pi * f
        exact = c + float(np.sum(a * (np.cos(phi) - np.cos(w + phi)) / w))
        rho = float(np.sum(np.abs(a) * w))
        out.append((u, exact, rho))
    return out


def check_quadrature_exactness() -> PropertyResult:
    worst = 0.0
    cases = [
        ("rectangle_forward", 16, lambda x: np.full_like(x, 3.5), 3.5),
        ("trapezoid", 17, lambda x: 2 * x - 0.25, 0.75),
        ("simpson", 17, lambda x: x**3 - x**2 + 0.5, 0.25 - 1 / 3 + 0.5),
    ]
    for kind, k, fn, exact in cases:
        rule = make_rule(kind, k)
        worst = max(worst, abs(integrate(fn(rule.nodes), rule) - exact))
    return PropertyResult("quadrature_exactness", worst < 1e-12, worst, 1e-12, "const/linear/cubic")


def check_quadrature_bound(rng: np.random.Generator, count: int = 20) -> PropertyResult:
    violations = 0
    min_slack = math.inf
    for u, exact, rho in trig_family(rng, count):
        for k in BOUND_NODES:
            rule = make_rule("rectangle_forward", k)
            err = abs(integrate(u(rule.nodes), rule) - exact)
            bound = error_bound(k, 0.0, 1.0, SmoothnessSpec(rho))
            min_slack = min(min_slack, bound - err)
            violations += err > bound
    return PropertyResult("quadrature_error_bound", violations == 0, min_slack, 0.0,
                          f"min(bound-error) over {count} functions x k={BOUND_NODES}; violations={violations}")


# epsilon-nets and projections


def random_fields(rng: np.random.Generator, count: int, grid: SpaceTimeGrid, modes: int = 3) -> np.ndarray:
    """Smooth random functions on ``grid`` as ``(count, *grid_shape, M)``."""
    x, t = np.meshgrid(grid.x, grid.t, indexing="ij")
    out = np.zeros((count, grid.n_space, grid.n_time, grid.channels))
    for m in range(1, modes + 1):
        a = rng.normal(size=(count, 1, 1, grid.channels)) / m
        b = rng.normal(size=(count, 1, 1, grid.channels)) / m
        c = rng.normal(size=(count, 1, 1, grid.channels)) / m
        out += a * np.sin(2 * np.pi * m * x)[..., None] + b * np.cos(np.pi * m * t)[..., None] * (1 + c * x[..., None])
    return out.reshape(count, *grid.grid_shape, grid.channels)


def check_nets(rng: np.random.Generator, eps: float | None, count: int = 200,
               simplex_inputs: int = 1000) -> list[PropertyResult]:
    grid = SpaceTimeGrid(16, 9, 2)
    norm = grid_norm(grid, 2.0)
    samples = random_fields(rng, count, grid)
    if eps is None:
        eps = suggest_eps(samples, norm)
    elif not eps > 0:
        raise ParameterError("eps must be positive")
    net = build_greedy(samples, eps, norm)
    cover = verify_coverage(samples, net)
    results = [PropertyResult("epsnet_coverage", cover.covered and cover.m_hat > 0, cover.m_hat, 0.0,
                              f"m_hat={cover.m_hat:.4g} M_hat={cover.M_hat:.4g} centers={len(net)} eps={eps:.4g}")]

    fresh = random_fields(rng, count, grid)
    uncovered = verify_coverage(fresh, net).uncovered
    pool = np.concatenate([samples, np.delete(fresh, uncovered, axis=0)])
    q = project_fixed_batch(pool, net)
    dist = lp_norm_values(pool - np.tensordot(q, net.centers, axes=(1, 0)), norm, batch_dims=1)
    violations = int(np.sum(dist >= eps))
    results.append(PropertyResult("projection_bound", violations == 0, float(dist.max()) / eps, 1.0,
                                  f"max ||x-P_n x||/eps over {len(pool)} covered functions; violations={violations}"))

    picks = rng.integers(0, count, simplex_inputs)
    direction = rng.normal(size=(simplex_inputs, *samples.shape[1:]))
    scale = 0.02 * eps / lp_norm_values(direction, norm, batch_dims=1)
    perturbed = samples[picks] + direction * scale[:, None, None, None]
    q_fixed = project_fixed_batch(perturbed, net)

    inputs = rng.normal(size=(simplex_inputs, *samples.shape[1:])) * rng.uniform(0.1, 10, (simplex_inputs, 1, 1, 1))
    layout = conv_layout(inputs)
    worst_sum, negatives = _simplex_stats(q_fixed)
    for final in ("softplus", "sigmoid_scaled"):
        s = MuNetSpec((8,), (3,), (2,), head_width=8, final_nonlinearity=final)
        store = ParamStore(init_mu(s, layout.shape[1], layout.shape[2], 8, rng))
        with T.no_grad():
            q_learned = project_learned_batch(store.params, s, Tensor(layout), 8).data
        w, n = _simplex_stats(q_learned)
        worst_sum, negatives = max(worst_sum, w), negatives + n
    results.append(PropertyResult("coefficient_simplex", negatives == 0 and worst_sum < 1e-9, worst_sum, 1e-9,
                                  f"max |sum q - 1| over {simplex_inputs} inputs per mode; negatives={negatives}"))
    return results


def _simplex_stats(q: np.ndarray) -> tuple[float, int]:
    return float(np.max(np.abs(q.sum(axis=1) - 1.0))), int(np.sum(q < 0))


# gradients


def _away_from_zero(rng, shape, low=0.2, high=1.5):
    return rng.uniform(low, high, shape) * rng.choice([-1.0, 1.0], shape)


def primitive_cases(rng: np.random.Generator) -> dict:
    """Name -> (scalar function of its inputs, inputs) for every tape primitive."""

    def leaf(arr):
        return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)

    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(3, 4)))
    pos = leaf(rng.uniform(0.5, 2.0, (3, 4)))
    kinked = leaf(_away_from_zero(rng, (3, 4)))
    m1, m2 = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(2, 4, 5)))
    x_conv = leaf(rng.normal(size=(2, 3, 11)))
    k_single = leaf(rng.normal(size=(4, 3, 3)))
    k_stack = leaf(rng.normal(size=(5, 4, 3, 3)))
    x_stack = leaf(rng.normal(size=(2, 5, 3, 11)))
    vec = leaf(rng.normal(size=(4,)))
    idx = np.array([0, 2, 2, 1])

    def probe(y):
        # fixed random weights make every output entry matter
        r = np.random.default_rng(y.size).normal(size=y.shape)
        return T.reduce_sum(T.mul(y, Tensor(r)))

    return {
        "add": (lambda: probe(T.add(a, b)), [a, b]),
        "sub": (lambda: probe(T.sub(a, b)), [a, b]),
        "mul": (lambda: probe(T.mul(a, b)), [a, b]),
        "div": (lambda: probe(T.div(a, pos)), [a, pos]),
        "neg": (lambda: probe(T.neg(a)), [a]),
        "tanh": (lambda: probe(T.tanh(a)), [a]),
        "sigmoid": (lambda: probe(T.sigmoid(a)), [a]),
        "relu": (lambda: probe(T.relu(kinked)), [kinked]),
        "softplus": (lambda: probe(T.softplus(a)), [a]),
        "abs": (lambda: probe(T.absolute(kinked)), [kinked]),
        "exp": (lambda: probe(T.exp(a)), [a]),
        "log": (lambda: probe(T.log(pos)), [pos]),
        "pow_p": (lambda: probe(T.pow_p(pos, 2.5)), [pos]),
        "square": (lambda: probe(T.square(a)), [a]),
        "clamp_min": (lambda: probe(T.clamp_min(kinked, 0.0)), [kinked]),
        "reduce_sum": (lambda: probe(T.reduce_sum(a, axis=1)), [a]),
        "reduce_mean": (lambda: probe(T.reduce_mean(a, axis=0, keepdims=True)), [a]),
        "reshape": (lambda: probe(T.reshape(a, (2, 6))), [a]),
        "transpose": (lambda: probe(T.transpose(m1, (2, 0, 1))), [m1]),
        "expand": (lambda: probe(T.expand(T.reshape(vec, (1, 4)), (3, 4))), [vec]),
        "add_bias": (lambda: probe(T.add_bias(a, T.reshape(vec, (1, 4)))), [a, vec]),
        "take": (lambda: probe(T.take(a, (slice(None), idx))), [a]),
        "stack": (lambda: probe(T.stack([a, b], axis=1)), [a, b]),
        "matmul": (lambda: probe(T.matmul(m1, m2)), [m1, m2]),
        "conv1d": (lambda: probe(T.conv1d(x_conv, k_single, 2)), [x_conv, k_single]),
        "conv1d_shared": (lambda: probe(T.conv1d(x_conv, k_stack, 1)), [x_conv, k_stack]),
        "conv1d_stacked": (lambda: probe(T.conv1d(x_stack, k_stack, 2)), [x_stack, k_stack]),
    }


def check_primitives(rng: np.random.Generator) -> PropertyResult:
    worst, worst_name = 0.0, ""
    failures = []
    for name, (fn, inputs) in primitive_cases(rng).items():
        err = max(gradcheck.check(fn, inputs))
        if err > worst:
            worst, worst_name = err, name
        if not err < PRIMITIVE_TOL:
            failures.append(name)
    detail = f"worst={worst_name}" + (f" failures={failures}" if failures else "")
    return PropertyResult("gradient_primitives", not failures, worst, PRIMITIVE_TOL, detail)


def tiny_dataset(rng: np.random.Generator, grid: SpaceTimeGrid, count: int = 3) -> Dataset:
    values = random_fields(rng, count, grid).reshape(count, grid.n_space, grid.n_time, grid.channels)
    return Dataset(values, grid, "random")


def end_to_end_cases(rng: np.random.Generator):
    small = dict(g_hidden=(8,), f_hidden=(8,), mu_channels=(4,), mu_kernels=(3,), mu_strides=(2,),
                 mu_head_width=4, validation_fraction=0.0)
    yield "curve_learned", ModelConfig(n_basis=4, **small), tiny_dataset(rng, SpaceTimeGrid(1, 12, 2))
    yield "field_learned", ModelConfig(n_basis=3, mu_shared=True, mu_final="sigmoid_scaled", **small), \
        tiny_dataset(rng, SpaceTimeGrid(8, 5, 1))
    yield "field_fixed", ModelConfig(n_basis=3, mode="fixed_mu", eps_quantile=0.9, **small), \
        tiny_dataset(rng, SpaceTimeGrid(8, 5, 1), count=4)


def end_to_end_error(config: ModelConfig, data: Dataset, rng: np.random.Generator, samples: int = 50) -> float:
    """Gradient check of the training loss w.r.t. ``samples`` random parameter entries."""
    model = LerayOperator.initialize(config, data.grid, data)
    target = data.trajectories.reshape(len(data), -1, data.grid.channels)

    def fn():
        return loss(model.forward_arrays(data.initial, data.final), target)

    names = sorted(model.store.params)
    sizes = np.array([model.store[n].size for n in names])
    flat = rng.choice(sizes.sum(), size=min(samples, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    model.store.zero_grad()
    fn().backward()
    auto, fd = [], []
    for i in flat:
        j = int(np.searchsorted(offsets, i, side="right") - 1)
        p = model.store[names[j]]
        idx = np.unravel_index(i - offsets[j], p.shape)
        auto.append(p.grad[idx])
        fd.append(gradcheck.numeric_grad(fn, p.data, 1e-6, [idx])[idx])
    return gradcheck.relative_error(np.array(auto), np.array(fd))


def check_end_to_end(rng: np.random.Generator) -> PropertyResult:
    errors = {name: end_to_end_error(cfg, data, rng) for name, cfg, data in end_to_end_cases(rng)}
    worst = max(errors.values())
    detail = " ".join(f"{k}={v:.1e}" for k, v in errors.items())
    return PropertyResult("gradient_end_to_end", worst < END_TO_END_TOL, worst, END_TO_END_TOL, detail)


def run_suite(seed: int = 0, eps: float | None = None) -> list[PropertyResult]:
    if eps is not None and not eps > 0:
        raise ParameterError("eps must be positive")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    results = [check_primitives(rng), check_end_to_end(rng), check_quadrature_exactness(),
               check_quadrature_bound(rng)]
    results.extend(check_nets(rng, eps))
    elapsed = time.perf_counter() - start
    results.append(PropertyResult("suite_runtime", elapsed <= 120.0, elapsed, 120.0, "seconds"))
    return results
