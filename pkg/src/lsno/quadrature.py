"""Quadrature rules on intervals, their tensor products, and L^p norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .grid import GridFunction, SpaceTimeGrid

RULE_KINDS = ("rectangle_forward", "trapezoid", "simpson")


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    kind: str
    a: float
    b: float
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape


@dataclass(frozen=True, eq=False)
class ProductRule:
    """Tensor product of interval rules; ``weights`` has one axis per factor."""

    rules: tuple[QuadratureRule, ...]
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        w = self.rules[0].weights
        for rule in self.rules[1:]:
            w = np.multiply.outer(w, rule.weights)
        object.__setattr__(self, "weights", w)

    @property
    def nodes(self) -> tuple[np.ndarray, ...]:
        return tuple(r.nodes for r in self.rules)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.weights.shape


def make_rule(kind: str, k: int, a: float = 0.0, b: float = 1.0) -> QuadratureRule:
    """Uniform-node rule with ``k`` nodes on ``[a, b]``.

    ``rectangle_forward`` uses the left endpoints ``a + j h`` with ``h = (b-a)/k``;
    trapezoid and Simpson use ``k`` nodes including both endpoints.
    """
    if kind not in RULE_KINDS:
        raise ParameterError(f"unknown rule kind {kind!r}")
    if not a < b:
        raise ParameterError(f"need a < b, got [{a}, {b}]")
    if k < 2:
        raise ParameterError(f"{kind} needs at least 2 nodes, got {k}")
    if kind == "rectangle_forward":
        h = (b - a) / k
        nodes = a + h * np.arange(k)
        weights = np.full(k, h)
    elif kind == "trapezoid":
        nodes = np.linspace(a, b, k)
        h = (b - a) / (k - 1)
        weights = np.full(k, h)
        weights[[0, -1]] = h / 2
    else:
        if k < 3 or k % 2 == 0:
            raise ParameterError(f"simpson needs an odd node count >= 3, got {k}")
        nodes = np.linspace(a, b, k)
        h = (b - a) / (k - 1)
        weights = np.full(k, 2 * h / 3)
        weights[1::2] = 4 * h / 3
        weights[[0, -1]] = h / 3
    return QuadratureRule(kind, float(a), float(b), nodes, weights)


def tensor_product_rule(rule_x: QuadratureRule, rule_t: QuadratureRule) -> ProductRule:
    return ProductRule((rule_x, rule_t))


def integrate(values, rule: QuadratureRule | ProductRule):
    """Weighted sum over the rule's node axes (leading axes of ``values``)."""
    values = np.asarray(values, dtype=np.float64)
    w = rule.weights
    if values.shape[: w.ndim] != w.shape:
        raise DimensionError(f"{values.shape[:w.ndim]} samples for a rule on {w.shape} nodes")
    axes = tuple(range(w.ndim))
    result = np.tensordot(w, values, axes=(axes, axes))
    return float(result) if result.ndim == 0 else result


@dataclass(frozen=True, eq=False)
class NormSpec:
    """L^p norm evaluated by quadrature; ``p = math.inf`` gives the grid max."""

    p: float = 2.0
    rule: QuadratureRule | ProductRule | None = None

    def __post_init__(self):
        if not self.p >= 1:
            raise ParameterError(f"norm exponent must be >= 1, got {self.p}")
        if math.isfinite(self.p) and self.rule is None:
            raise ParameterError("a finite exponent needs a quadrature rule")

    @property
    def is_uniform(self) -> bool:
        return math.isinf(self.p)


def pointwise_magnitude(values: np.ndarray) -> np.ndarray:
    """Euclidean norm across the trailing channel axis."""
    values = np.asarray(values)
    if values.shape[-1] == 1:
        return np.abs(values[..., 0])
    return np.sqrt(np.sum(values * values, axis=-1))


def lp_norm_values(values: np.ndarray, spec: NormSpec, batch_dims: int = 0):
    """Norms of ``(*batch, *grid, M)`` sample arrays, one per batch entry."""
    values = np.asarray(values, dtype=np.float64)
    batch = values.shape[:batch_dims]
    if spec.is_uniform:
        return np.abs(values).reshape(*batch, -1).max(axis=-1)
    w = spec.rule.weights
    grid = values.shape[batch_dims:-1]
    if grid != w.shape:
        raise DimensionError(f"samples on grid {grid} but rule has nodes {w.shape}")
    mag = pointwise_magnitude(values) ** spec.p
    total = np.tensordot(mag, w, axes=(tuple(range(batch_dims, mag.ndim)), tuple(range(w.ndim))))
    return total ** (1.0 / spec.p)


def lp_norm(f: GridFunction | np.ndarray, spec: NormSpec) -> float:
    values = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=np.float64)
    return float(lp_norm_values(values, spec))


@dataclass(frozen=True)
class SmoothnessSpec:
    """Hoelder-ball description; only ``rho`` (bound on sup|u'|) enters the bound."""

    rho: float
    kappa: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError("rho must be positive")
        if not 0 < self.alpha <= 1:
            raise ParameterError("alpha must lie in (0, 1]")
        if self.kappa < 1:
            raise ParameterError("kappa must be >= 1")


def error_bound(k: int, a: float, b: float, smooth: SmoothnessSpec) -> float:
    """Uniform rectangle-rule error bound ``(b - a) * rho / (2 k)``."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    return (b - a) * smooth.rho / (2 * k)


def grid_rule(grid: SpaceTimeGrid) -> QuadratureRule | ProductRule:
    """Rule matching a space-time grid: trapezoid in time, rectangle in periodic space."""
    rule_t = make_rule("trapezoid", grid.n_time, 0.0, 1.0)
    if not grid.has_space:
        return rule_t
    return tensor_product_rule(make_rule("rectangle_forward", grid.n_space, 0.0, 1.0), rule_t)


def grid_norm(grid: SpaceTimeGrid, p: float = 2.0) -> NormSpec:
    if math.isinf(p):
        return NormSpec(math.inf, None)
    return NormSpec(p, grid_rule(grid))
