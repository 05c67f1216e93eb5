"""Epsilon-nets over discretized functions and their coverage diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ParameterError
from .grid import GridFunction
from .quadrature import NormSpec, lp_norm, lp_norm_values

GREEDY_SLACK = 0.05


def _stack(samples: Sequence[GridFunction] | np.ndarray) -> tuple[np.ndarray, tuple | None]:
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=np.float64), None
    samples = list(samples)
    if not samples:
        raise ParameterError("need at least one sample")
    first = samples[0]
    for s in samples[1:]:
        if not first.same_grid(s):
            raise DimensionError("samples are not on identical grids")
    return np.stack([s.values for s in samples]), first.axes


@dataclass(eq=False)
class EpsNet:
    """Centers ``x_i`` (stacked, shape ``(n, *grid, M)``), radius and norm."""

    centers: np.ndarray
    eps: float
    norm: NormSpec
    axes: tuple | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if not self.eps > 0:
            raise ParameterError("eps must be positive")

    def __len__(self):
        return len(self.centers)

    def center(self, i: int) -> GridFunction:
        return GridFunction(self.centers[i], self.axes)

    def distances(self, values: np.ndarray) -> np.ndarray:
        """Distances from each of ``(B, *grid, M)`` samples to every center: ``(B, n)``."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[1:] != self.centers.shape[1:]:
            raise DimensionError(f"samples {values.shape[1:]} vs centers {self.centers.shape[1:]}")
        diff = values[:, None] - self.centers[None]
        return lp_norm_values(diff, self.norm, batch_dims=2)

    def mu(self, values: np.ndarray) -> np.ndarray:
        """Cutoff weights ``max(0, eps - ||x - x_i||)`` for a batch: ``(B, n)``."""
        return np.maximum(0.0, self.eps - self.distances(values))


def mu_fixed(x: GridFunction, center: GridFunction, eps: float, norm: NormSpec) -> float:
    """``max(0, eps - ||x - center||)`` with the norm evaluated by quadrature."""
    x.require_same_grid(center)
    return max(0.0, eps - lp_norm(x.values - center.values, norm))


def build_greedy(samples: Sequence[GridFunction] | np.ndarray, eps: float, norm: NormSpec,
                 slack: float = GREEDY_SLACK) -> EpsNet:
    """First-fit cover: a sample becomes a center when it is farther than
    ``eps * (1 - slack)`` from every existing center."""
    if not eps > 0:
        raise ParameterError("eps must be positive")
    values, axes = _stack(samples)
    radius = eps * (1.0 - slack)
    chosen = [0]
    for i in range(1, len(values)):
        d = lp_norm_values(values[i][None] - values[chosen], norm, batch_dims=1)
        if np.all(d > radius):
            chosen.append(i)
    return EpsNet(values[chosen].copy(), eps, norm, axes)


@dataclass
class CoverageReport:
    m_hat: float
    M_hat: float
    uncovered: list[int] = field(default_factory=list)

    @property
    def covered(self) -> bool:
        return not self.uncovered


def verify_coverage(samples: Sequence[GridFunction] | np.ndarray, net: EpsNet,
                    chunk: int = 256) -> CoverageReport:
    values, _ = _stack(samples)
    sums = np.concatenate([net.mu(values[i : i + chunk]).sum(axis=1) for i in range(0, len(values), chunk)])
    uncovered = [int(i) for i in np.flatnonzero(sums <= 0)]
    return CoverageReport(float(sums.min()), float(sums.max()), uncovered)


def pairwise_distances(samples: Sequence[GridFunction] | np.ndarray, norm: NormSpec) -> np.ndarray:
    """Upper-triangle pairwise distances, flattened."""
    values, _ = _stack(samples)
    out = []
    for i in range(len(values) - 1):
        out.append(lp_norm_values(values[i + 1 :] - values[i][None], norm, batch_dims=1))
    return np.concatenate(out) if out else np.zeros(0)


def suggest_eps(samples: Sequence[GridFunction] | np.ndarray, norm: NormSpec, quantile: float = 0.4) -> float:
    """Radius heuristic: a quantile of the pairwise-distance distribution."""
    d = pairwise_distances(samples, norm)
    if d.size == 0 or not np.any(d > 0):
        raise ParameterError("need at least two distinct samples to pick eps")
    return float(np.quantile(d[d > 0], quantile))
