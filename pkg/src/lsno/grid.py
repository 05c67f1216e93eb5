"""Discretized functions and the space-time grids they live on."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of an R^M-valued function on a uniform 1-D or 2-D grid.

    ``values`` has shape ``(*grid_shape, channels)`` and ``axes`` holds one
    coordinate array per domain dimension.
    """

    values: np.ndarray
    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        if values.ndim != len(axes) + 1:
            raise DimensionError(f"values of rank {values.ndim} need {values.ndim - 1} axes, got {len(axes)}")
        if tuple(len(a) for a in axes) != values.shape[:-1]:
            raise DimensionError(f"axes lengths do not match values shape {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "axes", axes)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.values.shape[:-1]

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def same_grid(self, other: "GridFunction") -> bool:
        return self.values.shape == other.values.shape and all(
            np.array_equal(a, b) for a, b in zip(self.axes, other.axes)
        )

    def require_same_grid(self, other: "GridFunction"):
        if not self.same_grid(other):
            raise DimensionError(f"grid mismatch: {self.values.shape} vs {other.values.shape}")

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values, self.axes)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on periodic space [0, 1) times [0, 1] in time.

    ``n_space == 1`` means the function has no spatial dependence (e.g. a
    curve y(t)); the domain is then the time interval alone.
    """

    n_space: int
    n_time: int
    channels: int

    def __post_init__(self):
        if self.n_space < 1 or self.n_time < 2 or self.channels < 1:
            raise ParameterError(f"invalid grid {self}")

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_space) / self.n_space

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_time)

    @property
    def has_space(self) -> bool:
        return self.n_space > 1

    @property
    def domain_dim(self) -> int:
        return 2 if self.has_space else 1

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return (self.x, self.t) if self.has_space else (self.t,)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.n_space, self.n_time) if self.has_space else (self.n_time,)

    def points(self) -> np.ndarray:
        """Grid nodes as a ``(P, domain_dim)`` array in row-major grid order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def as_grid_values(self, trajectory: np.ndarray) -> np.ndarray:
        """Reshape a stored ``(S, T, M)`` trajectory to ``(*grid_shape, M)``."""
        trajectory = np.asarray(trajectory)
        if trajectory.shape != (self.n_space, self.n_time, self.channels):
            raise DimensionError(f"trajectory {trajectory.shape} does not fit grid {self}")
        return trajectory.reshape(*self.grid_shape, self.channels)

    def function(self, trajectory: np.ndarray) -> GridFunction:
        return GridFunction(self.as_grid_values(trajectory), self.axes)

    def refine(self, factor: int) -> "SpaceTimeGrid":
        """Grid with ``factor`` times finer spacing that contains every node of this one."""
        if factor < 1:
            raise ParameterError("refinement factor must be >= 1")
        n_space = self.n_space * factor if self.has_space else 1
        return SpaceTimeGrid(n_space, (self.n_time - 1) * factor + 1, self.channels)

    def restrict(self, fine: np.ndarray, factor: int) -> np.ndarray:
        """Pick this grid's nodes out of an ``(S', T', ...)`` array on ``refine(factor)``."""
        space = slice(None, None, factor) if self.has_space else slice(None)
        return fine[space, ::factor]
