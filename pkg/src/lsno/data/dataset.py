from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, ParameterError
from ..grid import GridFunction, SpaceTimeGrid


@dataclass(eq=False)
class Sample:
    """Initialization snapshots (t = 0 and t = 1) and the full target trajectory."""

    initial: np.ndarray
    final: np.ndarray
    target: np.ndarray

    @classmethod
    def from_trajectory(cls, trajectory: np.ndarray) -> "Sample":
        trajectory = np.asarray(trajectory, dtype=np.float64)
        return cls(trajectory[:, 0].copy(), trajectory[:, -1].copy(), trajectory)


@dataclass(eq=False)
class Dataset:
    """Trajectories of shape ``(count, S, T, M)`` sharing one space-time grid."""

    trajectories: np.ndarray
    grid: SpaceTimeGrid
    generator: str = "external"
    seed: int = 0
    params: tuple[float, ...] = ()

    def __post_init__(self):
        self.trajectories = np.ascontiguousarray(self.trajectories, dtype=np.float64)
        g = self.grid
        if self.trajectories.ndim != 4 or self.trajectories.shape[1:] != (g.n_space, g.n_time, g.channels):
            raise DimensionError(f"trajectories {self.trajectories.shape} do not fit grid {g}")
        self.params = tuple(float(p) for p in self.params)

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i: int) -> Sample:
        return Sample.from_trajectory(self.trajectories[i])

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def initial(self) -> np.ndarray:
        return self.trajectories[:, :, 0]

    @property
    def final(self) -> np.ndarray:
        return self.trajectories[:, :, -1]

    def function(self, i: int) -> GridFunction:
        return self.grid.function(self.trajectories[i])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= len(self)):
            raise ParameterError("subset index out of range")
        return Dataset(self.trajectories[indices], self.grid, self.generator, self.seed, self.params)

    def same_as(self, other: "Dataset") -> bool:
        """Bitwise equality of payload and metadata."""
        return (
            self.grid == other.grid
            and self.generator == other.generator
            and self.seed == other.seed
            and self.params == other.params
            and self.trajectories.shape == other.trajectories.shape
            and self.trajectories.tobytes() == other.trajectories.tobytes()
        )
