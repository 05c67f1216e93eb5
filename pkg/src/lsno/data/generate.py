"""Seeded dataset generators.

Sample ``i`` draws from ``SeedSequence([seed, i])``, so any split of the work
across threads yields the same bytes as a serial run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import ParameterError
from ..grid import SpaceTimeGrid
from .burgers import BurgersSpec, field_from_coefficients, grf_coefficients, solve_burgers
from .dataset import Dataset
from .spirals import IEKernelSpec, solve_ie

GENERATORS = ("spirals", "burgers")


def sample_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(i)]))


def _run(fn, count: int, threads: int) -> list:
    if count < 1:
        raise ParameterError("count must be >= 1")
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, range(count)))


def spiral_z0(spec: IEKernelSpec, seed: int, i: int) -> np.ndarray:
    return sample_rng(seed, i).uniform(spec.z0_low, spec.z0_high, size=2)


def gen_spirals(count: int, spec: IEKernelSpec = IEKernelSpec(), seed: int = 0, threads: int = 1) -> Dataset:
    def one(i):
        return solve_ie(spiral_z0(spec, seed, i), spec)

    trajectories = np.stack(_run(one, count, threads))[:, None]
    grid = SpaceTimeGrid(1, spec.n_time, 2)
    return Dataset(trajectories, grid, "spirals", seed, spec.params())


def burgers_initial(spec: BurgersSpec, seed: int, i: int, s: int | None = None) -> np.ndarray:
    """Initial field of sample ``i``; the same draw at any resolution ``s``."""
    coeffs = grf_coefficients(sample_rng(seed, i), spec)
    return field_from_coefficients(coeffs, spec.s if s is None else s)


def gen_burgers(count: int, spec: BurgersSpec = BurgersSpec(), seed: int = 0, threads: int = 1) -> Dataset:
    def one(i):
        return solve_burgers(burgers_initial(spec, seed, i), spec)

    trajectories = np.stack(_run(one, count, threads))[..., None]
    grid = SpaceTimeGrid(spec.s, spec.nt, 1)
    return Dataset(trajectories, grid, "burgers", seed, spec.params())


def spec_from_dataset(ds: Dataset) -> IEKernelSpec | BurgersSpec:
    """Rebuild the generator spec recorded in a dataset's metadata."""
    g = ds.grid
    if ds.generator == "spirals":
        low, high, tol, max_iter = ds.params
        return IEKernelSpec(g.n_time, low, high, tol, int(max_iter))
    if ds.generator == "burgers":
        nu, tau, decay, amplitude, cutoff, cfl = ds.params
        return BurgersSpec(g.n_space, g.n_time, nu, tau, decay, amplitude, int(cutoff), cfl)
    raise ParameterError(f"no generator spec for {ds.generator!r}")
