"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], array: np.ndarray, step: float = 1e-6,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``array`` (perturbed in place).

    With ``indices`` only those entries are differenced; the rest stay zero.
    """
    grad = np.zeros_like(array)
    targets = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in targets:
        orig = array[idx]
        array[idx] = orig + step
        up = fn().item()
        array[idx] = orig - step
        down = fn().item()
        array[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def relative_error(auto: np.ndarray, fd: np.ndarray) -> float:
    """``||auto - fd|| / (||fd|| + 1e-8)`` in the Euclidean norm."""
    auto, fd = np.ravel(auto), np.ravel(fd)
    return float(np.linalg.norm(auto - fd) / (np.linalg.norm(fd) + 1e-8))


def check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-6,
          samples: int | None = None, rng: np.random.Generator | None = None) -> list[float]:
    """Relative error of the tape gradient of ``fn`` for every input tensor.

    ``samples`` limits the number of perturbed entries per input; chosen
    entries are compared only against their own finite differences.
    """
    for t in inputs:
        t.grad = None
    fn().backward()
    errors = []
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        auto = t.grad if t.grad is not None else np.zeros_like(t.data)
        if samples is not None and samples < t.size:
            flat = rng.choice(t.size, size=samples, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
            fd = numeric_grad(fn, t.data, step, idx)
            picks = tuple(np.array(c) for c in zip(*idx))
            errors.append(relative_error(auto[picks], fd[picks]))
        else:
            errors.append(relative_error(auto, numeric_grad(fn, t.data, step)))
    return errors
