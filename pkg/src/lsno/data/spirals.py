"""Integral-equation spirals solved by fixed-point (Picard) iteration.

The curves solve the Volterra equation

    y(t) = int_0^t A(t - s) tanh(2 pi y(s)) ds + z0 + (cos t, cos(t + pi))

with the rotation-reflection kernel
``A(r) = [[cos 2 pi r, -sin 2 pi r], [-sin 2 pi r, -cos 2 pi r]]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ConvergenceError, ParameterError


@dataclass(frozen=True)
class IEKernelSpec:
    n_time: int = 100
    z0_low: float = -2.0
    z0_high: float = 2.0
    tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self):
        if self.n_time < 2:
            raise ParameterError("n_time must be >= 2")
        if not self.tol > 0:
            raise ParameterError("tolerance must be positive")
        if not (np.isfinite(self.z0_low) and np.isfinite(self.z0_high) and self.z0_low < self.z0_high):
            raise ParameterError("z0 range must be finite with low < high")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_time)

    def params(self) -> tuple[float, ...]:
        return (self.z0_low, self.z0_high, self.tol, float(self.max_iter))


def kernel_matrix(r: np.ndarray) -> np.ndarray:
    """``A(r)`` for an array of lags, shape ``(*r.shape, 2, 2)``."""
    c, s = np.cos(2 * np.pi * r), np.sin(2 * np.pi * r)
    return np.stack([np.stack([c, -s], -1), np.stack([-s, -c], -1)], -2)


def forcing(t: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(t), np.cos(t + np.pi)], axis=-1)


@lru_cache(maxsize=8)
def _volterra_weights(n_time: int) -> np.ndarray:
    """Trapezoid weights for int_0^{t_j}, times the kernel: shape (T, T, 2, 2).

    Row ``j`` integrates over nodes ``0..j`` so the upper limit is always a node.
    """
    t = np.linspace(0.0, 1.0, n_time)
    h = t[1] - t[0]
    w = np.zeros((n_time, n_time))
    for j in range(1, n_time):
        w[j, : j + 1] = h
        w[j, 0] = w[j, j] = h / 2
    lags = t[:, None] - t[None, :]
    weighted = w[:, :, None, None] * kernel_matrix(lags)
    weighted.setflags(write=False)
    return weighted


def ie_rhs(y: np.ndarray, z0, spec: IEKernelSpec) -> np.ndarray:
    """Right-hand side of the integral equation for a trajectory ``y`` of shape (T, 2)."""
    weighted = _volterra_weights(spec.n_time)
    integral = np.einsum("jlab,lb->ja", weighted, np.tanh(2 * np.pi * y))
    return integral + np.asarray(z0, dtype=np.float64) + forcing(spec.t)


def solve_ie(z0, spec: IEKernelSpec = IEKernelSpec(), history: list | None = None) -> np.ndarray:
    """Banach-Caccioppoli iteration until the sup-norm update drops below ``spec.tol``.

    If ``history`` is given, the sup-norm distance between successive iterates
    is appended to it at every step.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.shape != (2,):
        raise ParameterError(f"z0 must be a 2-vector, got shape {z0.shape}")
    y = z0 + forcing(spec.t)
    update = np.inf
    for _ in range(spec.max_iter):
        y_next = ie_rhs(y, z0, spec)
        update = float(np.max(np.abs(y_next - y)))
        if history is not None:
            history.append(update)
        y = y_next
        if update < spec.tol:
            return y
    raise ConvergenceError(
        f"fixed-point iteration did not reach tol={spec.tol} in {spec.max_iter} iterations "
        f"(last update {update:.3e})",
        residual=update,
    )


def ie_residual(y: np.ndarray, z0, spec: IEKernelSpec) -> float:
    """Sup-norm mismatch between ``y`` and the right-hand side evaluated at ``y``."""
    return float(np.max(np.abs(ie_rhs(y, z0, spec) - y)))
