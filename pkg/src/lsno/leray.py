"""Leray-Schauder projections onto a finite family and reconstruction from coefficients.

Fixed mode weighs the centers of an epsilon-net by the cutoff functions
``mu_i(x) = max(0, eps - ||x - x_i||)``; learned mode replaces the cutoffs by
nonnegative mu-networks.  Either way the coefficient vector
``q_i = mu_i / sum_j mu_j`` lies on the probability simplex and is the
coordinate vector of the projected function in the spanning family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .epsnet import EpsNet
from .errors import DimensionError, DomainError, NotCovered, ParameterError
from .grid import GridFunction
from .nn import MlpSpec, MuNetSpec, conv_layout, mlp_eval, mlp_forward, mu_forward_batch
from .tensor import Tensor

DENOMINATOR_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class LerayCoefficients:
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 1:
            raise DimensionError("coefficients must be a vector")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ParameterError("coefficients must lie on the probability simplex")
        object.__setattr__(self, "q", q)


@dataclass(frozen=True, eq=False)
class OutputCoefficients:
    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if not np.all(np.isfinite(b)):
            raise ParameterError("output coefficients must be finite")
        object.__setattr__(self, "b", b)


def project_fixed_batch(values: np.ndarray, net: EpsNet) -> np.ndarray:
    """Simplex coefficients ``(B, n)`` for a batch of ``(B, *grid, M)`` inputs.

    Raises :class:`NotCovered` if some input is at distance >= eps from every center.
    """
    mu = net.mu(values)
    total = mu.sum(axis=1, keepdims=True)
    bad = np.flatnonzero(total[:, 0] <= 0)
    if bad.size:
        raise NotCovered(f"inputs {bad.tolist()[:10]} lie outside every center's eps-ball")
    return mu / total


def project_fixed(x: GridFunction, net: EpsNet) -> LerayCoefficients:
    if net.axes is not None and not x.same_grid(GridFunction(net.centers[0], net.axes)):
        raise DimensionError("input is not on the net's grid")
    return LerayCoefficients(project_fixed_batch(x.values[None], net)[0])


def projected_function(q: np.ndarray, net: EpsNet) -> np.ndarray:
    """``P_n x = sum_i q_i x_i`` for coefficient rows ``q`` of shape ``(B, n)``."""
    return np.tensordot(np.atleast_2d(q), net.centers, axes=(1, 0))


def project_learned_batch(params: Mapping[str, Tensor], spec: MuNetSpec, layout: Tensor, n: int,
                          prefix: str = "mu", shared_trunk: bool = False) -> Tensor:
    """Differentiable simplex coefficients from mu-networks; ``layout`` is ``(B, C, L)``."""
    mu = mu_forward_batch(params, spec, layout, n, prefix, shared_trunk)
    total = T.clamp_min(T.reduce_sum(mu, axis=1, keepdims=True), DENOMINATOR_FLOOR)
    return T.div(mu, T.expand(total, mu.shape))


def project_learned(y: GridFunction, params: Mapping[str, Tensor], spec: MuNetSpec,
                    prefix: str = "mu", shared_trunk: bool = False) -> LerayCoefficients:
    n = params[f"{prefix}.head.w0"].shape[0]
    with T.no_grad():
        q = project_learned_batch(params, spec, Tensor(conv_layout(y.values[None])), n, prefix, shared_trunk)
    return LerayCoefficients(q.data[0])


def evaluate_basis(params: Mapping[str, Tensor], spec: MlpSpec, points, prefix: str = "g") -> Tensor:
    """Stacked basis networks at ``points`` ``(P, d)`` -> ``(n, P, M)``."""
    points = T.as_tensor(points)
    if points.ndim != 2:
        raise DimensionError(f"points must be (P, d), got {points.shape}")
    if np.any(points.data < 0) or np.any(points.data > 1):
        raise DomainError("evaluation points must lie in the unit domain [0, 1]^d")
    return mlp_forward(params, spec, points, prefix)


def combine(b, basis: Tensor) -> Tensor:
    """``psi = sum_i b_i g_i``: ``b`` is ``(B, n)`` or ``(n,)``; result ``(B, P, M)`` or ``(P, M)``."""
    b = T.as_tensor(b)
    n, p, m = basis.shape
    single = b.ndim == 1
    if b.shape[-1] != n:
        raise DimensionError(f"{b.shape[-1]} coefficients for {n} basis functions")
    rows = T.reshape(b, (1, n)) if single else b
    out = T.matmul(rows, T.reshape(basis, (n, p * m)))
    return T.reshape(out, (p, m) if single else (rows.shape[0], p, m))


def evaluate_basis_pointwise(params: Mapping[str, Tensor], spec: MlpSpec, points, prefix: str = "g",
                             chunk: int = 4096) -> np.ndarray:
    """Tape-free :func:`evaluate_basis`; each point's values are independent of
    the other points in the query, bit for bit."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError(f"points must be (P, d), got {points.shape}")
    if np.any(points < 0) or np.any(points > 1):
        raise DomainError("evaluation points must lie in the unit domain [0, 1]^d")
    parts = [mlp_eval(params, spec, points[i : i + chunk], prefix) for i in range(0, len(points), chunk)]
    return np.concatenate(parts, axis=1)


def combine_pointwise(b: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """``sum_i b_i g_i`` accumulated in index order; ``b`` is ``(B, n)``."""
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if b.shape[-1] != basis.shape[0]:
        raise DimensionError(f"{b.shape[-1]} coefficients for {basis.shape[0]} basis functions")
    out = b[:, 0, None, None] * basis[0][None]
    for i in range(1, basis.shape[0]):
        out += b[:, i, None, None] * basis[i][None]
    return out


def reconstruct(b, params: Mapping[str, Tensor], spec: MlpSpec, points, prefix: str = "g") -> Tensor:
    if isinstance(b, OutputCoefficients):
        b = b.b
    return combine(b, evaluate_basis(params, spec, points, prefix))
