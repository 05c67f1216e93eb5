"""The Leray-Schauder neural operator.

Pipeline for one sample: linearly interpolate the t = 0 and t = 1 snapshots
into an input function y, project y onto the span of the basis networks
(simplex coefficients q), map q to output coefficients b with the
coefficient network, and output ``psi = sum_i b_i g_i`` evaluated wherever
the prediction is wanted.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data.dataset import Dataset, Sample
from .epsnet import EpsNet, build_greedy, suggest_eps
from .errors import DimensionError, ParameterError, TrainingDiverged
from .grid import GridFunction, SpaceTimeGrid
from .leray import (
    combine,
    combine_pointwise,
    evaluate_basis,
    evaluate_basis_pointwise,
    project_fixed_batch,
    project_learned_batch,
)
from .nn import MlpSpec, MuNetSpec, ParamStore, adam_step, conv_layout, init_mlp, init_mu, mlp_forward, sgd_step
from .quadrature import grid_norm
from .tensor import Tensor

logger = logging.getLogger(__name__)

MODES = ("learned_mu", "fixed_mu")
MASKS = ("none", "alternate")


@dataclass(frozen=True)
class ModelConfig:
    n_basis: int = 16
    mode: str = "learned_mu"
    g_hidden: tuple[int, ...] = (64, 64)
    g_activation: str = "tanh"
    f_hidden: tuple[int, ...] = (128, 128)
    f_activation: str = "tanh"
    mu_channels: tuple[int, ...] = (16, 32)
    mu_kernels: tuple[int, ...] = (5, 5)
    mu_strides: tuple[int, ...] = (2, 2)
    mu_activation: str = "tanh"
    mu_head_width: int = 32
    mu_hidden_layers: int = 1
    mu_final: str = "softplus"
    mu_scale: float = 1.0
    mu_shared: bool = False
    norm_p: float = 2.0
    eps: float = 0.0
    eps_quantile: float = 0.4
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 500
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    validation_fraction: float = 0.1
    patience: int = 0
    mask: str = "none"

    def __post_init__(self):
        if self.n_basis < 1:
            raise ParameterError("n_basis must be >= 1")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.mask not in MASKS:
            raise ParameterError(f"mask must be one of {MASKS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError("optimizer must be adam or sgd")
        if self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise ParameterError("validation_fraction must lie in [0, 1)")
        if self.eps < 0:
            raise ParameterError("eps must be nonnegative (0 selects the quantile heuristic)")

    def g_spec(self, grid: SpaceTimeGrid) -> MlpSpec:
        return MlpSpec((grid.domain_dim, *self.g_hidden, grid.channels), self.g_activation)

    def f_spec(self) -> MlpSpec:
        return MlpSpec((self.n_basis, *self.f_hidden, self.n_basis), self.f_activation)

    def mu_spec(self) -> MuNetSpec:
        return MuNetSpec(self.mu_channels, self.mu_kernels, self.mu_strides, self.mu_activation,
                         self.mu_head_width, self.mu_hidden_layers, self.mu_final, self.mu_scale)


def interpolate_batch(initial: np.ndarray, final: np.ndarray, t) -> np.ndarray:
    """``y(x, t) = (1 - t) y(x, 0) + t y(x, 1)`` for ``(B, S, M)`` snapshots -> ``(B, S, T, M)``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1 or np.any(t < 0) or np.any(t > 1):
        raise ParameterError("interpolation times must lie in [0, 1]")
    w = t[None, None, :, None]
    return (1.0 - w) * initial[:, :, None, :] + w * final[:, :, None, :]


def interpolate_init(sample: Sample, t_grid) -> GridFunction:
    values = interpolate_batch(sample.initial[None], sample.final[None], t_grid)[0]
    t_grid = np.asarray(t_grid, dtype=np.float64)
    n_space = values.shape[0]
    if n_space == 1:
        return GridFunction(values[0], (t_grid,))
    return GridFunction(values, (np.arange(n_space) / n_space, t_grid))


def loss(psi: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error over nodes and channels; ``mask`` weights nodes (0/1)."""
    target = T.as_tensor(target)
    if psi.shape != target.shape:
        raise DimensionError(f"prediction {psi.shape} vs target {target.shape}")
    sq = T.square(T.sub(psi, target))
    if mask is None:
        return T.reduce_mean(sq)
    weights = np.broadcast_to(mask, psi.shape)
    return T.div(T.reduce_sum(T.mul(sq, Tensor(weights))), float(weights.sum()))


def node_mask(grid: SpaceTimeGrid, kind: str) -> np.ndarray | None:
    """Per-node loss weights of shape ``(P, 1)`` for the chosen masking pattern."""
    if kind == "none":
        return None
    keep = (np.arange(grid.n_time) % 2 == 0).astype(np.float64)
    per_node = np.broadcast_to(keep, (grid.n_space, grid.n_time)).reshape(-1)
    return per_node[:, None]


class LerayOperator:
    """Parameters and forward pass of the operator on one space-time grid."""

    def __init__(self, config: ModelConfig, grid: SpaceTimeGrid, params: dict[str, np.ndarray],
                 net: EpsNet | None = None, step: int = 0):
        if config.mode == "fixed_mu" and net is None:
            raise ParameterError("fixed mode needs an epsilon-net")
        self.config = config
        self.grid = grid
        self.net = net
        self.store = ParamStore(params)
        self.store.step = step
        self._points = grid.points()

    # construction

    @classmethod
    def initialize(cls, config: ModelConfig, grid: SpaceTimeGrid, train: Dataset | None = None) -> "LerayOperator":
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        net = None
        if config.mode == "fixed_mu":
            if train is None or len(train) == 0:
                raise ParameterError("fixed mode builds its epsilon-net from training data")
            inputs = interpolate_batch(train.initial, train.final, grid.t).reshape(len(train), *grid.grid_shape, grid.channels)
            norm = grid_norm(grid, config.norm_p)
            eps = config.eps if config.eps > 0 else suggest_eps(inputs, norm, config.eps_quantile)
            net = build_greedy(inputs, eps, norm)
            net.axes = grid.axes
            config = replace(config, n_basis=len(net), eps=eps)
        n = config.n_basis
        params = init_mlp(config.g_spec(grid), np.random.default_rng(seeds[0]), "g", stack=n)
        params.update(init_mlp(config.f_spec(), np.random.default_rng(seeds[1]), "f"))
        if config.mode == "learned_mu":
            length = grid.grid_shape[0]
            channels = grid.channels * (grid.n_time if grid.has_space else 1)
            params.update(init_mu(config.mu_spec(), channels, length, n, np.random.default_rng(seeds[2]),
                                  "mu", shared_trunk=config.mu_shared))
        return cls(config, grid, params, net)

    @property
    def n_basis(self) -> int:
        return self.config.n_basis

    @property
    def params(self) -> ParamStore:
        return self.store

    # forward pass

    def inputs(self, initial: np.ndarray, final: np.ndarray) -> np.ndarray:
        """Interpolated input functions as ``(B, *grid, M)`` values."""
        g = self.grid
        if initial.shape[1:] != (g.n_space, g.channels) or final.shape != initial.shape:
            raise DimensionError(f"snapshots {initial.shape} do not fit grid {g}")
        y = interpolate_batch(initial, final, g.t)
        return y.reshape(len(initial), *g.grid_shape, g.channels)

    def coefficients(self, inputs: np.ndarray) -> Tensor:
        """Simplex coefficients q, ``(B, n)``; differentiable in learned mode."""
        if self.config.mode == "fixed_mu":
            return Tensor(project_fixed_batch(inputs, self.net))
        return project_learned_batch(self.store.params, self.config.mu_spec(), Tensor(conv_layout(inputs)),
                                     self.n_basis, "mu", self.config.mu_shared)

    def output_coefficients(self, q: Tensor) -> Tensor:
        return mlp_forward(self.store.params, self.config.f_spec(), q, "f")

    def basis(self, points: np.ndarray | None = None) -> Tensor:
        """Basis networks at ``points`` (default: the training grid), ``(n, P, M)``."""
        points = self._points if points is None else points
        return evaluate_basis(self.store.params, self.config.g_spec(self.grid), points, "g")

    def forward_arrays(self, initial: np.ndarray, final: np.ndarray, basis: Tensor | None = None) -> Tensor:
        """Prediction ``(B, P, M)`` on the basis points for a batch of snapshots."""
        q = self.coefficients(self.inputs(initial, final))
        b = self.output_coefficients(q)
        return combine(b, self.basis() if basis is None else basis)

    def forward(self, sample: Sample) -> GridFunction:
        psi = self.predict(sample.initial[None], sample.final[None])[0]
        g = self.grid
        return GridFunction(psi.reshape(*g.grid_shape, g.channels), g.axes)

    def sample_coefficients(self, initial: np.ndarray, final: np.ndarray) -> np.ndarray:
        """Output coefficients ``b`` of shape ``(B, n)``, one sample at a time.

        Every sample goes through identically shaped computations, so its
        coefficients do not depend on the rest of the batch.
        """
        out = np.empty((len(initial), self.n_basis))
        with T.no_grad():
            for i in range(len(initial)):
                q = self.coefficients(self.inputs(initial[i : i + 1], final[i : i + 1]))
                out[i] = self.output_coefficients(q).data[0]
        return out

    def predict(self, initial: np.ndarray, final: np.ndarray, grid: SpaceTimeGrid | None = None) -> np.ndarray:
        """Trajectories ``(B, S', T', M)`` on ``grid`` (default: the training grid).

        Coefficients always come from the training-resolution input; only the
        basis evaluation uses the requested grid.  Each predicted value depends
        only on its own sample and point, so restricting a prediction on a
        refined grid reproduces the coarse prediction bit for bit.
        """
        grid = self.grid if grid is None else grid
        if grid.channels != self.grid.channels or grid.has_space != self.grid.has_space:
            raise DimensionError(f"cannot evaluate on {grid}: incompatible with {self.grid}")
        b = self.sample_coefficients(initial, final)
        basis = evaluate_basis_pointwise(self.store.params, self.config.g_spec(self.grid), grid.points(), "g")
        psi = combine_pointwise(b, basis)
        return psi.reshape(len(initial), grid.n_space, grid.n_time, grid.channels)

    def predict_batched(self, initial: np.ndarray, final: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Fast training-grid prediction through batched kernels (training metrics)."""
        g = self.grid
        out = np.empty((len(initial), g.n_space, g.n_time, g.channels))
        with T.no_grad():
            basis = self.basis()
            for i in range(0, len(initial), chunk):
                psi = self.forward_arrays(initial[i : i + chunk], final[i : i + chunk], basis)
                out[i : i + chunk] = psi.data.reshape(-1, g.n_space, g.n_time, g.channels)
        return out

    def predict_dataset(self, dataset: Dataset, grid: SpaceTimeGrid | None = None) -> np.ndarray:
        return self.predict(dataset.initial, dataset.final, grid)


def predict_upsampled(model: LerayOperator, sample: Sample, factor: int) -> np.ndarray:
    """Prediction on a grid ``factor`` times finer in every direction, ``(S', T', M)``."""
    fine = model.grid.refine(factor)
    return model.predict(sample.initial[None], sample.final[None], fine)[0]


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)

    def append(self, epoch, train_mse, val_mse, wall):
        self.epoch.append(epoch)
        self.train_mse.append(train_mse)
        self.val_mse.append(val_mse)
        self.wall_seconds.append(wall)

    def to_csv(self) -> str:
        lines = ["epoch,train_mse,val_mse,wall_seconds"]
        for row in zip(self.epoch, self.train_mse, self.val_mse, self.wall_seconds):
            lines.append(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]:.3f}")
        return "\n".join(lines) + "\n"

    def metrics_equal(self, other: "History") -> bool:
        """Bitwise equality of the epoch and MSE columns (timing excluded)."""
        a = np.array([self.epoch, self.train_mse, self.val_mse], dtype=np.float64)
        b = np.array([other.epoch, other.train_mse, other.val_mse], dtype=np.float64)
        return a.shape == b.shape and a.tobytes() == b.tobytes()


def split_train_validation(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    n_val = int(math.floor(fraction * len(dataset)))
    order = np.random.default_rng(np.random.SeedSequence([seed, 1])).permutation(len(dataset))
    return dataset.subset(np.sort(order[n_val:])), dataset.subset(np.sort(order[:n_val]))


def dataset_mse(model: LerayOperator, dataset: Dataset, mask: np.ndarray | None = None) -> float:
    if len(dataset) == 0:
        return float("nan")
    pred = model.predict_batched(dataset.initial, dataset.final)
    sq = (pred - dataset.trajectories) ** 2
    if mask is None:
        return float(sq.mean())
    weights = np.broadcast_to(mask.reshape(1, model.grid.n_space, model.grid.n_time, 1), sq.shape)
    return float((sq * weights).sum() / weights.sum())


def train(config: ModelConfig, dataset: Dataset, model: LerayOperator | None = None,
          callback=None) -> tuple[LerayOperator, History]:
    """Minibatch training loop; deterministic for a fixed seed and thread count.

    ``train_mse`` in the history is the training objective (masked if a mask is
    configured) evaluated after each epoch; ``val_mse`` is the full-grid MSE on
    the held-out validation split.
    """
    grid = dataset.grid
    train_set, val_set = split_train_validation(dataset, config.validation_fraction, config.seed)
    if len(train_set) == 0:
        raise ParameterError("training split is empty")
    if model is None:
        model = LerayOperator.initialize(config, grid, train_set)
    config = model.config
    mask = node_mask(grid, config.mask)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    history = History()
    best = (math.inf, None)
    stale = 0
    start = time.perf_counter()
    targets = train_set.trajectories.reshape(len(train_set), -1, grid.channels)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        for lo in range(0, len(order), config.batch_size):
            idx = np.sort(order[lo : lo + config.batch_size])
            psi = model.forward_arrays(train_set.initial[idx], train_set.final[idx])
            value = loss(psi, targets[idx], mask)
            if not np.isfinite(value.item()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; lower the learning rate (now {config.lr})"
                )
            model.store.zero_grad()
            value.backward()
            if config.optimizer == "adam":
                adam_step(model.store, config.lr, config.beta1, config.beta2, config.adam_eps)
            else:
                sgd_step(model.store, config.lr)
        train_mse = dataset_mse(model, train_set, mask)
        val_mse = dataset_mse(model, val_set)
        if not np.isfinite(train_mse):
            raise TrainingDiverged(f"non-finite training MSE after epoch {epoch}; lower the learning rate")
        history.append(epoch, train_mse, val_mse, time.perf_counter() - start)
        if callback is not None:
            callback(epoch, train_mse, val_mse)
        logger.debug("epoch %d train %.6g val %.6g", epoch, train_mse, val_mse)
        if config.patience > 0 and len(val_set):
            if val_mse < best[0]:
                best, stale = (val_mse, model.store.arrays()), 0
            else:
                stale += 1
                if stale >= config.patience:
                    for k, v in best[1].items():
                        model.store[k].data[...] = v
                    break
    model.store.zero_grad()
    return model, history


@dataclass
class EvalReport:
    per_sample: list[float]
    mean: float
    std: float

    def summary(self) -> str:
        return f"{self.mean:.4f}±{self.std:.4f}"


def evaluate(model: LerayOperator, dataset: Dataset, predictions: np.ndarray | None = None) -> EvalReport:
    """Per-sample MSE over full trajectories, with mean and population std."""
    if len(dataset) == 0:
        raise ParameterError("test set is empty")
    pred = model.predict_dataset(dataset) if predictions is None else predictions
    per = ((pred - dataset.trajectories) ** 2).reshape(len(dataset), -1).mean(axis=1)
    return EvalReport([float(v) for v in per], float(per.mean()), float(per.std()))
