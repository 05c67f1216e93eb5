"""Basis networks, coefficient network, mu-networks, and the optimizer.

Networks are stored as flat named arrays.  A *stacked* network holds ``n``
independent copies of one architecture in arrays with a leading axis of
length ``n`` so that all copies run in a single batched matmul.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .grid import GridFunction
from .tensor import Tensor

ACTIVATIONS = {
    "tanh": T.tanh,
    "relu": T.relu,
    "softplus": T.softplus,
    "sigmoid": T.sigmoid,
}


def activate(name: str | None, x: Tensor) -> Tensor:
    if name is None or name in ("none", "linear"):
        return x
    try:
        return ACTIVATIONS[name](x)
    except KeyError:
        raise ParameterError(f"unknown activation {name!r}") from None


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    final_activation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2 or min(self.layer_widths) < 1:
            raise ParameterError(f"invalid layer widths {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


@dataclass(frozen=True)
class MuNetSpec:
    """Convolutional mu-network: conv stack, global average pool, dense head.

    With ``channels == ()`` the conv stack is dropped and the head reads the
    flattened discretized input directly; ``hidden_layers=1`` then gives the
    single-hidden-layer feed-forward variant.
    """

    channels: tuple[int, ...] = (16, 32)
    kernel_widths: tuple[int, ...] = (5, 5)
    strides: tuple[int, ...] = (2, 2)
    activation: str = "tanh"
    head_width: int = 32
    hidden_layers: int = 1
    final_nonlinearity: str = "softplus"
    scale: float = 1.0

    def __post_init__(self):
        for name in ("channels", "kernel_widths", "strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not len(self.channels) == len(self.kernel_widths) == len(self.strides):
            raise ParameterError("channels, kernel_widths and strides must have equal length")
        if self.final_nonlinearity not in ("softplus", "sigmoid_scaled"):
            raise ParameterError(f"unknown final nonlinearity {self.final_nonlinearity!r}")
        if self.hidden_layers < 0 or self.head_width < 1:
            raise ParameterError("invalid head configuration")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    def output_length(self, length: int) -> int:
        for w, s in zip(self.kernel_widths, self.strides):
            if w > length:
                raise DimensionError(f"conv width {w} exceeds feature length {length}")
            length = (length - w) // s + 1
        return length

    def head_widths(self, in_channels: int, length: int) -> tuple[int, ...]:
        first = self.channels[-1] if self.channels else in_channels * length
        return (first,) + (self.head_width,) * self.hidden_layers + (1,)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def init_mlp(spec: MlpSpec, seed, prefix: str = "mlp", stack: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases.  ``stack`` adds a leading copy axis."""
    rng = _rng(seed)
    lead = () if stack is None else (stack,)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_widths, spec.layer_widths[1:])):
        params[f"{prefix}.w{i}"] = glorot(rng, lead + (fan_in, fan_out), fan_in, fan_out)
        params[f"{prefix}.b{i}"] = np.zeros(lead + (fan_out,))
    return params


def init_mu(spec: MuNetSpec, in_channels: int, length: int, n: int, seed,
            prefix: str = "mu", shared_trunk: bool = False) -> dict[str, np.ndarray]:
    rng = _rng(seed)
    params = {}
    c_in = in_channels
    conv_lead = () if shared_trunk else (n,)
    for i, (c_out, w) in enumerate(zip(spec.channels, spec.kernel_widths)):
        params[f"{prefix}.conv{i}.w"] = glorot(rng, conv_lead + (c_out, c_in, w), c_in * w, c_out * w)
        params[f"{prefix}.conv{i}.b"] = np.zeros(conv_lead + (c_out,))
        c_in = c_out
    widths = spec.head_widths(in_channels, spec.output_length(length) if spec.channels else length)
    head = MlpSpec(widths, spec.activation)
    params.update(init_mlp(head, rng, f"{prefix}.head", stack=n))
    return params


def init_params(spec: MlpSpec | MuNetSpec, seed, **kwargs) -> dict[str, np.ndarray]:
    if isinstance(spec, MlpSpec):
        return init_mlp(spec, seed, **kwargs)
    return init_mu(spec, seed=seed, **kwargs)


def mlp_forward(params: Mapping[str, Tensor], spec: MlpSpec, x: Tensor, prefix: str = "mlp") -> Tensor:
    """Affine layers with ``spec.activation`` between them.

    ``x`` is ``(batch, d_in)`` for a single network, or ``(n, batch, d_in)``
    when the weights are stacked with leading axis ``n``.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != spec.layer_widths[0]:
        raise DimensionError(f"input width {x.shape[-1]} != first layer width {spec.layer_widths[0]}")
    for i in range(spec.n_layers):
        w, b = params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"]
        if w.ndim == 3 and x.ndim == 2:
            x = T.expand(T.reshape(x, (1,) + x.shape), (w.shape[0],) + x.shape)
        x = T.matmul(x, w)
        bias = b if b.ndim == 1 else T.reshape(b, (b.shape[0], 1, b.shape[1]))
        x = T.add_bias(x, bias)
        last = i == spec.n_layers - 1
        x = activate(spec.final_activation if last else spec.activation, x)
    return x


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` accumulated over the inner axis in a fixed order.

    Every output row depends only on the matching input row, bit for bit,
    whatever the number of rows; BLAS kernels do not promise that.
    """
    out = x[..., :, 0:1] * w[..., 0:1, :]
    for k in range(1, w.shape[-2]):
        out += x[..., :, k : k + 1] * w[..., k : k + 1, :]
    return out


def mlp_eval(params: Mapping[str, Tensor], spec: MlpSpec, x: np.ndarray, prefix: str = "mlp") -> np.ndarray:
    """Tape-free :func:`mlp_forward` whose rows are computed independently."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.layer_widths[0]:
        raise DimensionError(f"input width {x.shape[-1]} != first layer width {spec.layer_widths[0]}")
    for i in range(spec.n_layers):
        w, b = _data(params[f"{prefix}.w{i}"]), _data(params[f"{prefix}.b{i}"])
        if w.ndim == 3 and x.ndim == 2:
            x = np.broadcast_to(x, (w.shape[0],) + x.shape)
        x = rowwise_matmul(x, w) + (b if b.ndim == 1 else b[:, None, :])
        last = i == spec.n_layers - 1
        with T.no_grad():
            x = activate(spec.final_activation if last else spec.activation, Tensor(x)).data
    return x


def _data(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else np.asarray(p)


def conv_layout(values: np.ndarray) -> np.ndarray:
    """``(B, *grid, M)`` samples -> ``(B, channels, L)`` for convolution.

    The convolution runs along the first grid axis; every remaining grid axis
    and the value channels are folded into the channel dimension.
    """
    values = np.asarray(values, dtype=np.float64)
    batch = values.shape[0]
    length = values.shape[1]
    moved = np.moveaxis(values, 1, -1)
    return np.ascontiguousarray(moved.reshape(batch, -1, length))


def mu_forward_batch(params: Mapping[str, Tensor], spec: MuNetSpec, y: Tensor, n: int,
                     prefix: str = "mu", shared_trunk: bool = False) -> Tensor:
    """Evaluate ``n`` mu-networks on a batch ``y`` of shape ``(B, C_in, L)`` -> ``(B, n)``."""
    y = T.as_tensor(y)
    batch = y.shape[0]
    h = y
    if spec.channels:
        for i, (c_out, stride) in enumerate(zip(spec.channels, spec.strides)):
            w, b = params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"]
            h = T.conv1d(h, w, stride)
            if w.ndim == 4:
                bias = T.reshape(b, (1, n, c_out, 1))
            else:
                bias = T.reshape(b, (1, c_out, 1))
            h = activate(spec.activation, T.add_bias(h, bias))
        features = T.reduce_mean(h, axis=-1)
        if shared_trunk:
            width = features.shape[-1]
            features = T.expand(T.reshape(features, (1, batch, width)), (n, batch, width))
        else:
            features = T.transpose(features, (1, 0, 2))
    else:
        flat = T.reshape(h, (1, batch, -1))
        features = T.expand(flat, (n,) + flat.shape[1:])
    head = MlpSpec((features.shape[-1],) + (spec.head_width,) * spec.hidden_layers + (1,), spec.activation)
    z = mlp_forward(params, head, features, f"{prefix}.head")
    z = T.transpose(T.reshape(z, (n, batch)), (1, 0))
    if spec.final_nonlinearity == "softplus":
        return T.softplus(z)
    return T.mul(T.sigmoid(z), spec.scale)


def mu_forward(params: Mapping[str, Tensor], spec: MuNetSpec, y: GridFunction,
               prefix: str = "mu", shared_trunk: bool = False) -> Tensor:
    """mu-network values for a single discretized function, shape ``(n,)``."""
    n = params[f"{prefix}.head.w0"].shape[0]
    layout = conv_layout(y.values[None])
    out = mu_forward_batch(params, spec, Tensor(layout), n, prefix, shared_trunk)
    return T.reshape(out, (n,))


class ParamStore:
    """Named trainable tensors plus Adam moment buffers and a step counter."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self.params: dict[str, Tensor] = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
                                          for k, v in arrays.items()}
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.step = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def n_scalars(self) -> int:
        return sum(p.size for p in self.params.values())


def _require_grads(store: ParamStore):
    missing = [k for k, p in store.params.items() if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}; run backward first")


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8) -> ParamStore:
    """Bias-corrected Adam update in place; gradients are left for the caller to zero."""
    _require_grads(store)
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for k, p in store.params.items():
        g = p.grad
        m, v = store.m[k], store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps_adam)
    return store


def sgd_step(store: ParamStore, lr: float = 1e-3) -> ParamStore:
    _require_grads(store)
    store.step += 1
    for p in store.params.values():
        p.data -= lr * p.grad
    return store
