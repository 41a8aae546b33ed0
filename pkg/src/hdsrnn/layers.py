"""Recurrent building blocks: LSTM cell, affine map, inverted dropout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` applied to the last axis of ``x`` (any leading batch dims)."""
    out_dim, in_dim = weight.shape
    if x.shape[-1] != in_dim:
        raise DimensionError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    flat = tn.reshape(x, (-1, in_dim))
    y = tn.matmul(flat, tn.transpose(weight))
    if bias is not None:
        y = tn.add(y, tn.broadcast_to(bias, y.shape))
    return tn.reshape(y, lead + (out_dim,))


@dataclass
class AffineLayer:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "affine"):
        return cls(
            Tensor(xavier_uniform(rng, out_dim, in_dim), requires_grad=True, name=f"{name}.weight"),
            Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias"),
        )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def affine(layer: AffineLayer, x: Tensor) -> Tensor:
    return linear(x, layer.weight, layer.bias)


@dataclass
class LstmCell:
    """LSTM cell with the four gate matrices fused row-wise in i, f, g, o order.

    ``weight`` has shape (4m, input_dim + m) and acts on ``[x; h_prev]``.
    """

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, name: str = "lstm",
             forget_bias: float = 1.0):
        m = hidden_dim
        w = np.concatenate([xavier_uniform(rng, m, input_dim + m) for _ in range(4)], axis=0)
        b = np.zeros(4 * m)
        b[m:2 * m] = forget_bias
        return cls(
            Tensor(w, requires_grad=True, name=f"{name}.weight"),
            Tensor(b, requires_grad=True, name=f"{name}.bias"),
        )

    @property
    def hidden_dim(self) -> int:
        return self.weight.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1] - self.hidden_dim

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def lstm_step(cell: LstmCell, x: Tensor, h_prev: Tensor, s_prev: Tensor):
    """Advance one step; returns ``(h, s)``.  Accepts ``(d,)`` or batched ``(B, d)`` inputs."""
    m = cell.hidden_dim
    if x.shape[-1] != cell.input_dim or h_prev.shape[-1] != m or s_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_step: x {x.shape}, h {h_prev.shape}, s {s_prev.shape} "
            f"incompatible with cell ({cell.input_dim} -> {m})"
        )
    if x.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(f"lstm_step: batch shapes differ, x {x.shape} vs h {h_prev.shape}")
    z = linear(tn.concat([x, h_prev], axis=-1), cell.weight, cell.bias)
    ax = z.ndim - 1

    def gate(k):
        idx = [slice(None)] * z.ndim
        idx[ax] = slice(k * m, (k + 1) * m)
        return tn.getitem(z, tuple(idx))

    i = tn.sigmoid(gate(0))
    f = tn.sigmoid(gate(1))
    g = tn.tanh(gate(2))
    o = tn.sigmoid(gate(3))
    s = f * s_prev + i * g
    h = o * tn.tanh(s)
    return h, s


@dataclass
class DropoutSpec:
    rate: float = 0.2
    training: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigurationError(f"dropout rate must lie in [0, 1), got {self.rate}")


def dropout(spec: DropoutSpec, x: Tensor, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so the expectation is kept."""
    if not 0.0 <= spec.rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {spec.rate}")
    if not spec.training or spec.rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= spec.rate
    return tn.mul(x, Tensor(keep / (1.0 - spec.rate)))
