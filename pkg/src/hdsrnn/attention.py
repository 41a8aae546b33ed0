"""Spatial (encoder) and temporal (decoder) attention.

Shapes follow the window convention used across the package: an input window
``X`` is ``(n, T)`` (sensors by time) and the encoder output ``Z`` is ``(m, T)``.
Every operation also accepts a leading batch axis, i.e. ``(B, n, T)`` and
``(B, m, T)``, which is how the model runs them.

Three spatial score functions are provided:

``temporal_input``
    ``e[k] = v . tanh(W [h; s] + U X[k, :] + b)``, with ``U`` of shape (l, T).
``spatial_input``
    ``e[k] = v . tanh(W [h; s] + U X[:, t] + b)``, with ``U`` of shape (l, n).
    Nothing inside depends on ``k``, so every sensor gets the same score and
    the weights are uniform.  That is the formula as defined; it is kept
    verbatim so the ablation behaves as defined.
``hybrid``
    ``e[k] = v . tanh(W [h; s] + U X[k, :] + U' X[:, t] + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as tn
from .errors import ConfigurationError, DimensionError
from .layers import linear, xavier_uniform
from .tensor import Tensor


class SpatialVariant(str, Enum):
    TEMPORAL_INPUT = "temporal_input"
    SPATIAL_INPUT = "spatial_input"
    HYBRID = "hybrid"
    NONE = "none"

    @classmethod
    def parse(cls, value) -> "SpatialVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"ds_rnn": "temporal_input", "da_rnn": "temporal_input", "ds_rnn_ii": "spatial_input",
                   "hds_rnn": "hybrid", "seq2seq": "none"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ConfigurationError(f"unknown spatial variant {value!r}; valid variants: {valid}") from None

    @property
    def uses_series(self) -> bool:
        return self in (SpatialVariant.TEMPORAL_INPUT, SpatialVariant.HYBRID)

    @property
    def uses_snapshot(self) -> bool:
        return self in (SpatialVariant.SPATIAL_INPUT, SpatialVariant.HYBRID)


@dataclass
class SpatialAttentionParams:
    variant: SpatialVariant
    v: Tensor  # (l,)
    w: Tensor  # (l, 2m)
    u: Tensor  # (l, T) for temporal_input / hybrid, (l, n) for spatial_input
    b: Tensor  # (l,)
    u_prime: Tensor | None = None  # (l, n), hybrid only

    def __post_init__(self):
        self.variant = SpatialVariant.parse(self.variant)
        if self.variant is SpatialVariant.NONE:
            raise ConfigurationError("spatial attention parameters need a concrete variant")
        if (self.u_prime is not None) != (self.variant is SpatialVariant.HYBRID):
            raise ConfigurationError("u_prime must be given exactly when the variant is hybrid")
        l = self.v.shape[0]
        if self.w.shape[0] != l or self.u.shape[0] != l or self.b.shape != (l,):
            raise DimensionError(
                f"spatial attention width mismatch: v {self.v.shape}, w {self.w.shape}, "
                f"u {self.u.shape}, b {self.b.shape}"
            )

    @classmethod
    def init(cls, variant, n: int, T: int, m: int, width: int, rng: np.random.Generator, name="spatial"):
        variant = SpatialVariant.parse(variant)
        u_cols = n if variant is SpatialVariant.SPATIAL_INPUT else T
        u_prime = None
        if variant is SpatialVariant.HYBRID:
            u_prime = Tensor(xavier_uniform(rng, width, n), requires_grad=True, name=f"{name}.u_prime")
        return cls(
            variant=variant,
            v=Tensor(xavier_uniform(rng, 1, width)[0], requires_grad=True, name=f"{name}.v"),
            w=Tensor(xavier_uniform(rng, width, 2 * m), requires_grad=True, name=f"{name}.w"),
            u=Tensor(xavier_uniform(rng, width, u_cols), requires_grad=True, name=f"{name}.u"),
            b=Tensor(np.zeros(width), requires_grad=True, name=f"{name}.b"),
            u_prime=u_prime,
        )

    @property
    def width(self) -> int:
        return self.v.shape[0]

    def parameters(self, prefix: str) -> dict:
        out = {f"{prefix}.v": self.v, f"{prefix}.w": self.w, f"{prefix}.u": self.u, f"{prefix}.b": self.b}
        if self.u_prime is not None:
            out[f"{prefix}.u_prime"] = self.u_prime
        return out


@dataclass
class TemporalAttentionParams:
    v: Tensor  # (m,)
    w: Tensor  # (m, 2m)
    u: Tensor  # (m, m)
    b: Tensor  # (m,)

    def __post_init__(self):
        m = self.v.shape[0]
        if self.w.shape != (m, 2 * m) or self.u.shape != (m, m) or self.b.shape != (m,):
            raise DimensionError(
                f"temporal attention shapes inconsistent with m={m}: "
                f"w {self.w.shape}, u {self.u.shape}, b {self.b.shape}"
            )

    @classmethod
    def init(cls, m: int, rng: np.random.Generator, name="temporal"):
        return cls(
            v=Tensor(xavier_uniform(rng, 1, m)[0], requires_grad=True, name=f"{name}.v"),
            w=Tensor(xavier_uniform(rng, m, 2 * m), requires_grad=True, name=f"{name}.w"),
            u=Tensor(xavier_uniform(rng, m, m), requires_grad=True, name=f"{name}.u"),
            b=Tensor(np.zeros(m), requires_grad=True, name=f"{name}.b"),
        )

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.v": self.v, f"{prefix}.w": self.w, f"{prefix}.u": self.u, f"{prefix}.b": self.b}


def _batch(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    """Add a leading batch axis when ``x`` has exactly ``ndim`` dims."""
    if x.ndim == ndim:
        return tn.reshape(x, (1,) + x.shape), True
    if x.ndim == ndim + 1:
        return x, False
    raise DimensionError(f"expected {ndim} or {ndim + 1} dims, got shape {x.shape}")


def series_term(params: SpatialAttentionParams, X: Tensor) -> Tensor:
    """``U X[k, :] + b`` for every sensor, shape (B, n, l).  Constant over encoder steps."""
    B, n, T = X.shape
    if params.u.shape[1] != T:
        raise DimensionError(f"spatial U has {params.u.shape[1]} columns but the window has T={T}")
    l = params.width
    ux = tn.reshape(linear(tn.reshape(X, (B * n, T)), params.u), (B, n, l))
    return tn.add(ux, tn.broadcast_to(params.b, (B, n, l)))


def spatial_scores(params: SpatialAttentionParams, X: Tensor, t: int, h_prev: Tensor, s_prev: Tensor,
                   series_cache: Tensor | None = None) -> Tensor:
    """Scores ``e_t`` over the n sensors at encoder step ``t`` (0-based, ``0 <= t < T``).

    ``series_cache`` may carry :func:`series_term` for this window; it is
    step-invariant, so the encoder computes it once.
    """
    X, squeeze = _batch(X, 2)
    h_prev, _ = _batch(h_prev, 1)
    s_prev, _ = _batch(s_prev, 1)
    B, n, T = X.shape
    if not 0 <= t < T:
        raise IndexError(f"encoder step {t} outside window of length {T}")
    if h_prev.shape != s_prev.shape or h_prev.shape[0] != B:
        raise DimensionError(f"state shapes h {h_prev.shape}, s {s_prev.shape} do not match batch {B}")
    if params.w.shape[1] != 2 * h_prev.shape[1]:
        raise DimensionError(f"spatial W {params.w.shape} incompatible with hidden size {h_prev.shape[1]}")
    l = params.width
    variant = params.variant

    pre = linear(tn.concat([h_prev, s_prev], axis=-1), params.w)  # (B, l)
    snapshot_weight = None
    if variant is SpatialVariant.SPATIAL_INPUT:
        snapshot_weight = params.u
    elif variant is SpatialVariant.HYBRID:
        snapshot_weight = params.u_prime
    if snapshot_weight is not None:
        if snapshot_weight.shape[1] != n:
            raise DimensionError(f"snapshot weight {snapshot_weight.shape} incompatible with n={n}")
        x_t = tn.getitem(X, (slice(None), slice(None), t))  # (B, n)
        pre = tn.add(pre, linear(x_t, snapshot_weight))
    pre = tn.broadcast_to(tn.reshape(pre, (B, 1, l)), (B, n, l))

    if variant.uses_series:
        term = series_cache if series_cache is not None else series_term(params, X)
    else:
        term = tn.broadcast_to(params.b, (B, n, l))
    act = tn.tanh(tn.add(pre, term))
    e = tn.reshape(tn.matmul(tn.reshape(act, (B * n, l)), tn.reshape(params.v, (l, 1))), (B, n))
    return tn.reshape(e, (n,)) if squeeze else e


def spatial_weights(e: Tensor) -> Tensor:
    """Softmax over sensors (the last axis)."""
    return tn.softmax(e, axis=-1)


def apply_spatial(a: Tensor, x_t: Tensor) -> Tensor:
    if a.shape != x_t.shape:
        raise DimensionError(f"apply_spatial: weights {a.shape} vs inputs {x_t.shape}")
    return tn.mul(a, x_t)


def encoder_term(params: TemporalAttentionParams, Z: Tensor) -> Tensor:
    """``U_d z_t + b_d`` for every encoder step, shape (B, m, T).  Constant over decoder steps."""
    B, m, T = Z.shape
    if params.u.shape != (m, m):
        raise DimensionError(f"temporal U {params.u.shape} incompatible with Z of shape {Z.shape}")
    uz = tn.matmul(tn.broadcast_to(tn.reshape(params.u, (1, m, m)), (B, m, m)), Z)
    return tn.add(uz, tn.broadcast_to(tn.reshape(params.b, (1, m, 1)), (B, m, T)))


def temporal_scores(params: TemporalAttentionParams, Z: Tensor, h_d_prev: Tensor, s_d_prev: Tensor,
                    encoder_cache: Tensor | None = None) -> Tensor:
    """Scores over the T encoder steps for one decoder step, shape (T,) or (B, T)."""
    Z, squeeze = _batch(Z, 2)
    h_d_prev, _ = _batch(h_d_prev, 1)
    s_d_prev, _ = _batch(s_d_prev, 1)
    B, m, T = Z.shape
    if h_d_prev.shape != (B, m) or s_d_prev.shape != (B, m):
        raise DimensionError(
            f"temporal_scores: decoder state h {h_d_prev.shape}, s {s_d_prev.shape} vs Z {Z.shape}"
        )
    term = encoder_cache if encoder_cache is not None else encoder_term(params, Z)
    q = linear(tn.concat([h_d_prev, s_d_prev], axis=-1), params.w)  # (B, m)
    pre = tn.add(tn.broadcast_to(tn.reshape(q, (B, m, 1)), (B, m, T)), term)
    act = tn.tanh(pre)
    v = tn.broadcast_to(tn.reshape(params.v, (1, 1, m)), (B, 1, m))
    f = tn.reshape(tn.matmul(v, act), (B, T))
    return tn.reshape(f, (T,)) if squeeze else f


def temporal_context(beta: Tensor, Z: Tensor) -> Tensor:
    """Convex combination of the encoder columns, shape (m,) or (B, m)."""
    Z, squeeze = _batch(Z, 2)
    beta, _ = _batch(beta, 1)
    B, m, T = Z.shape
    if beta.shape != (B, T):
        raise DimensionError(f"temporal_context: weights {beta.shape} vs Z {Z.shape}")
    ctx = tn.reshape(tn.matmul(Z, tn.reshape(beta, (B, T, 1))), (B, m))
    return tn.reshape(ctx, (m,)) if squeeze else ctx
