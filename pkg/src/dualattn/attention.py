"""Affinity (scaled dot-product) and subtraction-based difference attention.

All functions accept inputs with arbitrary leading batch axes; the last two
axes are (positions, features). Masks are additive arrays of 0 / ``MASK_VALUE``
that broadcast against the (query, key) logit matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Module, normal_param, zeros_param
from .tensor import MASK_VALUE, DimensionError, Tensor


@dataclass(frozen=True)
class DualAttentionConfig:
    d_model: int
    n_heads: int
    d_h: Optional[int] = None
    d_g: Optional[int] = None
    dropout_p: float = 0.0
    share_projections: bool = False
    share_values: bool = False

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0:
            raise ValueError("d_model and n_heads must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        for name in ("d_h", "d_g"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def hidden(self) -> int:
        return self.d_h or self.d_k

    @property
    def guide_width(self) -> int:
        return self.d_g or self.d_k


def padding_mask(valid) -> np.ndarray:
    """Additive key mask of shape (..., 1, L) from a boolean (..., L) validity array."""
    valid = np.asarray(valid, dtype=bool)
    return np.where(valid, 0.0, MASK_VALUE)[..., None, :]


def square_mask(valid) -> np.ndarray:
    """Full (L, L) additive mask: column j is MASK_VALUE iff key j is padding."""
    valid = np.asarray(valid, dtype=bool)
    return np.broadcast_to(padding_mask(valid), valid.shape[:-1] + (valid.shape[-1],) * 2).copy()


def _check_qkv(Q: Tensor, K: Tensor, V: Optional[Tensor] = None) -> None:
    if Q.ndim < 2 or Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query {Q.shape} and key {K.shape} widths differ")
    if V is not None and V.shape[-2] != K.shape[-2]:
        raise DimensionError(f"key {K.shape} and value {V.shape} lengths differ")


def affinity_logits(Q: Tensor, K: Tensor) -> Tensor:
    _check_qkv(Q, K)
    return T.scale(Q @ T.transpose(K), 1.0 / math.sqrt(Q.shape[-1]))


def affinity_attention(Q, K, V, mask=None, *, dropout_p=0.0, rng=None, training=False):
    """``softmax(Q Kᵀ / √d_k + M) V``; returns (output, weights)."""
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    _check_qkv(Q, K, V)
    weights = T.softmax_rows(affinity_logits(Q, K), mask)
    dropped = T.dropout(weights, dropout_p, rng, training)
    return dropped @ V, weights


def difference_scores(Q, K) -> Tensor:
    """Signed difference scores ``β[i, j] = Σ_k Q[i, k] − K[j, k]``.

    Computed through the exact rank structure ``rowsum(Q)·1ᵀ − 1·rowsum(K)ᵀ``.
    """
    Q, K = T.as_tensor(Q), T.as_tensor(K)
    _check_qkv(Q, K)
    return T.row_sum(Q) - T.transpose(T.row_sum(K))


def difference_scores_elementwise(Q, K) -> Tensor:
    """Same scores as ``difference_scores`` via the explicit (i, j, k) difference tensor."""
    Q, K = T.as_tensor(Q), T.as_tensor(K)
    _check_qkv(Q, K)
    lq, lk, dk = Q.shape[-2], K.shape[-2], Q.shape[-1]
    qi = T.reshape(Q, Q.shape[:-2] + (lq, 1, dk))
    kj = T.reshape(K, K.shape[:-2] + (1, lk, dk))
    return T.sum_(qi - kj, axis=-1)


def difference_logits(Q, K, mask=None) -> Tensor:
    """``(β_raw + M) / √d_k``; the mask is added before scaling."""
    beta = difference_scores(Q, K)
    if mask is not None:
        beta = beta + Tensor(mask)
    return T.scale(beta, 1.0 / math.sqrt(T.as_tensor(Q).shape[-1]))


def difference_attention(Q, K, V, mask=None, *, dropout_p=0.0, rng=None, training=False):
    """``softmax((β_raw + M) / √d_k) V``; returns (output, weights)."""
    Q, K, V = T.as_tensor(Q), T.as_tensor(K), T.as_tensor(V)
    _check_qkv(Q, K, V)
    weights = T.softmax_rows(difference_logits(Q, K, mask))
    dropped = T.dropout(weights, dropout_p, rng, training)
    return dropped @ V, weights


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., L, H·d) -> (..., H, L, d)."""
    *lead, length, width = x.shape
    x = T.reshape(x, tuple(lead) + (length, n_heads, width // n_heads))
    nd = x.ndim
    return T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))


def merge_heads(x: Tensor) -> Tensor:
    """(..., H, L, d) -> (..., L, H·d)."""
    nd = x.ndim
    x = T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    *lead, length, heads, width = x.shape
    return T.reshape(x, tuple(lead) + (length, heads * width))


class DualAttention(Module):
    """Per-head affinity and difference channels over the same input.

    Head h of a channel uses columns ``h·d_k:(h+1)·d_k`` of that channel's
    W_Q/W_K/W_V, so every head owns separate d_model×d_k projections. With
    ``share_projections`` the difference channel reuses the affinity
    projections; with ``share_values`` it reuses only W_V.
    """

    def __init__(self, config: DualAttentionConfig, rng: np.random.Generator, std: float = 0.02):
        self.config = config
        d = config.d_model
        for ch in ("aff", "diff"):
            for kind in ("q", "k", "v"):
                if ch == "diff" and (config.share_projections or (kind == "v" and config.share_values)):
                    continue
                setattr(self, f"w_{kind}_{ch}", normal_param(rng, (d, d), std))
                setattr(self, f"b_{kind}_{ch}", zeros_param((d,)))

    def _proj(self, x: Tensor, kind: str, ch: str) -> Tensor:
        cfg = self.config
        if ch == "diff" and (cfg.share_projections or (kind == "v" and cfg.share_values)):
            ch = "aff"
        w, b = getattr(self, f"w_{kind}_{ch}"), getattr(self, f"b_{kind}_{ch}")
        return split_heads(x @ w + b, cfg.n_heads)

    def __call__(self, x, mask=None, *, training=False, rng=None):
        """Return per-head (A, D, affinity weights, difference weights).

        A and D have shape (..., H, L, d_k). ``mask`` broadcasts against
        (..., H, L, L), e.g. ``padding_mask(valid)[..., None, :, :]``.
        """
        x = T.as_tensor(x)
        if x.shape[-1] != self.config.d_model:
            raise DimensionError(f"input width {x.shape[-1]} != d_model {self.config.d_model}")
        p = self.config.dropout_p
        A, w_aff = affinity_attention(
            self._proj(x, "q", "aff"), self._proj(x, "k", "aff"), self._proj(x, "v", "aff"),
            mask, dropout_p=p, rng=rng, training=training,
        )
        D, w_diff = difference_attention(
            self._proj(x, "q", "diff"), self._proj(x, "k", "diff"), self._proj(x, "v", "diff"),
            mask, dropout_p=p, rng=rng, training=training,
        )
        return A, D, w_aff, w_diff


def dual_attention_layer(x, mask, layer: DualAttention, *, training=False, rng=None):
    """Functional alias: per-head affinity outputs A and difference outputs D."""
    A, D, _, _ = layer(x, mask, training=training, rng=rng)
    return A, D
