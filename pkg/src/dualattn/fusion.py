"""Adaptive fusion of the affinity signal A and difference signal D.

Per position i the pipeline is:

* guided attention: a_i pools D into d̄_i, then d̄_i pools A into ā_i;
* combine: d*_i = tanh(W_d*·[d_i; d̄_i] + b), a*_i likewise;
* gate fusion: v_i = g_i·â_i + (1 − g_i)·d̂_i with scalar g_i;
* filter gate: l_i = f_i·tanh(W_l·v_i + b_l) with scalar f_i.

Parameters are shared across positions. A ``FusionParams`` may carry leading
head axes (shape (H, ...)) so all heads run in one batched pass over inputs
of shape (..., H, L, d_k).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import tensor as T
from .nn import Module, normal_param, zeros_param
from .tensor import DimensionError, Tensor

GUIDE_MODES = ("additive", "concat")


@dataclass
class FusionParams(Module):
    w_sig_d: Tensor   # d_k × d_g, projects rows of D
    w_q_a: Tensor     # d_k × d_g, projects the affinity query a_i
    b_q_a: Tensor     # 1 × d_g
    w_score_d: Tensor  # d_g × 1 (additive) or 2d_g × 1 (concat)
    w_sig_a: Tensor
    w_q_d: Tensor
    b_q_d: Tensor
    w_score_a: Tensor
    w_dstar: Tensor   # 2d_k × d_k
    b_dstar: Tensor
    w_astar: Tensor
    b_astar: Tensor
    w_dhat: Tensor    # d_k × d_h
    b_dhat: Tensor
    w_ahat: Tensor
    b_ahat: Tensor
    w_g: Tensor       # 2d_h × 1
    b_g: Tensor       # 1 × 1
    w_v: Tensor       # d_h × d_k
    b_v: Tensor
    w_f: Tensor       # 2d_k × 1
    b_f: Tensor
    w_l: Tensor       # d_h × d_k
    b_l: Tensor

    @classmethod
    def init(cls, d_k: int, d_h: int, d_g: int, rng: np.random.Generator,
             heads: Optional[int] = None, std: float = 0.02, guide: str = "additive") -> "FusionParams":
        lead = () if heads is None else (heads,)
        sw = d_g if guide == "additive" else 2 * d_g
        shapes = {
            "w_sig_d": (d_k, d_g), "w_q_a": (d_k, d_g), "b_q_a": (1, d_g), "w_score_d": (sw, 1),
            "w_sig_a": (d_k, d_g), "w_q_d": (d_k, d_g), "b_q_d": (1, d_g), "w_score_a": (sw, 1),
            "w_dstar": (2 * d_k, d_k), "b_dstar": (1, d_k),
            "w_astar": (2 * d_k, d_k), "b_astar": (1, d_k),
            "w_dhat": (d_k, d_h), "b_dhat": (1, d_h),
            "w_ahat": (d_k, d_h), "b_ahat": (1, d_h),
            "w_g": (2 * d_h, 1), "b_g": (1, 1),
            "w_v": (d_h, d_k), "b_v": (1, d_k),
            "w_f": (2 * d_k, 1), "b_f": (1, 1),
            "w_l": (d_h, d_k), "b_l": (1, d_k),
        }
        made = {
            name: zeros_param(lead + s) if name.startswith("b_") else normal_param(rng, lead + s, std)
            for name, s in shapes.items()
        }
        return cls(**made)

    def scaled(self, factor: float) -> "FusionParams":
        """Copy with every weight matrix multiplied by ``factor`` (biases kept)."""
        vals = {}
        for f in fields(self):
            t = getattr(self, f.name)
            data = t.data if f.name.startswith("b_") else t.data * factor
            vals[f.name] = Tensor(data.copy(), requires_grad=True)
        return FusionParams(**vals)

    def head(self, h: int) -> "FusionParams":
        """Single-head view (copy) of head-stacked parameters."""
        return FusionParams(**{f.name: Tensor(getattr(self, f.name).data[h].copy(), requires_grad=True)
                               for f in fields(self)})


def _insert_axis(w: Tensor, at_from_end: int) -> Tensor:
    shape = w.shape
    cut = len(shape) - at_from_end
    return T.reshape(w, shape[:cut] + (1,) + shape[cut:])


def guided_pool(query, signal, mask, w_sig, w_q, b_q, w_score, mode: str = "additive"):
    """Additive attention of each query row over the rows of ``signal``.

    ``query`` (..., m, d_k) and ``signal`` (..., l, d_k). Scores are
    ``w_scoreᵀ tanh(W_sigᵀ s_j + W_qᵀ q_i + b_q)`` (``additive``) or
    ``w_scoreᵀ tanh([W_sigᵀ s_j ; W_qᵀ q_i + b_q])`` (``concat``). ``mask`` is
    additive and broadcasts against the (..., m, l) score matrix.
    Returns (pooled (..., m, d_k), weights (..., m, l)).
    """
    if query.shape[-1] != signal.shape[-1]:
        raise DimensionError(f"query width {query.shape[-1]} != signal width {signal.shape[-1]}")
    if w_sig.shape[-2] != signal.shape[-1]:
        raise DimensionError(f"signal width {signal.shape[-1]} does not fit projection {w_sig.shape}")
    ps = signal @ w_sig                       # (..., l, g)
    pq = query @ w_q + b_q                    # (..., m, g)
    ps = _insert_axis(ps, 2)                  # (..., 1, l, g)
    pq = _insert_axis(pq, 1)                  # (..., m, 1, g)
    if mode == "additive":
        h = T.tanh(ps + pq)
    elif mode == "concat":
        full = np.broadcast_shapes(ps.shape[:-1], pq.shape[:-1])
        h = T.tanh(T.concat([T.broadcast_to(ps, full + ps.shape[-1:]),
                             T.broadcast_to(pq, full + pq.shape[-1:])], axis=-1))
    else:
        raise ValueError(f"unknown guide mode {mode!r}; expected one of {GUIDE_MODES}")
    scores = h @ _insert_axis(w_score, 2)     # (..., m, l, 1)
    scores = T.reshape(scores, scores.shape[:-1])
    weights = T.softmax_rows(scores, mask)
    return weights @ signal, weights


def affinity_guided_difference(a, D, mask, params: FusionParams, mode: str = "additive"):
    """d̄ rows: affinity rows ``a`` query the difference signal ``D``."""
    return guided_pool(T.as_tensor(a), T.as_tensor(D), mask, params.w_sig_d, params.w_q_a,
                       params.b_q_a, params.w_score_d, mode)


def difference_guided_affinity(d_bar, A, mask, params: FusionParams, mode: str = "additive"):
    """ā rows: guided difference rows ``d_bar`` query the affinity signal ``A``."""
    return guided_pool(T.as_tensor(d_bar), T.as_tensor(A), mask, params.w_sig_a, params.w_q_d,
                       params.b_q_d, params.w_score_a, mode)


def combine_star(a, a_bar, d, d_bar, params: FusionParams):
    """Return (a*, d*), each tanh of an affine map of the paired rows."""
    for t in (a_bar, d, d_bar):
        if t.shape[-1] != a.shape[-1]:
            raise DimensionError(f"combine_star: widths {a.shape[-1]} and {t.shape[-1]} differ")
    d_star = T.tanh(T.concat_cols(d, d_bar) @ params.w_dstar + params.b_dstar)
    a_star = T.tanh(T.concat_cols(a, a_bar) @ params.w_astar + params.b_astar)
    return a_star, d_star


def gate_fusion(d_star, a_star, params: FusionParams, fixed_gate: Optional[float] = None):
    """Return (v, g, d̂, â); ``g`` has shape (..., 1)."""
    if d_star.shape != a_star.shape:
        raise DimensionError(f"gate_fusion: {d_star.shape} vs {a_star.shape}")
    d_hat = T.tanh(d_star @ params.w_dhat + params.b_dhat)
    a_hat = T.tanh(a_star @ params.w_ahat + params.b_ahat)
    if fixed_gate is None:
        g = T.sigmoid(T.concat_cols(d_hat, a_hat) @ params.w_g + params.b_g)
    else:
        g = Tensor(np.full(d_hat.shape[:-1] + (1,), float(fixed_gate)))
    v = g * a_hat + (1.0 - g) * d_hat
    return v, g, d_hat, a_hat


def filter_gate(a, v, params: FusionParams, fixed_filter: Optional[float] = None):
    """Return (l, f); ``f`` has shape (..., 1)."""
    if v.shape[-1] != params.w_v.shape[-2]:
        raise DimensionError(f"filter_gate: v width {v.shape[-1]} != {params.w_v.shape[-2]}")
    if fixed_filter is None:
        f = T.sigmoid(T.concat_cols(a, v @ params.w_v + params.b_v) @ params.w_f + params.b_f)
    else:
        f = Tensor(np.full(v.shape[:-1] + (1,), float(fixed_filter)))
    return f * T.tanh(v @ params.w_l + params.b_l), f


@dataclass
class FusionTrace:
    """Intermediate values of one ``adaptive_fuse`` call."""
    guide_d: Optional[Tensor]
    guide_a: Optional[Tensor]
    v: Tensor
    g: Tensor
    f: Tensor
    d_hat: Tensor
    a_hat: Tensor


def adaptive_fuse(A, D, mask, params: FusionParams, *, mode: str = "additive", guide: bool = True,
                  fixed_gate: Optional[float] = None, fixed_filter: Optional[float] = None):
    """Full pipeline over every position. Returns (L, trace).

    ``guide=False`` skips guided attention (d̄ = D, ā = A).
    """
    A, D = T.as_tensor(A), T.as_tensor(D)
    if A.shape != D.shape:
        raise DimensionError(f"adaptive_fuse: A {A.shape} and D {D.shape} differ")
    if guide:
        d_bar, wd = affinity_guided_difference(A, D, mask, params, mode)
        a_bar, wa = difference_guided_affinity(d_bar, A, mask, params, mode)
    else:
        d_bar, a_bar, wd, wa = D, A, None, None
    a_star, d_star = combine_star(A, a_bar, D, d_bar, params)
    v, g, d_hat, a_hat = gate_fusion(d_star, a_star, params, fixed_gate)
    out, f = filter_gate(A, v, params, fixed_filter)
    return out, FusionTrace(wd, wa, v, g, f, d_hat, a_hat)
