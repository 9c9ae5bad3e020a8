"""Finite-difference gradient suite over every differentiable op and the full model."""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import DualAttention, DualAttentionConfig, affinity_attention, difference_attention, padding_mask
from .data import default_vocab, generate_dataset
from .fusion import FusionParams, adaptive_fuse
from .model import ModelConfig, PairClassifier, pack_batch
from .tensor import Tensor

OP_TOL = 1e-5
MODEL_TOL = 1e-4


def _w(*shape):
    return np.arange(float(np.prod(shape))).reshape(shape) / np.prod(shape) - 0.5


def _valid(b, n, pad):
    v = np.ones((b, n), bool)
    v[:, n - pad:] = False
    return v


def _mask(shape):
    return padding_mask(_valid(1, shape[-1], 1))[0]


def _dual(rng, d=8, heads=2):
    layer = DualAttention(DualAttentionConfig(d, heads), rng)
    for _, p in layer.named_parameters():
        p.data = rng.normal(0, 0.5, p.shape)
    return layer


def _fusion(rng, d_k=4, guide="additive"):
    P = FusionParams.init(d_k, d_k, d_k, rng, guide=guide)
    for _, p in P.named_parameters():
        p.data = rng.normal(0, 0.5, p.shape)
    return P


# name -> (scalar function of the input tensors, input shapes)
OPS: dict[str, tuple[Callable, list]] = {
    "add": (lambda a, b: T.sum_(T.tanh(a + b)), [(4, 3), (3,)]),
    "sub": (lambda a, b: T.sum_(T.tanh(a - b)), [(4, 1), (1, 3)]),
    "mul": (lambda a, b: T.sum_(a * b * a), [(4, 3), (4, 3)]),
    "div": (lambda a, b: T.sum_(a / (b * b + 1.0)), [(4, 3), (4, 3)]),
    "scale": (lambda a: T.sum_(T.scale(a, -2.5) * a), [(4, 3)]),
    "matmul": (lambda a, b: T.sum_(T.tanh(a @ b)), [(2, 4, 3), (3, 5)]),
    "tanh": (lambda a: T.sum_(T.tanh(a) * a), [(4, 3)]),
    "sigmoid": (lambda a: T.sum_(T.sigmoid(a) * a), [(4, 3)]),
    "exp": (lambda a: T.sum_(T.exp(a)), [(4, 3)]),
    "log": (lambda a: T.sum_(T.log(a * a + 1.0)), [(4, 3)]),
    "power": (lambda a: T.sum_(T.power(a * a + 1.0, -0.5)), [(4, 3)]),
    "relu": (lambda a: T.sum_(T.relu(a) * a), [(4, 3)]),
    "dropout": (lambda a: T.sum_(T.tanh(T.dropout(a, 0.3, np.random.default_rng(5), True))), [(4, 3)]),
    "gelu": (lambda a: T.sum_(T.gelu(a) * a), [(4, 3)]),
    "concat": (lambda a, b: T.sum_(T.tanh(T.concat([a, b], axis=-1)) * _w(3, 6)), [(3, 2), (3, 4)]),
    "row_sum": (lambda a: T.sum_(T.tanh(T.row_sum(a))), [(4, 3)]),
    "mean": (lambda a: T.sum_(T.tanh(T.mean(a, axis=0))), [(4, 3)]),
    "transpose": (lambda a: T.sum_(T.transpose(a) * _w(3, 4)), [(4, 3)]),
    "reshape": (lambda a: T.sum_(T.reshape(a, (2, 6)) * _w(2, 6)), [(4, 3)]),
    "broadcast_to": (lambda a: T.sum_(T.tanh(T.broadcast_to(a, (2, 4, 3))) * _w(2, 4, 3)), [(4, 3)]),
    "getitem": (lambda a: T.sum_(T.tanh(a[1:, ::2])), [(4, 3)]),
    "embedding": (lambda t: T.sum_(T.tanh(T.embedding(t, np.array([[0, 2, 2], [5, 1, 0]]))) * _w(2, 3, 3)),
                  [(6, 3)]),
    "softmax_rows": (lambda a: T.sum_(T.softmax_rows(a, _mask((3, 4))) * _w(3, 4)), [(3, 4)]),
    "layer_norm": (lambda a, g, b: T.sum_(T.layer_norm(a, g, b) * _w(4, 3)), [(4, 3), (3,), (3,)]),
    "cross_entropy": (lambda z: T.cross_entropy(z, np.array([0, 1, 1, 0])), [(4, 2)]),
    "affinity_attention": (lambda q, k, v: T.sum_(affinity_attention(q, k, v, _mask((5, 5)))[0] * _w(5, 3)),
                           [(5, 3), (5, 3), (5, 3)]),
    "difference_attention": (lambda q, k, v: T.sum_(difference_attention(q, k, v, _mask((5, 5)))[0] * _w(5, 3)),
                             [(5, 3), (5, 3), (5, 3)]),
}


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _layer_case(rng) -> float:
    layer = _dual(rng)
    x = Tensor(rng.normal(size=(2, 5, 8)))
    mask = padding_mask(_valid(2, 5, 1))[:, None]
    wA, wD = _w(2, 2, 5, 4), _w(2, 2, 5, 4)[::-1].copy()

    def f(ts):
        A, D, _, _ = layer(ts[0], mask)
        return T.sum_(T.tanh(A) * wA + D * wD)
    return T.grad_check(f, [x] + layer.parameters())


def _fusion_case(rng, mode) -> float:
    P = _fusion(rng, guide=mode)
    A, D = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(5, 4)))
    mask = _mask((5, 5))
    w = _w(5, 4)
    return T.grad_check(lambda ts: T.sum_(adaptive_fuse(ts[0], ts[1], mask, P, mode=mode)[0] * w),
                        [A, D] + P.parameters())


def end_to_end_error(seed: int = 0, config: ModelConfig | None = None, max_entries: int = 6) -> float:
    """Two-layer classifier loss against central differences on sampled components."""
    vocab = default_vocab()
    cfg = config or ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=2, n_heads=2, d_ffn=32)
    cfg = replace(cfg, dropout_p=0.0, seed=seed)
    model = PairClassifier(cfg)
    rng = np.random.default_rng(seed)
    for _, p in model.named_parameters():
        p.data = p.data + rng.normal(0, 0.3, p.shape)
    data = generate_dataset("antonym_swap", 2, seed)
    tok, seg, valid = pack_batch(data, vocab, cfg.max_len, length=20)
    labels = np.array([e.label for e in data])
    return T.grad_check(lambda _: T.cross_entropy(model.forward(tok, seg, valid), labels),
                        model.parameters(), max_entries=max_entries, rng=np.random.default_rng(seed + 1))


def run_suite(seed: int = 0, config: ModelConfig | None = None) -> list[CheckResult]:
    out = []
    for name, (fn, shapes) in OPS.items():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        xs = [Tensor(rng.uniform(-1, 1, s)) for s in shapes]
        out.append(CheckResult(name, T.grad_check(lambda ts: fn(*ts), xs), OP_TOL))
    rng = np.random.default_rng([seed, 1])
    out.append(CheckResult("dual_attention_layer", _layer_case(rng), OP_TOL))
    for mode in ("additive", "concat"):
        out.append(CheckResult(f"adaptive_fuse[{mode}]", _fusion_case(rng, mode), OP_TOL))
    out.append(CheckResult("end_to_end_model", end_to_end_error(seed, config), MODEL_TOL))
    return out


def format_report(results: list[CheckResult], elapsed: float) -> str:
    lines = [f"{'op':<24} {'max_rel_err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<24} {r.error:>12.3e} {r.tol:>8.0e}  {'PASS' if r.ok else 'FAIL'}")
    ok = all(r.ok for r in results)
    lines.append(f"grad-check {'PASS' if ok else 'FAIL'}: {sum(r.ok for r in results)}/{len(results)} "
                 f"within tolerance in {elapsed:.1f}s")
    return "\n".join(lines)


def timed_suite(seed: int = 0, config: ModelConfig | None = None) -> tuple[list[CheckResult], float]:
    t0 = time.perf_counter()
    res = run_suite(seed, config)
    return res, time.perf_counter() - t0
