"""Toy pair-classification encoder with dual attention in selected layers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import DualAttention, DualAttentionConfig, affinity_attention, merge_heads, padding_mask, split_heads
from .data import CLS, PAD, SEP, SentencePairExample, Vocab
from .fusion import GUIDE_MODES, FusionParams, adaptive_fuse
from .nn import LayerNorm, Linear, Module, normal_param
from .tensor import Tensor

ABLATIONS = ("affinity", "difference", "guide", "gate_fusion", "gate_filter")


class InputError(ValueError):
    """Token ids or packing that the model cannot accept."""


@dataclass
class ModelConfig:
    vocab_size: int = 200
    max_len: int = 24
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    d_ffn: int = 64
    n_classes: int = 2
    dual_layers: tuple = (0,)
    dropout_p: float = 0.1
    seed: int = 0
    d_h: Optional[int] = None
    d_g: Optional[int] = None
    share_projections: bool = False
    share_values: bool = False
    guide_mode: str = "additive"
    positions: str = "learned"
    ablate: Optional[str] = None

    def __post_init__(self):
        self.dual_layers = tuple(sorted(set(int(i) for i in self.dual_layers)))
        for name in ("vocab_size", "max_len", "d_model", "n_layers", "n_heads", "d_ffn", "n_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if any(i < 0 or i >= self.n_layers for i in self.dual_layers):
            raise ValueError(f"dual_layers {self.dual_layers} outside 0..{self.n_layers - 1}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.guide_mode not in GUIDE_MODES:
            raise ValueError(f"guide_mode must be one of {GUIDE_MODES}")
        if self.positions not in ("learned", "sinusoidal"):
            raise ValueError("positions must be 'learned' or 'sinusoidal'")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            raise ValueError(f"ablate must be one of {ABLATIONS}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_strings(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "dual_layers":
                out[f.name] = ",".join(map(str, val))
            elif val is None:
                out[f.name] = ""
            else:
                out[f.name] = str(val)
        return out

    @classmethod
    def from_strings(cls, items: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in items.items():
            if key not in types:
                raise KeyError(f"unknown model config key {key!r}")
            kwargs[key] = _parse_field(key, raw, cls.__dataclass_fields__[key].default)
        return cls(**kwargs)


def _parse_field(key: str, raw: str, default):
    raw = raw.strip()
    if key == "dual_layers":
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    if key in ("d_h", "d_g"):
        return int(raw) if raw else None
    if key == "ablate":
        return raw or None
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


@dataclass
class PackedPair:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    valid: np.ndarray
    s1_span: tuple[int, int]
    s2_span: tuple[int, int]


def pack_pair(ex: SentencePairExample, vocab: Vocab, max_len: int, length: Optional[int] = None) -> PackedPair:
    """``[CLS] s1 [SEP] s2 [SEP]`` right-padded to ``length`` (default ``max_len``)."""
    length = max_len if length is None else length
    n = len(ex.s1) + len(ex.s2) + 3
    if n > length or length > max_len:
        raise InputError(f"pair of {n} packed tokens does not fit length {length} (max_len {max_len})")
    try:
        ids = ([vocab.index[CLS]] + vocab.encode(ex.s1) + [vocab.index[SEP]]
               + vocab.encode(ex.s2) + [vocab.index[SEP]])
    except KeyError as err:
        raise InputError(str(err)) from None
    tok = np.full(length, vocab.index[PAD], dtype=np.int64)
    tok[:n] = ids
    seg = np.zeros(length, dtype=np.int64)
    s2_start = len(ex.s1) + 2
    seg[s2_start:n] = 1
    valid = np.zeros(length, dtype=bool)
    valid[:n] = True
    return PackedPair(tok, seg, valid, (1, 1 + len(ex.s1)), (s2_start, s2_start + len(ex.s2)))


def pack_batch(examples: Sequence[SentencePairExample], vocab: Vocab, max_len: int, length=None):
    packs = [pack_pair(ex, vocab, max_len, length) for ex in examples]
    return (np.stack([p.token_ids for p in packs]), np.stack([p.segment_ids for p in packs]),
            np.stack([p.valid for p in packs]))


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class SelfAttention(Module):
    """Vanilla multi-head self-attention with output projection."""

    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        self.cfg = cfg
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def __call__(self, x, mask, training, rng, record=None):
        h = self.cfg.n_heads
        out, w = affinity_attention(split_heads(self.q(x), h), split_heads(self.k(x), h),
                                    split_heads(self.v(x), h), mask,
                                    dropout_p=self.cfg.dropout_p, rng=rng, training=training)
        if record is not None:
            record["affinity"] = w.data
        return self.o(merge_heads(out))


class DualAttentionBlock(Module):
    """Dual attention, per-head adaptive fusion, then the W_O projection."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.attn_cfg = DualAttentionConfig(cfg.d_model, cfg.n_heads, cfg.d_h, cfg.d_g, cfg.dropout_p,
                                            cfg.share_projections, cfg.share_values)
        self.dual = DualAttention(self.attn_cfg, rng)
        self.fusion = FusionParams.init(cfg.d_k, self.attn_cfg.hidden, self.attn_cfg.guide_width, rng,
                                        heads=cfg.n_heads, guide=cfg.guide_mode)
        self.o = Linear(cfg.d_model, cfg.d_model, rng)

    def __call__(self, x, mask, training, rng, record=None, fixed_filter=None):
        A, D, w_aff, w_diff = self.dual(x, mask, training=training, rng=rng)
        ablate = self.cfg.ablate
        if ablate == "difference":
            D = A
        elif ablate == "affinity":
            A = D
        L, trace = adaptive_fuse(
            A, D, mask, self.fusion, mode=self.cfg.guide_mode, guide=ablate != "guide",
            fixed_gate=0.5 if ablate == "gate_fusion" else None,
            fixed_filter=1.0 if ablate == "gate_filter" else fixed_filter,
        )
        if record is not None:
            record["affinity"] = w_aff.data
            record["difference"] = w_diff.data
            record["gate_g"] = trace.g.data[..., 0]
            record["gate_f"] = trace.f.data[..., 0]
            if trace.guide_d is not None:
                record["guide_difference"] = trace.guide_d.data
                record["guide_affinity"] = trace.guide_a.data
        return self.o(merge_heads(L))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dual: bool):
        self.dual = dual
        self.attn = DualAttentionBlock(cfg, rng) if dual else SelfAttention(cfg, rng)
        self.ln1 = LayerNorm(cfg.d_model)
        self.ff1 = Linear(cfg.d_model, cfg.d_ffn, rng)
        self.ff2 = Linear(cfg.d_ffn, cfg.d_model, rng)
        self.ln2 = LayerNorm(cfg.d_model)
        self.p = cfg.dropout_p

    def __call__(self, x, mask, training, rng, record=None, **kw):
        a = self.attn(x, mask, training, rng, record, **kw)
        x = self.ln1(x + T.dropout(a, self.p, rng, training))
        f = self.ff2(T.gelu(self.ff1(x)))
        return self.ln2(x + T.dropout(f, self.p, rng, training))


class PairClassifier(Module):
    """Embeddings -> encoder layers -> [CLS] vector -> affine classifier."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        self.tok_emb = normal_param(rng, (cfg.vocab_size, d))
        if cfg.positions == "learned":
            self.pos_emb = normal_param(rng, (cfg.max_len, d))
        else:
            self.pos_emb = Tensor(sinusoidal_table(cfg.max_len, d))
        self.seg_emb = normal_param(rng, (2, d))
        self.emb_ln = LayerNorm(d)
        self.layers = [EncoderLayer(cfg, rng, i in cfg.dual_layers) for i in range(cfg.n_layers)]
        self.cls = Linear(d, cfg.n_classes, rng)

    def forward(self, token_ids, segment_ids, valid, *, training: bool = False,
                rng: Optional[np.random.Generator] = None, records: Optional[list] = None,
                fixed_filter: Optional[float] = None) -> Tensor:
        """Logits of shape (B, n_classes) for id arrays of shape (B, L)."""
        cfg = self.config
        token_ids = np.asarray(token_ids)
        if token_ids.ndim == 1:
            token_ids, segment_ids, valid = token_ids[None], np.asarray(segment_ids)[None], np.asarray(valid)[None]
        length = token_ids.shape[-1]
        if length > cfg.max_len:
            raise InputError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        if token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size:
            raise InputError(f"token id outside [0, {cfg.vocab_size})")
        if training and rng is None:
            rng = np.random.default_rng(cfg.seed)
        pos = self.pos_emb if length == cfg.max_len else T.getitem(self.pos_emb, slice(0, length))
        x = T.embedding(self.tok_emb, token_ids) + pos + T.embedding(self.seg_emb, segment_ids)
        x = T.dropout(self.emb_ln(x), cfg.dropout_p, rng, training)
        mask = padding_mask(valid)[:, None, :, :]  # (B, 1, 1, L)
        for layer in self.layers:
            rec = {} if records is not None else None
            kw = {"fixed_filter": fixed_filter} if layer.dual else {}
            x = layer(x, mask, training, rng, rec, **kw)
            if records is not None:
                records.append(rec)
        return self.cls(x[:, 0, :])

    def logits(self, pair: PackedPair) -> Tensor:
        return self.forward(pair.token_ids, pair.segment_ids, pair.valid)[0]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def parameter_count(cfg: ModelConfig) -> int:
    return PairClassifier(cfg).n_parameters()


def matched_vanilla_config(dual_cfg: ModelConfig) -> ModelConfig:
    """Vanilla config whose feed-forward width brings its size closest to ``dual_cfg``."""
    target = parameter_count(dual_cfg)
    base = ModelConfig(**{**asdict(dual_cfg), "dual_layers": (), "ablate": None})
    per_unit = (parameter_count(ModelConfig(**{**asdict(base), "d_ffn": base.d_ffn + 1}))
                - parameter_count(base))
    extra = max(0, round((target - parameter_count(base)) / per_unit))
    return ModelConfig(**{**asdict(base), "d_ffn": base.d_ffn + extra})
