"""AdamW training loop, learning-rate schedule, clipping and evaluation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_model, save_model
from .data import SentencePairExample, Vocab
from .model import InputError, ModelConfig, PairClassifier, pack_batch

log = logging.getLogger(__name__)

# Fine-tuning grid for pretrained encoders; far too small for a randomly
# initialised toy model, kept as named presets.
LR_PRESETS = {"finetune-1e-5": 1e-5, "finetune-2e-5": 2e-5, "finetune-3e-5": 3e-5, "finetune-8e-6": 8e-6}
METRICS_HEADER = ("epoch", "step", "loss", "acc", "grad_norm", "lr")


class ConfigError(ValueError):
    """Inconsistent configuration or data/vocabulary mismatch."""


class TrainingDiverged(RuntimeError):
    """A non-finite loss or gradient stopped training."""


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    epochs: int = 5
    batch_size: int = 32
    clip_norm: float = 10.0
    dropout_p: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        for name in ("learning_rate", "epochs", "batch_size", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    train_loss: float
    eval_accuracy: float
    gradient_norm: float
    learning_rate: float

    def row(self) -> list[str]:
        return [str(self.epoch), str(self.step), repr(self.train_loss), repr(self.eval_accuracy),
                repr(self.gradient_norm), repr(self.learning_rate)]


def decays(name: str) -> bool:
    """Weight decay applies to everything except biases and layer-norm parameters."""
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf == "b" or leaf.startswith("b_") or leaf in ("gamma", "beta"))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamState, t: int, lr: float, *,
               weight_decay: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    """In-place AdamW update with decoupled weight decay (step ``t`` starts at 1)."""
    if t < 1:
        raise ValueError("step t must be >= 1")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        update = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay and decays(name):
            update = update + weight_decay * p.data
        p.data = p.data - lr * update


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float = 0.1) -> float:
    """Linear warmup from 0 to ``base_lr``, then linear decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = int(round(warmup_fraction * total_steps))
    if step < warm:
        return base_lr * step / warm
    if total_steps == warm:
        return base_lr
    return base_lr * (total_steps - step) / (total_steps - warm)


def clip_gradients(grads: dict, clip_norm: float) -> tuple[dict, float]:
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > clip_norm:
        factor = clip_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


@dataclass
class TrainResult:
    model: PairClassifier
    history: list[MetricsRecord]
    initial_loss: float
    checkpoint: Optional[Path] = None


def check_vocab(examples: Sequence[SentencePairExample], vocab: Vocab) -> None:
    for n, ex in enumerate(examples):
        for tok in ex.s1 + ex.s2:
            if tok not in vocab:
                raise ConfigError(f"example {n}: token {tok!r} is not in the model vocabulary")


def _batches(model: PairClassifier, examples, vocab):
    cfg = model.config
    try:
        return pack_batch(examples, vocab, cfg.max_len)
    except InputError as err:
        raise ConfigError(str(err)) from None


def dataset_loss(model: PairClassifier, examples, vocab: Vocab, batch_size: int = 256) -> float:
    tok, seg, valid = _batches(model, examples, vocab)
    labels = np.array([ex.label for ex in examples])
    total = 0.0
    for i in range(0, len(examples), batch_size):
        sl = slice(i, i + batch_size)
        logits = model.forward(tok[sl], seg[sl], valid[sl])
        total += T.cross_entropy(logits, labels[sl]).item() * len(labels[sl])
    return total / len(examples)


def predict(model: PairClassifier, examples, vocab: Vocab, batch_size: int = 256) -> np.ndarray:
    check_vocab(examples, vocab)
    tok, seg, valid = _batches(model, examples, vocab)
    preds = []
    for i in range(0, len(examples), batch_size):
        sl = slice(i, i + batch_size)
        preds.append(np.argmax(model.forward(tok[sl], seg[sl], valid[sl]).data, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: PairClassifier, vocab: Vocab, examples) -> tuple[float, np.ndarray]:
    """Accuracy and argmax predictions."""
    if not examples:
        raise ConfigError("cannot evaluate an empty dataset")
    preds = predict(model, examples, vocab)
    labels = np.array([ex.label for ex in examples])
    return float(np.mean(preds == labels)), preds


def evaluate_checkpoint(path, examples) -> tuple[float, np.ndarray]:
    model, vocab, _ = load_model(path)
    return evaluate(model, vocab, examples)


def write_metrics(path, history: Sequence[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for rec in history:
            w.writerow(rec.row())


def train(model_config: ModelConfig, train_config: TrainConfig, train_set, eval_set, vocab: Vocab,
          out_dir=None, on_epoch: Optional[Callable[[MetricsRecord], None]] = None) -> TrainResult:
    """Train from scratch; deterministic in (configs, data).

    Writes ``model.dabt`` and ``metrics.csv`` into ``out_dir`` when given.
    """
    if not train_set or not eval_set:
        raise ConfigError("training and evaluation sets must be non-empty")
    if len(vocab) > model_config.vocab_size:
        raise ConfigError(f"vocabulary of {len(vocab)} tokens exceeds vocab_size {model_config.vocab_size}")
    check_vocab(train_set, vocab)
    check_vocab(eval_set, vocab)
    tc = train_config
    cfg = replace(model_config, dropout_p=tc.dropout_p)
    model = PairClassifier(cfg)
    params = dict(model.named_parameters())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    tok, seg, valid = _batches(model, train_set, vocab)
    labels = np.array([ex.label for ex in train_set])
    n = len(train_set)
    per_epoch = math.ceil(n / tc.batch_size)
    total = per_epoch * tc.epochs
    state = AdamState()
    drop_rng = np.random.default_rng((tc.seed, 1))
    initial = dataset_loss(model, train_set, vocab)
    history: list[MetricsRecord] = []
    step = 0
    ckpt = out / "model.dabt" if out is not None else None
    for epoch in range(1, tc.epochs + 1):
        order = np.random.default_rng(tc.seed + epoch).permutation(n)
        losses, norm, lr = [], 0.0, 0.0
        for b in range(per_epoch):
            idx = order[b * tc.batch_size:(b + 1) * tc.batch_size]
            logits = model.forward(tok[idx], seg[idx], valid[idx], training=True, rng=drop_rng)
            loss = T.cross_entropy(logits, labels[idx])
            if not math.isfinite(loss.item()):
                if ckpt is not None:
                    save_model(ckpt, model, vocab)
                raise TrainingDiverged(f"loss became {loss.item()} at step {step + 1}")
            T.backward(loss)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
            T.zero_grads(params.values())
            step += 1
            bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
            if bad:
                if ckpt is not None:
                    save_model(ckpt, model, vocab)
                raise TrainingDiverged(f"non-finite gradient for parameter {bad[0]} at step {step}")
            grads, norm = clip_gradients(grads, tc.clip_norm)
            lr = lr_schedule(step, total, tc.learning_rate, tc.warmup_fraction)
            adamw_step(params, grads, state, step, lr, weight_decay=tc.weight_decay,
                       beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)
            losses.append(loss.item())
        acc, _ = evaluate(model, vocab, eval_set)
        rec = MetricsRecord(epoch, step, float(np.mean(losses)), acc, norm, lr)
        history.append(rec)
        log.info("epoch %d step %d loss %.4f acc %.4f", epoch, step, rec.train_loss, acc)
        if on_epoch is not None:
            on_epoch(rec)
    if out is not None:
        save_model(ckpt, model, vocab)
        write_metrics(out / "metrics.csv", history)
    return TrainResult(model, history, initial, ckpt)


def config_dict(model_config: ModelConfig, train_config: TrainConfig) -> dict:
    return {"model": asdict(model_config), "train": asdict(train_config)}
