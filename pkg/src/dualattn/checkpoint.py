"""Binary checkpoint format.

Layout (all integers unsigned 64-bit little-endian, floats IEEE-754 binary64
little-endian)::

    b"DABT1"
    u64 config_bytes, then UTF-8 text of ``key=value`` lines joined by "\\n"
    u64 n_params
    per parameter:
        u64 name_bytes, UTF-8 name
        u64 rank, rank × u64 dims
        prod(dims) × f64 data, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import Vocab
from .model import ModelConfig, PairClassifier

MAGIC = b"DABT1"


class CheckpointError(ValueError):
    pass


def _u64(n: int) -> bytes:
    return struct.pack("<Q", n)


def save_checkpoint(path, config: dict[str, str], params: dict[str, np.ndarray]) -> None:
    for key, val in config.items():
        if "=" in key or "\n" in key or "\n" in val:
            raise CheckpointError(f"config entry {key!r} cannot be encoded as a key=value line")
    text = "\n".join(f"{k}={v}" for k, v in config.items()).encode("utf-8")
    chunks = [MAGIC, _u64(len(text)), text, _u64(len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")  # keeps 0-d shapes; tobytes() is row-major
        raw = name.encode("utf-8")
        chunks += [_u64(len(raw)), raw, _u64(arr.ndim)]
        chunks += [_u64(d) for d in arr.shape]
        chunks.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a DABT1 checkpoint")
    config = {}
    text = r.take(r.u64()).decode("utf-8")
    for line in text.split("\n") if text else []:
        key, sep, val = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        config[key] = val
    params = {}
    for _ in range(r.u64()):
        name = r.take(r.u64()).decode("utf-8")
        dims = tuple(r.u64() for _ in range(r.u64()))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
        params[name] = data.reshape(dims)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last parameter")
    return config, params


def save_model(path, model, vocab, extra: dict[str, str] | None = None) -> None:
    config = dict(model.config.to_strings())
    config["vocab"] = " ".join(vocab.tokens)
    config.update(extra or {})
    save_checkpoint(path, config, model.state_dict())


def load_model(path):
    """Return (model, vocab, extra_config)."""
    config, params = load_checkpoint(path)
    vocab = Vocab(config.pop("vocab").split(" "))
    model_keys = set(ModelConfig.__dataclass_fields__)
    cfg = ModelConfig.from_strings({k: v for k, v in config.items() if k in model_keys})
    extra = {k: v for k, v in config.items() if k not in model_keys}
    model = PairClassifier(cfg)
    model.load_state_dict(params)
    return model, vocab, extra
