"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MDLK"  u32 version
    u32 len  config block (canonical JSON, UTF-8)
    u32 n    then n tensors: u16 name len, name, u8 dtype tag, u8 ndim,
             u32 * ndim shape, raw little-endian payload
    u32 len  metadata block (canonical JSON, UTF-8)
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nncore.rng import RngStreams
from .bigru import BiGRUConfig, BiGRUNet, HaMtlConfig
from .encoder import EncoderConfig, TinyEncoder
from .vocab import Vocab

MAGIC = b"MDLK"
FORMAT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f8"): 1, np.dtype("<f4"): 2, np.dtype("<i8"): 3}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        blob = canonical_json(self.config)
        out.write(struct.pack("<I", len(blob)))
        out.write(blob)
        out.write(struct.pack("<I", len(self.params)))
        for name in sorted(self.params):
            arr = np.asarray(self.params[name])
            dt = arr.dtype.newbyteorder("<")
            if dt not in _DTYPE_TAGS:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            raw = name.encode("utf-8")
            out.write(struct.pack("<H", len(raw)))
            out.write(raw)
            out.write(struct.pack("<BB", _DTYPE_TAGS[dt], arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
        meta = canonical_json(self.metadata)
        out.write(struct.pack("<I", len(meta)))
        out.write(meta)
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        buf = io.BytesIO(data)

        def read(n):
            chunk = buf.read(n)
            if len(chunk) != n:
                raise CheckpointError("truncated checkpoint")
            return chunk

        if read(4) != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", read(4))
        config = json.loads(read(n).decode("utf-8"))
        (count,) = struct.unpack("<I", read(4))
        params = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", read(2))
            name = read(ln).decode("utf-8")
            tag, ndim = struct.unpack("<BB", read(2))
            if tag not in _TAG_DTYPES:
                raise CheckpointError(f"unknown dtype tag {tag}")
            shape = struct.unpack(f"<{ndim}I", read(4 * ndim))
            dt = _TAG_DTYPES[tag]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            params[name] = np.frombuffer(read(size), dtype=dt).reshape(shape).copy()
        (n,) = struct.unpack("<I", read(4))
        metadata = json.loads(read(n).decode("utf-8"))
        if buf.read(1):
            raise CheckpointError("trailing bytes after metadata")
        return cls(config, params, metadata)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.config["vocab"])


def params_digest(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


def checkpoint_from_model(model, vocab: Vocab, metadata: dict | None = None,
                          params: dict[str, np.ndarray] | None = None) -> Checkpoint:
    config = {**model.spec(), "vocab": vocab.tokens, "format": FORMAT_VERSION}
    return Checkpoint(config, params if params is not None else model.state_dict(),
                      dict(metadata or {}))


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the model described by ``ckpt.config`` and load its weights."""
    cfg = ckpt.config
    family = cfg.get("family")
    rng = RngStreams(0).stream("rebuild")
    if family == "bigru":
        cls = HaMtlConfig if cfg.get("config_class") == "HaMtlConfig" else BiGRUConfig
        model = BiGRUNet(cfg["arch"], cls.from_dict(cfg["config"]), cfg["tasks"], rng,
                         main_task=cfg.get("main_task"))
    elif family == "encoder":
        model = TinyEncoder(EncoderConfig.from_dict(cfg["config"]), cfg["tasks"], rng,
                            main_task=cfg.get("main_task"))
    else:
        raise CheckpointError(f"unknown model family {family!r}")
    model.load_state_dict(ckpt.params)
    return model
