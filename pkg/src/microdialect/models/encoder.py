"""Tiny post-LN transformer encoder with a masked-LM head and [CLS] task heads.

There is deliberately no next-sentence objective.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..nncore import ops
from ..nncore.layers import Dense, Embedding, LayerNorm, MultiHeadAttention
from ..nncore.module import Module
from .bigru import ForwardResult, InvalidConfig


class SequenceTooLong(ValueError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int = 0
    layers: int = 2
    heads: int = 2
    model_dim: int = 32
    ffn_dim: int = 0  # 0 -> 4 * model_dim
    max_seq_len: int = 128
    finetune_max_seq_len: int = 50
    mask_rate: float = 0.15
    mask_token_frac: float = 0.8
    random_token_frac: float = 0.1
    dropout: float = 0.1
    pretrain_batch_size: int = 32  # 256 at full scale
    batch_size: int = 32
    pretrain_lr: float = 1e-3
    lr: float = 2e-5
    epochs: int = 15
    pretrain_epochs: int = 20
    patience: int = 5
    init_sigma: float = 0.05

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise InvalidConfig("vocab_size must be positive")
        if self.model_dim % self.heads:
            raise InvalidConfig(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if not 0.0 <= self.mask_rate < 1.0:
            raise InvalidConfig("mask_rate must be in [0, 1)")
        if self.mask_token_frac + self.random_token_frac > 1.0:
            raise InvalidConfig("mask/random corruption fractions exceed 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must be in [0, 1)")

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.model_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class EncoderBlock(Module):
    def __init__(self, c: EncoderConfig, rng):
        s = c.init_sigma
        self.attn = MultiHeadAttention(c.model_dim, c.heads, rng, s)
        self.norm1 = LayerNorm(c.model_dim)
        self.ff_in = Dense(c.model_dim, c.ffn, rng, s)
        self.ff_out = Dense(c.ffn, c.model_dim, rng, s)
        self.norm2 = LayerNorm(c.model_dim)

    def __call__(self, x, rate, rng, training):
        a, weights = self.attn(x, x, x)
        x = self.norm1(x + ops.dropout(a, rate, rng, training))
        f = self.ff_out(ops.relu(self.ff_in(x)))
        x = self.norm2(x + ops.dropout(f, rate, rng, training))
        return x, weights


class TinyEncoder(Module):
    arch = "encoder"

    def __init__(self, config: EncoderConfig, tasks: dict[str, list[str]] | None,
                 rng: np.random.Generator, main_task: str | None = None):
        config.validate()
        self.config = config
        self.tasks = {t: list(v) for t, v in (tasks or {}).items()}
        self.main_task = main_task or (next(iter(self.tasks)) if self.tasks else None)
        c, s = config, config.init_sigma
        self.tok = Embedding(c.vocab_size, c.model_dim, rng, s)
        self.pos = Embedding(c.max_seq_len + 1, c.model_dim, rng, s)
        self.blocks = [EncoderBlock(c, rng) for _ in range(c.layers)]
        self.mlm_head = Dense(c.model_dim, c.vocab_size, rng, s)
        self.heads = {t: Dense(c.model_dim, len(v), rng, s) for t, v in self.tasks.items()}

    def add_task(self, task: str, labels: list[str], rng: np.random.Generator) -> None:
        self.tasks[task] = list(labels)
        self.heads[task] = Dense(self.config.model_dim, len(labels), rng, self.config.init_sigma)
        if self.main_task is None:
            self.main_task = task

    def encode(self, ids, training: bool = False, rng=None, cls_id: int = 2):
        """Hidden states (B, T+1, d) with [CLS] prepended, plus per-layer attention."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        B, T = ids.shape
        if T > self.config.max_seq_len:
            raise SequenceTooLong(f"length {T} > {self.config.max_seq_len}")
        full = np.concatenate([np.full((B, 1), cls_id, dtype=np.int64), ids], axis=1)
        x = self.tok(full) + self.pos(np.arange(T + 1))
        x = ops.dropout(x, self.config.dropout, rng, training)
        maps = []
        for block in self.blocks:
            x, w = block(x, self.config.dropout, rng, training)
            maps.append(w.data)
        return x, maps

    def mlm_logits(self, hidden, positions: np.ndarray):
        """Vocabulary logits at flat (batch * (T+1)) positions of ``hidden``."""
        B, T1, d = hidden.shape
        rows = ops.getitem(ops.reshape(hidden, (B * T1, d)), np.asarray(positions, dtype=np.int64))
        return self.mlm_head(rows)

    def forward(self, ids, training: bool = False, rng=None) -> ForwardResult:
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        ids = ids[:, : self.config.max_seq_len]
        hidden, maps = self.encode(ids, training, rng)
        cls = hidden[:, 0, :]
        logits = {t: head(cls) for t, head in self.heads.items()}
        # last layer, [CLS] row, averaged over heads; covers [CLS] + tokens
        attention = {"cls": maps[-1][:, :, 0, :].mean(axis=1)} if maps else {}
        return ForwardResult(logits, attention)

    def spec(self) -> dict:
        return {"family": "encoder", "arch": self.arch, "config": self.config.to_dict(),
                "config_class": "EncoderConfig", "tasks": self.tasks, "main_task": self.main_task}


def build_tiny_encoder(config: EncoderConfig, rng: np.random.Generator,
                       tasks: dict[str, list[str]] | None = None) -> TinyEncoder:
    return TinyEncoder(config, tasks, rng)


def select_mask_positions(length: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """floor(rate * length) distinct positions, sorted."""
    k = math.floor(rate * length + 1e-9)
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(length, size=k, replace=False)).astype(np.int64)


def corrupt_batch(ids: np.ndarray, config: EncoderConfig, n_special: int, mask_id: int,
                  rng: np.random.Generator):
    """Select and corrupt MLM positions for a (B, T) batch.

    Returns corrupted ids, flat positions into the (B, T+1) [CLS]-prefixed
    hidden states, and the original token ids at those positions.
    """
    ids = np.array(ids, dtype=np.int64, copy=True)
    B, T = ids.shape
    flat, targets = [], []
    for b in range(B):
        pos = select_mask_positions(T, config.mask_rate, rng)
        if not len(pos):
            continue
        targets.extend(ids[b, pos].tolist())
        u = rng.random(len(pos))
        random_tokens = rng.integers(n_special, config.vocab_size, size=len(pos))
        for p, ui, rt in zip(pos, u, random_tokens):
            if ui < config.mask_token_frac:
                ids[b, p] = mask_id
            elif ui < config.mask_token_frac + config.random_token_frac:
                ids[b, p] = rt
        flat.extend((b * (T + 1) + pos + 1).tolist())
    return ids, np.asarray(flat, dtype=np.int64), np.asarray(targets, dtype=np.int64)


def mlm_loss(model: TinyEncoder, ids: np.ndarray, config: EncoderConfig, n_special: int,
             mask_id: int, rng: np.random.Generator, training: bool = True, dropout_rng=None):
    """Mean cross-entropy over the selected positions only; zero when none are selected."""
    corrupted, flat, targets = corrupt_batch(ids, config, n_special, mask_id, rng)
    hidden, _ = model.encode(corrupted, training, dropout_rng)
    logits = model.mlm_logits(hidden, flat)
    return ops.cross_entropy(logits, targets, reduction="mean"), len(targets)
