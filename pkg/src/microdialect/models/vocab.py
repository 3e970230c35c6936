from __future__ import annotations

import hashlib
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

UNK, MASK, CLS = "[UNK]", "[MASK]", "[CLS]"
SPECIALS = (UNK, MASK, CLS)


class VocabMismatch(ValueError):
    pass


class Vocab:
    """Word-level vocabulary; specials occupy ids 0..2."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], min_freq: int = 2) -> "Vocab":
        counts: Counter = Counter()
        for toks in token_lists:
            counts.update(toks)
        words = sorted((w for w, c in counts.items() if c >= min_freq and w not in SPECIALS),
                       key=lambda w: (-counts[w], w))
        return cls([*SPECIALS, *words])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def mask_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def n_special(self) -> int:
        return len(SPECIALS)

    def encode(self, tokens: Sequence[str], max_len: int | None = None) -> np.ndarray:
        if max_len is not None:
            tokens = tokens[:max_len]
        ids = [self.index.get(t, 0) for t in tokens] or [0]
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]
