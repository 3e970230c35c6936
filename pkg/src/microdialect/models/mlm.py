from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from ..nncore.gradcheck import NonFiniteLoss
from ..nncore.optim import Adam
from ..nncore.rng import RngStreams
from ..nncore.tensor import no_grad
from .checkpoint import Checkpoint, checkpoint_from_model
from .encoder import SequenceTooLong, TinyEncoder, mlm_loss
from .vocab import Vocab

log = logging.getLogger(__name__)


class EmptyCorpus(ValueError):
    pass


def _length_batches(seqs: Sequence[np.ndarray], batch_size: int, rng: np.random.Generator):
    buckets: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        buckets.setdefault(len(s), []).append(i)
    batches = []
    for length in sorted(buckets):
        idx = buckets[length]
        order = rng.permutation(len(idx))
        for k in range(0, len(idx), batch_size):
            batches.append(np.stack([seqs[idx[j]] for j in order[k:k + batch_size]]))
    return [batches[i] for i in rng.permutation(len(batches))]


def masked_eval_loss(model: TinyEncoder, vocab: Vocab, seqs: Sequence[np.ndarray], seed: int,
                     batch_size: int = 64) -> float:
    """Masked cross-entropy averaged over selected positions, dropout off, fixed masks."""
    rng = RngStreams(seed).stream("mlm-eval")
    total, count = 0.0, 0
    for batch in _length_batches(seqs, batch_size, rng):
        with no_grad():
            loss, n = mlm_loss(model, batch, model.config, vocab.n_special, vocab.mask_id, rng,
                               training=False)
        total += float(loss.data) * n
        count += n
    return total / count if count else 0.0


def pretrain_mlm(model: TinyEncoder, vocab: Vocab, corpus: Sequence[np.ndarray], seed: int = 0,
                 epochs: int | None = None, batch_size: int | None = None,
                 lr: float | None = None) -> Checkpoint:
    """Masked-LM pretraining; the history records per-epoch masked cross-entropy."""
    if not corpus:
        raise EmptyCorpus("no sequences to pretrain on")
    c = model.config
    seqs = [np.asarray(s, dtype=np.int64) for s in corpus]
    for s in seqs:
        if len(s) > c.max_seq_len:
            raise SequenceTooLong(f"length {len(s)} > {c.max_seq_len}")
        if len(s) and int(s.max()) >= c.vocab_size:
            raise ValueError("token id outside the model vocabulary")
    epochs = c.pretrain_epochs if epochs is None else epochs
    batch_size = batch_size or c.pretrain_batch_size
    lr = c.pretrain_lr if lr is None else lr
    opt = Adam(model.parameters(), lr=lr)
    streams = RngStreams(seed).split("mlm")
    history = []
    for epoch in range(1, epochs + 1):
        es = streams.split(f"epoch{epoch}")
        mask_rng, drop_rng = es.stream("mask"), es.stream("dropout")
        total, n_masked = 0.0, 0
        for batch in _length_batches(seqs, batch_size, es.stream("batches")):
            loss, n = mlm_loss(model, batch, c, vocab.n_special, vocab.mask_id, mask_rng,
                               training=True, dropout_rng=drop_rng)
            if n == 0:
                continue
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"mlm epoch {epoch}: {value}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value * n
            n_masked += n
        history.append({"epoch": epoch, "masked_ce": total / max(n_masked, 1),
                        "masked_positions": n_masked})
        log.info("mlm epoch %d masked CE %.4f", epoch, history[-1]["masked_ce"])
    meta = {"seed": seed, "objective": "mlm", "epochs": epochs, "lr": lr,
            "batch_size": batch_size, "history": history}
    return checkpoint_from_model(model, vocab, meta)
