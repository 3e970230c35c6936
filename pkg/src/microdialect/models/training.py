"""Supervised training loops, early stopping, multi-task schedules and prediction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from ..corpus import TweetRecord, tokenize_light
from ..nncore import ops
from ..nncore.gradcheck import NonFiniteLoss
from ..nncore.optim import Adam
from ..nncore.rng import RngStreams
from ..nncore.tensor import no_grad
from .checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint
from .vocab import Vocab, VocabMismatch

log = logging.getLogger(__name__)


class LabelOutOfRange(ValueError):
    pass


class NoMainTask(ValueError):
    pass


@dataclass
class Example:
    rid: str
    ids: np.ndarray
    labels: dict  # task -> class index


def label_sets(records: Iterable[TweetRecord], tasks: Sequence[str]) -> dict[str, list[str]]:
    """Sorted label inventory per task over the records that carry it."""
    out: dict[str, set] = {t: set() for t in tasks}
    for rec in records:
        for t in tasks:
            lab = rec.label(t)
            if lab is not None:
                out[t].add(lab)
    return {t: sorted(v) for t, v in out.items()}


def record_tokens(rec: TweetRecord) -> list[str]:
    return tokenize_light(rec.text)


def make_examples(records: Iterable[TweetRecord], vocab: Vocab, tasks: dict[str, list[str]],
                  max_len: int) -> list[Example]:
    index = {t: {lab: i for i, lab in enumerate(labels)} for t, labels in tasks.items()}
    out = []
    for rec in records:
        labels = {}
        for t, idx in index.items():
            lab = rec.label(t)
            if lab is None:
                continue
            if lab not in idx:
                raise LabelOutOfRange(f"{rec.id}: {t} label {lab!r} not in the model's label set")
            labels[t] = idx[lab]
        out.append(Example(rec.id, vocab.encode(record_tokens(rec), max_len), labels))
    return out


def make_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator
                 ) -> list[list[Example]]:
    """Exact-length buckets, shuffled within and across buckets."""
    buckets: dict[int, list[Example]] = {}
    for ex in examples:
        buckets.setdefault(len(ex.ids), []).append(ex)
    batches = []
    for length in sorted(buckets):
        group = buckets[length]
        order = rng.permutation(len(group))
        for i in range(0, len(group), batch_size):
            batches.append([group[j] for j in order[i:i + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


class EarlyStopping:
    """Track the best epoch; ties keep the earlier epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch: int | None = None
        self.bad_epochs = 0

    def update(self, epoch: int, metric: float) -> bool:
        """Record an epoch's dev metric; True means stop now."""
        if metric > self.best:
            self.best = metric
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def early_stopping_trace(metrics: Sequence[float], patience: int) -> tuple[int, int]:
    """(epochs actually run, best epoch), both 1-based."""
    stopper = EarlyStopping(patience)
    for epoch, m in enumerate(metrics, 1):
        if stopper.update(epoch, m):
            return epoch, stopper.best_epoch
    return len(metrics), stopper.best_epoch


@dataclass
class TrainConfig:
    epochs: int = 15
    patience: int = 5
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    main_task: str | None = None

    @classmethod
    def for_model(cls, model, **overrides) -> "TrainConfig":
        c = model.config
        base = dict(epochs=c.epochs, patience=c.patience, batch_size=c.batch_size, lr=c.lr)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class TaskData:
    name: str
    train: list
    dev: list = field(default_factory=list)
    main: bool = False


def proportional_schedule(sizes: Sequence[int]) -> list[int]:
    """Interleave tasks in proportion to their batch counts.

    Task i's j-th batch (0-based) is placed at key (j + 1) / n_i; ties go to
    the lower task index. Sizes 2:1 give [0, 0, 1].
    """
    keyed = []
    for i, n in enumerate(sizes):
        for j in range(n):
            keyed.append((Fraction(j + 1, n), i))
    return [i for _, i in sorted(keyed)]


def _batch_ids(batch: list[Example]) -> np.ndarray:
    return np.stack([ex.ids for ex in batch])


def _batch_loss(model, batch: list[Example], tasks: Sequence[str], training: bool, rng):
    out = model.forward(_batch_ids(batch), training=training, rng=rng)
    loss = None
    for t in tasks:
        rows = [i for i, ex in enumerate(batch) if t in ex.labels]
        if not rows:
            continue
        y = np.asarray([batch[i].labels[t] for i in rows], dtype=np.int64)
        logits = out.logits[t]
        if len(rows) != len(batch):
            logits = ops.getitem(logits, np.asarray(rows))
        term = ops.cross_entropy(logits, y)
        loss = term if loss is None else loss + term
    return loss


def task_accuracy(model, examples: Sequence[Example], task: str, batch_size: int = 128) -> float:
    scored = [ex for ex in examples if task in ex.labels]
    if not scored:
        return 0.0
    correct = 0
    for batch in _eval_batches(scored, batch_size):
        with no_grad():
            logits = model.forward(_batch_ids(batch)).logits[task].data
        pred = logits.argmax(axis=1)
        correct += int(sum(int(p) == ex.labels[task] for p, ex in zip(pred, batch)))
    return correct / len(scored)


def _eval_batches(examples: Sequence[Example], batch_size: int):
    buckets: dict[int, list] = {}
    for ex in examples:
        buckets.setdefault(len(ex.ids), []).append(ex)
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), batch_size):
            yield group[i:i + batch_size]


def _fit(model, vocab: Vocab, groups: list[tuple[list[Example], list[str] | None]],
         dev: Sequence[Example], main_task: str, cfg: TrainConfig, extra_meta: dict | None = None
         ) -> Checkpoint:
    streams = RngStreams(cfg.seed).split("train")
    opt = Adam(model.parameters(), lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    history = []
    best_state = model.state_dict()
    all_tasks = list(model.tasks)
    for epoch in range(1, cfg.epochs + 1):
        estreams = streams.split(f"epoch{epoch}")
        drop_rng = estreams.stream("dropout")
        per_group = [make_batches(ex, cfg.batch_size, estreams.stream(f"batches/{gi}"))
                     for gi, (ex, _) in enumerate(groups)]
        schedule = proportional_schedule([len(b) for b in per_group])
        cursors = [0] * len(groups)
        total, steps = 0.0, 0
        for gi in schedule:
            batch = per_group[gi][cursors[gi]]
            cursors[gi] += 1
            tasks = groups[gi][1] or all_tasks
            loss = _batch_loss(model, batch, tasks, True, drop_rng)
            if loss is None:
                continue
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch}: loss {value}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
            steps += 1
        train_loss = total / max(steps, 1)
        if dev:
            metric = task_accuracy(model, dev, main_task)
        else:
            metric = float(epoch)  # no DEV: the last epoch wins
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "dev_metric": metric if dev else None})
        log.info("epoch %d loss %.4f dev %s", epoch, train_loss, metric if dev else "-")
        stop = stopper.update(epoch, metric)
        if stopper.best_epoch == epoch:
            best_state = model.state_dict()
        if stop:
            break
    model.load_state_dict(best_state)
    meta = {"seed": cfg.seed, "best_epoch": stopper.best_epoch,
            "dev_metric": stopper.best if dev else None, "epochs_run": len(history),
            "main_task": main_task, "history": history, "lr": cfg.lr,
            "batch_size": cfg.batch_size, "patience": cfg.patience, "epochs": cfg.epochs}
    meta.update(extra_meta or {})
    return checkpoint_from_model(model, vocab, meta, params=best_state)


def finetune(model, vocab: Vocab, train: Sequence[Example], dev: Sequence[Example],
             config: TrainConfig | None = None) -> Checkpoint:
    """Train every head on the labels each example carries; keep the best-DEV weights.

    Stops once ``patience`` consecutive epochs fail to improve DEV accuracy of
    the main task. The model is left holding the returned weights.
    """
    cfg = config or TrainConfig.for_model(model)
    main = cfg.main_task or model.main_task
    for ex in (*train, *dev):
        if int(ex.ids.max()) >= len(vocab):
            raise VocabMismatch(f"{ex.rid}: token id outside the vocabulary")
    return _fit(model, vocab, [(list(train), None)], dev, main, cfg)


def mtl_finetune(model, vocab: Vocab, tasks: Sequence[TaskData], config: TrainConfig | None = None
                 ) -> Checkpoint:
    """Round-robin multi-task training; each step supervises only its task's head."""
    mains = [t for t in tasks if t.main]
    if len(mains) != 1:
        raise NoMainTask("exactly one task must be marked main")
    main = mains[0]
    for t in tasks:
        if t.name not in model.tasks:
            raise LabelOutOfRange(f"model has no head for task {t.name!r}")
    cfg = config or TrainConfig.for_model(model)
    ordered = [main, *[t for t in tasks if not t.main]]
    groups = [(list(t.train), [t.name]) for t in ordered if t.train]
    extra = {"tasks": [t.name for t in ordered]}
    return _fit(model, vocab, groups, main.dev, main.name, cfg, extra)


@dataclass
class Prediction:
    rid: str
    probs: dict  # task -> probability vector
    attention: dict  # site -> weights over positions
    tokens: list

    def label(self, task: str, labels: Sequence[str]) -> tuple[str, float]:
        p = self.probs[task]
        i = int(np.argmax(p))
        return labels[i], float(p[i])


def predict(source, records: Sequence[TweetRecord], vocab: Vocab | None = None,
            batch_size: int = 128) -> list[Prediction]:
    """Per-record, per-task probabilities and attention weights (dropout off).

    ``source`` is a Checkpoint or a model; with a model, ``vocab`` is required.
    """
    if isinstance(source, Checkpoint):
        model = model_from_checkpoint(source)
        if vocab is not None and vocab != source.vocab:
            raise VocabMismatch("vocabulary differs from the checkpoint's")
        vocab = source.vocab
    else:
        model = source
        if vocab is None:
            raise VocabMismatch("predict with a bare model needs its vocabulary")
    max_len = model.config.max_seq_len
    if getattr(model, "arch", "") == "encoder":
        max_len = min(max_len, model.config.finetune_max_seq_len)
    items = []
    for k, rec in enumerate(records):
        toks = record_tokens(rec)[:max_len] or ["[UNK]"]
        items.append((k, rec.id, toks, vocab.encode(toks, max_len)))
    out: list[Prediction | None] = [None] * len(items)
    buckets: dict[int, list] = {}
    for item in items:
        buckets.setdefault(len(item[3]), []).append(item)
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), batch_size):
            chunk = group[i:i + batch_size]
            with no_grad():
                res = model.forward(np.stack([c[3] for c in chunk]))
            probs = {t: ops.softmax(lg).data for t, lg in res.logits.items()}
            for j, (k, rid, toks, _) in enumerate(chunk):
                out[k] = Prediction(rid, {t: p[j].copy() for t, p in probs.items()},
                                    {s: w[j].copy() for s, w in res.attention.items()}, toks)
    return out
