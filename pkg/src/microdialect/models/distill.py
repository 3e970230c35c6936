"""Logit-matching distillation of a teacher into an HA-MTL BiGRU student."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import TweetRecord
from ..nncore import ops
from ..nncore.gradcheck import NonFiniteLoss
from ..nncore.optim import Adam
from ..nncore.rng import RngStreams
from ..nncore.tensor import no_grad
from .bigru import GEO_TASKS, BiGRUNet, HaMtlConfig
from .checkpoint import Checkpoint, checkpoint_from_model, model_from_checkpoint
from .training import _eval_batches, make_batches, record_tokens

log = logging.getLogger(__name__)


class LabelSetMismatch(ValueError):
    pass


@dataclass
class PoolItem:
    rid: str
    ids: np.ndarray
    teacher: dict  # task -> logit vector


@dataclass
class DistillReport:
    initial_mse: float
    final_mse: float
    agreement: float
    agreement_per_task: dict
    teacher_params: int
    student_params: int
    throughput_ratio: float

    @property
    def param_ratio(self) -> float:
        return self.teacher_params / self.student_params


def _forward_logits(model, items, tasks, batch_size=128) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    for batch in _eval_batches(items, batch_size):
        with no_grad():
            res = model.forward(np.stack([it.ids for it in batch]))
        for j, it in enumerate(batch):
            out[it.rid] = {t: res.logits[t].data[j].copy() for t in tasks}
    return out


def cache_teacher_logits(teacher, records: Sequence[TweetRecord], vocab, tasks: Sequence[str],
                         max_len: int) -> list[PoolItem]:
    items = [PoolItem(r.id, vocab.encode(record_tokens(r), max_len), {}) for r in records]
    logits = _forward_logits(teacher, items, tasks)
    for it in items:
        it.teacher = logits[it.rid]
    return items


def logit_mse(student, items: Sequence[PoolItem], tasks: Sequence[str]) -> float:
    """Mean over tasks of the per-entry squared logit error against the teacher."""
    got = _forward_logits(student, items, tasks)
    per_task = []
    for t in tasks:
        diff = np.stack([got[it.rid][t] - it.teacher[t] for it in items])
        per_task.append(float(np.mean(diff * diff)))
    return float(np.mean(per_task))


def argmax_agreement(student, items: Sequence[PoolItem], tasks: Sequence[str]) -> dict[str, float]:
    got = _forward_logits(student, items, tasks)
    return {t: float(np.mean([np.argmax(got[it.rid][t]) == np.argmax(it.teacher[t]) for it in items]))
            for t in tasks}


def _throughput_ratio(teacher, student, items, tasks) -> float:
    t0 = time.perf_counter()
    _forward_logits(teacher, items, tasks)
    t1 = time.perf_counter()
    _forward_logits(student, items, tasks)
    t2 = time.perf_counter()
    return (t1 - t0) / max(t2 - t1, 1e-12)


def distill(teacher_ckpt: Checkpoint, student_config: HaMtlConfig, pool: Sequence[TweetRecord],
            seed: int = 0, epochs: int = 20, batch_size: int | None = None, lr: float | None = None,
            student_tasks: dict[str, list[str]] | None = None) -> tuple[Checkpoint, DistillReport]:
    """Fit a student HA-MTL to the teacher's raw logits with a squared-error loss.

    Teacher logits are computed once and cached. Returns the final student
    checkpoint and a report with parameter and inference-throughput ratios.
    """
    teacher = model_from_checkpoint(teacher_ckpt)
    vocab = teacher_ckpt.vocab
    missing = [t for t in GEO_TASKS if t not in teacher.tasks]
    if missing:
        raise LabelSetMismatch(f"teacher has no head for {missing}")
    tasks = {t: teacher.tasks[t] for t in GEO_TASKS}
    if student_tasks is not None:
        for t, labels in student_tasks.items():
            if tasks.get(t) != list(labels):
                raise LabelSetMismatch(f"label sets differ for task {t!r}")
    cfg = HaMtlConfig.from_dict({**student_config.to_dict(), "vocab_size": len(vocab)})
    streams = RngStreams(seed).split("distill")
    student = BiGRUNet("hamtl", cfg, tasks, streams.stream("init"), main_task="city")
    max_len = cfg.max_seq_len
    if getattr(teacher, "arch", "") == "encoder":
        max_len = min(max_len, teacher.config.finetune_max_seq_len)
    items = cache_teacher_logits(teacher, pool, vocab, list(tasks), max_len)

    initial = logit_mse(student, items, list(tasks))
    opt = Adam(student.parameters(), lr=cfg.lr if lr is None else lr)
    history = []
    for epoch in range(1, epochs + 1):
        es = streams.split(f"epoch{epoch}")
        drop_rng = es.stream("dropout")
        total, steps = 0.0, 0
        for batch in make_batches(items, batch_size or cfg.batch_size, es.stream("batches")):
            out = student.forward(np.stack([it.ids for it in batch]), training=True, rng=drop_rng)
            loss = None
            for t in tasks:
                term = ops.mse(out.logits[t], np.stack([it.teacher[t] for it in batch]))
                loss = term if loss is None else loss + term
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(f"distill epoch {epoch}: {value}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
            steps += 1
        history.append({"epoch": epoch, "train_loss": total / max(steps, 1)})
        log.info("distill epoch %d loss %.4f", epoch, history[-1]["train_loss"])

    final = logit_mse(student, items, list(tasks))
    agree = argmax_agreement(student, items, list(tasks))
    report = DistillReport(initial, final, float(np.mean(list(agree.values()))), agree,
                           teacher.param_count(), student.param_count(),
                           _throughput_ratio(teacher, student, items, list(tasks)))
    meta = {"seed": seed, "objective": "distill-mse", "epochs": epochs, "history": history,
            "initial_mse": initial, "final_mse": final, "agreement": agree,
            "teacher_params": report.teacher_params, "student_params": report.student_params,
            "param_ratio": report.param_ratio, "teacher_digest": teacher_ckpt.digest()}
    return checkpoint_from_model(student, vocab, meta), report
