"""Self-training selection, noisy-label training regimes and MSA filtering."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import (DA, MSA, Hierarchy, TweetRecord, count_arabic_words, count_diacritics,
                     tokenize_light)
from .models.checkpoint import Checkpoint, params_digest
from .models.training import Prediction, TrainConfig, finetune, make_examples, predict
from .models.vocab import Vocab
from .nncore.rng import RngStreams

ALLOWED_PCTS = (5, 10, 25)


class EmptyPool(ValueError):
    pass


class InvalidPct(ValueError):
    pass


class EmptyGold(ValueError):
    pass


@dataclass(frozen=True)
class PoolPrediction:
    rid: str
    label: str
    confidence: float
    distribution: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.distribution is not None and not math.isclose(
                self.confidence, max(self.distribution), rel_tol=0, abs_tol=1e-12):
            raise ValueError("confidence must equal the distribution's maximum")


def pool_from_predictions(preds: Sequence[Prediction], task: str, labels: Sequence[str],
                          keep_distribution: bool = False) -> list[PoolPrediction]:
    out = []
    for p in preds:
        probs = p.probs[task]
        i = int(np.argmax(probs))
        dist = tuple(float(x) for x in probs) if keep_distribution else None
        out.append(PoolPrediction(p.rid, labels[i], float(probs[i]), dist))
    return out


def _rank(items: Iterable[PoolPrediction]) -> list[PoolPrediction]:
    return sorted(items, key=lambda x: (-x.confidence, x.rid))


def self_train_select(pool: Sequence[PoolPrediction], mode: str = "agnostic", pct: int = 10,
                      allowed: Sequence[int] = ALLOWED_PCTS) -> list[PoolPrediction]:
    """Top-percentage pseudo-label selection.

    ``agnostic`` keeps the floor(pct * N / 100) most confident predictions
    overall; ``specific`` keeps floor(pct * n_c / 100) per predicted class.
    Output is ordered by (confidence desc, id asc).
    """
    if not pool:
        raise EmptyPool("nothing to select from")
    if pct not in allowed:
        raise InvalidPct(f"pct must be one of {tuple(allowed)}, got {pct}")
    if mode == "agnostic":
        return _rank(pool)[: pct * len(pool) // 100]
    if mode == "specific":
        by_class: dict[str, list[PoolPrediction]] = {}
        for item in pool:
            by_class.setdefault(item.label, []).append(item)
        chosen = []
        for label in sorted(by_class):
            members = by_class[label]
            chosen.extend(_rank(members)[: pct * len(members) // 100])
        return _rank(chosen)
    raise ValueError(f"mode must be agnostic or specific, got {mode!r}")


def threshold_select(pool: Sequence[PoolPrediction], tau: float) -> list[PoolPrediction]:
    """Keep predictions with confidence >= tau (optional variant)."""
    if not pool:
        raise EmptyPool("nothing to select from")
    return _rank(p for p in pool if p.confidence >= tau)


def pool_filter(records: Iterable[TweetRecord], min_words: int | None = None,
                replies_only: bool = False, no_diacritics: bool = False) -> list[TweetRecord]:
    """Optional hygiene filters for the unlabeled pool."""
    out = []
    for r in records:
        if min_words is not None and len(tokenize_light(r.text)) <= min_words:
            continue
        if replies_only and not r.is_reply:
            continue
        if no_diacritics and count_diacritics(r.text):
            continue
        out.append(r)
    return out


def pseudo_label_rows(selected: Sequence[PoolPrediction], level: str,
                      hierarchy: Hierarchy | None = None, source: str = "self-train") -> list[dict]:
    rows = []
    for p in selected:
        row = {"id": p.rid, "confidence": p.confidence, "source": source}
        if level == "city" and hierarchy is not None:
            loc = hierarchy.triple(p.label)
            row.update(pseudo_city=loc.city, pseudo_state=loc.state, pseudo_country=loc.country)
        else:
            row[f"pseudo_{level}"] = p.label
        rows.append(row)
    return rows


def write_pseudo_labels(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def apply_pseudo_labels(records: Sequence[TweetRecord], rows: Sequence[dict],
                        exclude_ids: Iterable[str] = ()) -> list[TweetRecord]:
    """Records carrying their pseudo labels; ids in ``exclude_ids`` (DEV/TEST) never pass."""
    from .corpus import LocationHierarchy

    banned = set(exclude_ids)
    by_id = {r.id: r for r in records}
    out = []
    for row in rows:
        if row["id"] in banned or row["id"] not in by_id:
            continue
        rec = by_id[row["id"]]
        if "pseudo_city" in row:
            labels = LocationHierarchy(row["pseudo_city"], row["pseudo_state"], row["pseudo_country"])
            out.append(TweetRecord(rec.id, rec.user_id, rec.text, rec.is_retweet, rec.is_reply,
                                   labels, rec.lang_tags, {**rec.extra, "source": row["source"]}))
        else:
            level = next(k[len("pseudo_"):] for k in row if k.startswith("pseudo_"))
            extra = {**rec.extra, "source": row["source"]}
            if level == "country":
                labels = LocationHierarchy("?", "?", row["pseudo_country"])
            else:
                labels = rec.labels
                extra[level] = row[f"pseudo_{level}"]
            out.append(TweetRecord(rec.id, rec.user_id, rec.text, rec.is_retweet, rec.is_reply,
                                   labels, rec.lang_tags, extra))
    return out


REGIMES = ("weak", "weak_plus_gold", "weak_then_gold")


@dataclass
class RegimeSpec:
    regime: str
    seed: int = 0
    epochs: tuple = (15, 15)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.regime == "weak_then_gold" and len(self.epochs) != 2:
            raise ValueError("weak_then_gold needs two phase epoch budgets")


@dataclass
class RegimeResult:
    checkpoint: Checkpoint
    phases: list = field(default_factory=list)  # checkpoints, in phase order
    training_ids: list = field(default_factory=list)  # per phase, ids in training order
    log: list = field(default_factory=list)


def run_regime(spec: RegimeSpec, auto_set: Sequence[TweetRecord], gold_set: Sequence[TweetRecord],
               model_builder: Callable[[], object], vocab: Vocab, task: str = "country",
               dev_set: Sequence[TweetRecord] = (), train_config: TrainConfig | None = None
               ) -> RegimeResult:
    """Train under one of the weak / weak+gold / weak-then-gold regimes.

    ``model_builder`` returns a fresh model with a ``task`` head.
    """
    bad = [r.id for r in auto_set if count_arabic_words(r.text) < 3]
    if bad:
        raise ValueError(f"auto-tagged records with fewer than 3 Arabic words: {bad[:5]}")
    if spec.regime != "weak" and not gold_set:
        raise EmptyGold(f"{spec.regime} needs gold data")
    model = model_builder()
    tasks = {task: model.tasks[task]}
    max_len = model.config.max_seq_len
    encode = lambda recs: make_examples(recs, vocab, tasks, max_len)  # noqa: E731
    dev = encode(dev_set)

    def config(seed, epochs):
        base = train_config or TrainConfig.for_model(model)
        return TrainConfig(epochs=epochs, patience=base.patience, batch_size=base.batch_size,
                           lr=base.lr, seed=seed, main_task=task)

    result = RegimeResult(checkpoint=None)
    if spec.regime == "weak":
        ck = finetune(model, vocab, encode(auto_set), dev, config(spec.seed, spec.epochs[0]))
        result.training_ids.append([r.id for r in auto_set])
        result.log.append({"phase": 1, "data": "auto", "n": len(auto_set)})
    elif spec.regime == "weak_plus_gold":
        combined = sorted([*auto_set, *gold_set], key=lambda r: r.id)
        rng = RngStreams(spec.seed).stream("weak_plus_gold")
        shuffled = [combined[i] for i in rng.permutation(len(combined))]
        ck = finetune(model, vocab, encode(shuffled), dev, config(spec.seed, spec.epochs[0]))
        result.training_ids.append([r.id for r in shuffled])
        result.log.append({"phase": 1, "data": "auto+gold", "n": len(shuffled)})
    else:
        ck1 = finetune(model, vocab, encode(auto_set), dev, config(spec.seed, spec.epochs[0]))
        result.phases.append(ck1)
        result.training_ids.append([r.id for r in auto_set])
        result.log.append({"phase": 1, "data": "auto", "n": len(auto_set),
                           "final_digest": params_digest(ck1.params)})
        start = params_digest(model.state_dict())
        ck = finetune(model, vocab, encode(gold_set), dev, config(spec.seed + 1, spec.epochs[1]))
        result.training_ids.append([r.id for r in gold_set])
        result.log.append({"phase": 2, "data": "gold", "n": len(gold_set), "initial_digest": start})
    ck.metadata["regime"] = spec.regime
    ck.metadata["regime_log"] = result.log
    result.phases.append(ck)
    result.checkpoint = ck
    return result


@dataclass
class FilterReport:
    retained: list
    counts: dict  # class -> {"retained": n, "removed": m}


def msa_filter(records: Sequence[TweetRecord], classifier: Checkpoint, level: str = "country",
               task: str = "diagloss", vocab: Vocab | None = None) -> FilterReport:
    """Drop records the MSA-vs-dialect classifier assigns to MSA."""
    labels = classifier.config["tasks"].get(task)
    if labels is None or set(labels) != {DA, MSA}:
        raise ValueError(f"classifier needs a binary {task!r} head over {{DA, MSA}}")
    preds = predict(classifier, records, vocab)
    counts: dict = {}
    retained = []
    for rec, p in zip(records, preds):
        label = labels[int(np.argmax(p.probs[task]))]
        cls = str(rec.label(level))
        slot = counts.setdefault(cls, {"retained": 0, "removed": 0})
        if label == DA:
            retained.append(rec)
            slot["retained"] += 1
        else:
            slot["removed"] += 1
    return FilterReport(retained, dict(sorted(counts.items())))


def class_counts(records: Iterable[TweetRecord], level: str) -> dict:
    return dict(sorted(Counter(str(r.label(level)) for r in records).items()))
