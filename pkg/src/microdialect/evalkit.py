"""Classification, agreement and geolocation metrics."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0088


class LengthMismatch(ValueError):
    pass


class UnknownLabel(ValueError):
    pass


class DegenerateChance(ZeroDivisionError):
    pass


class OutOfRange(ValueError):
    pass


class MissingCoordinates(KeyError):
    pass


class EmptyUser(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    labels: list
    counts: np.ndarray  # counts[gold, pred]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gold\\pred", *self.labels])
        for label, row in zip(self.labels, self.counts):
            writer.writerow([label, *row.tolist()])
        return buf.getvalue()


@dataclass
class ClassificationReport:
    accuracy: float
    macro_f1: float
    confusion: ConfusionMatrix
    per_class_f1: dict


def classification_metrics(gold: Sequence, pred: Sequence, label_set: Sequence | None = None
                           ) -> ClassificationReport:
    """Accuracy, macro-F1 over the full label set, and the confusion matrix.

    Classes never predicted and never seen still count in the macro average
    with F1 = 0.
    """
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold vs {len(pred)} predictions")
    if not gold:
        raise LengthMismatch("no records to evaluate")
    if label_set is None:
        label_set = sorted(set(gold) | set(pred), key=str)
    labels = list(label_set)
    index = {lab: i for i, lab in enumerate(labels)}
    unknown = {x for x in (*gold, *pred) if x not in index}
    if unknown:
        raise UnknownLabel(sorted(map(str, unknown)))
    k = len(labels)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, ([index[g] for g in gold], [index[p] for p in pred]), 1)
    tp = np.diag(counts).astype(float)
    pred_tot = counts.sum(axis=0)
    gold_tot = counts.sum(axis=1)
    f1 = {}
    for i, lab in enumerate(labels):
        denom = pred_tot[i] + gold_tot[i]
        f1[lab] = 2.0 * tp[i] / denom if denom else 0.0
    accuracy = float(tp.sum() / len(gold))
    return ClassificationReport(accuracy, float(np.mean(list(f1.values()))),
                                ConfusionMatrix(labels, counts), f1)


def cohen_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Chance-corrected agreement between two annotators.

    K = (p_o - p_e) / (1 - p_e), with p_e the product of the two marginals.
    """
    if len(labels_a) != len(labels_b):
        raise LengthMismatch(f"{len(labels_a)} vs {len(labels_b)} labels")
    n = len(labels_a)
    if n == 0:
        raise LengthMismatch("kappa needs at least one item")
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    ca, cb = Counter(labels_a), Counter(labels_b)
    p_e = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateChance("chance agreement is 1")
    return (p_o - p_e) / (1.0 - p_e)


def haversine_km(p1: tuple[float, float], p2: tuple[float, float],
                 radius: float = EARTH_RADIUS_KM) -> float:
    for lat, lon in (p1, p2):
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise OutOfRange(f"({lat}, {lon})")
    lat1, lon1, lat2, lon2 = map(math.radians, (*p1, *p2))
    a = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2.0 * radius * math.asin(min(1.0, math.sqrt(a)))


@dataclass
class GeoReport:
    acc: float
    acc_at_80_5: float
    acc_at_161: float
    mean_km: float
    median_km: float
    n: int = 0


def lower_median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def geo_metrics(pred_cities: Sequence[str], gold_cities: Sequence[str], gazetteer) -> GeoReport:
    """Distance-based accuracy using city-centre coordinates.

    ``gazetteer`` is anything with ``coordinates(city) -> (lat, lon)`` or a
    plain mapping city -> (lat, lon).
    """
    if len(pred_cities) != len(gold_cities):
        raise LengthMismatch(f"{len(pred_cities)} vs {len(gold_cities)}")
    if not gold_cities:
        raise LengthMismatch("no records to evaluate")
    coords = _coordinate_lookup(gazetteer)
    dists = []
    exact = 0
    for p, g in zip(pred_cities, gold_cities):
        if p == g:
            exact += 1
            dists.append(0.0)
        else:
            dists.append(haversine_km(coords(p), coords(g)))
    n = len(dists)
    return GeoReport(acc=exact / n,
                     acc_at_80_5=sum(d <= 80.5 for d in dists) / n,
                     acc_at_161=sum(d <= 161.0 for d in dists) / n,
                     mean_km=float(sum(dists) / n),
                     median_km=float(lower_median(dists)), n=n)


def _coordinate_lookup(gazetteer):
    if isinstance(gazetteer, Mapping):
        def get(city):
            try:
                return gazetteer[city]
            except KeyError:
                raise MissingCoordinates(city) from None
        return get

    def get(city):
        try:
            return gazetteer.coordinates(city)
        except Exception:
            raise MissingCoordinates(city) from None
    return get


@dataclass(frozen=True)
class AggregationSpec:
    tau: float = 0.35

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")


def _vote(preds: Sequence[tuple[str, float]]) -> str:
    counts: Counter = Counter()
    mass: dict = {}
    for label, conf in preds:
        counts[label] += 1
        mass[label] = mass.get(label, 0.0) + conf
    return min(counts, key=lambda c: (-counts[c], -mass[c], c))


def aggregate_user(preds: Sequence[tuple[str, float]], spec: AggregationSpec = AggregationSpec()) -> str:
    """Majority label over tweets whose confidence is at least ``tau``.

    Ties go to the larger summed confidence, then the smaller label. With no
    confident tweet the vote is taken over all tweets.
    """
    if not preds:
        raise EmptyUser("user has no predictions")
    confident = [(lab, c) for lab, c in preds if c >= spec.tau]
    return _vote(confident if confident else preds)


def user_level_aggregate(tweet_preds: Mapping[str, Sequence[tuple[str, float]]],
                         spec: AggregationSpec = AggregationSpec()) -> dict[str, str]:
    return {user: aggregate_user(tweet_preds[user], spec) for user in sorted(tweet_preds)}


class MajorityBaseline:
    """Constant classifier predicting TRAIN's most frequent label."""

    def __init__(self, train_labels: Sequence):
        if not train_labels:
            raise ValueError("majority baseline needs training labels")
        counts = Counter(train_labels)
        self.label = min(counts, key=lambda c: (-counts[c], str(c)))

    def predict(self, n_or_records) -> list:
        n = n_or_records if isinstance(n_or_records, int) else len(n_or_records)
        return [self.label] * n


def majority_baseline(train_labels: Sequence) -> MajorityBaseline:
    return MajorityBaseline(train_labels)


def projected_accuracies(gold_cities: Sequence[str], pred_cities: Sequence[str], hierarchy) -> dict:
    """Accuracy at city, state and country after projecting both sides through the hierarchy."""
    out = {}
    for level in ("city", "state", "country"):
        g = [hierarchy.project(c, level) for c in gold_cities]
        p = [hierarchy.project(c, level) for c in pred_cities]
        out[level] = sum(a == b for a, b in zip(g, p)) / len(g)
    return out


def metrics_report(task: str, gold: Sequence, pred: Sequence, label_set=None, geo: GeoReport | None = None,
                   seed: int | None = None) -> dict:
    cls = classification_metrics(gold, pred, label_set)
    return {
        "task": task,
        "accuracy": cls.accuracy,
        "macro_f1": cls.macro_f1,
        "acc_at_80_5": None if geo is None else geo.acc_at_80_5,
        "acc_at_161": None if geo is None else geo.acc_at_161,
        "mean_km": None if geo is None else geo.mean_km,
        "median_km": None if geo is None else geo.median_km,
        "n": len(gold),
        "seed": seed,
    }


def dumps_report(report: dict) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(report, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"

