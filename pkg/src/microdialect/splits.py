"""Tweet-level random splits and user-disjoint narrow/medium/wide splits."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusError, TweetRecord
from .nncore.rng import RngStreams

SPLITS = ("train", "dev", "test")
RUN_OFFSETS = {"A": 0, "B": 1, "C": 2}
# setting -> (minimum users per city, users sent to TEST)
SETTINGS = {"narrow": (16, 3), "medium": (13, 3), "wide": (2, 1)}


class EmptyCorpus(CorpusError):
    pass


class NoEligibleCities(CorpusError):
    pass


class UserCityConflict(CorpusError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "tweet_random"
    ratios: tuple = (0.8, 0.1, 0.1)
    setting: str | None = None
    run_id: str = "A"
    seed: int = 0
    per_class_cap: int | None = None
    level: str = "city"

    def __post_init__(self):
        if self.mode not in ("tweet_random", "user_disjoint"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must be three fractions summing to 1, got {self.ratios}")
        if self.per_class_cap is not None and self.per_class_cap < 1:
            raise ValueError("per_class_cap must be >= 1")
        if self.run_id not in RUN_OFFSETS:
            raise ValueError(f"run_id must be one of A, B, C, got {self.run_id!r}")
        if self.mode == "user_disjoint" and self.setting not in SETTINGS:
            raise ValueError(f"user_disjoint needs setting in {sorted(SETTINGS)}")

    @property
    def run_seed(self) -> int:
        return self.seed + RUN_OFFSETS[self.run_id]


@dataclass
class SplitResult:
    spec: SplitSpec
    ids: dict = field(default_factory=lambda: {s: [] for s in SPLITS})
    users: dict = field(default_factory=lambda: {s: [] for s in SPLITS})
    class_counts: dict = field(default_factory=lambda: {s: {} for s in SPLITS})

    @property
    def train(self) -> list[str]:
        return self.ids["train"]

    @property
    def dev(self) -> list[str]:
        return self.ids["dev"]

    @property
    def test(self) -> list[str]:
        return self.ids["test"]

    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(self.ids[s]) for s in SPLITS)

    def manifest(self) -> dict:
        return {
            "mode": self.spec.mode,
            "seed": self.spec.run_seed,
            "setting": self.spec.setting,
            "run": self.spec.run_id,
            "splits": {s: {"record_ids": self.ids[s], "user_ids": self.users[s],
                           "class_counts": self.class_counts[s]} for s in SPLITS},
        }

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=1, sort_keys=True,
                                         ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def from_manifest(cls, obj: dict) -> "SplitResult":
        mode = obj.get("mode", "user_disjoint" if obj.get("setting") else "tweet_random")
        run = obj.get("run") or "A"
        spec = SplitSpec(mode=mode, setting=obj.get("setting"), run_id=run,
                         seed=obj["seed"] - RUN_OFFSETS[run])
        res = cls(spec)
        for s in SPLITS:
            part = obj["splits"].get(s, {})
            res.ids[s] = list(part.get("record_ids", []))
            res.users[s] = list(part.get("user_ids", []))
            res.class_counts[s] = dict(part.get("class_counts", {}))
        return res

    def select(self, records: Iterable[TweetRecord], split: str) -> list[TweetRecord]:
        by_id = {r.id: r for r in records}
        return [by_id[i] for i in self.ids[split]]


def _fill(result: SplitResult, records: Sequence[TweetRecord], assignment: dict[str, str]) -> SplitResult:
    level = result.spec.level
    for rec in sorted(records, key=lambda r: r.id):
        split = assignment.get(rec.id)
        if split is None:
            continue
        result.ids[split].append(rec.id)
    by_id = {r.id: r for r in records}
    for s in SPLITS:
        result.users[s] = sorted({by_id[i].user_id for i in result.ids[s]})
        counts = Counter(by_id[i].label(level) for i in result.ids[s])
        result.class_counts[s] = {k: counts[k] for k in sorted(counts, key=str)}
    return result


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor DEV and TEST sizes; the remainder goes to TRAIN."""
    dev = math.floor(n * ratios[1] + 1e-9)
    test = math.floor(n * ratios[2] + 1e-9)
    return n - dev - test, dev, test


def split_random(records: Sequence[TweetRecord], spec: SplitSpec) -> SplitResult:
    if not records:
        raise EmptyCorpus("cannot split an empty corpus")
    if spec.mode != "tweet_random":
        raise ValueError("split_random needs mode tweet_random")
    rng = RngStreams(spec.run_seed).stream("split_random")
    ids = sorted(r.id for r in records)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train, n_dev, _ = split_sizes(len(ids), spec.ratios)
    assignment = {}
    for k, rid in enumerate(order):
        assignment[rid] = "train" if k < n_train else "dev" if k < n_train + n_dev else "test"
    if spec.per_class_cap is not None:
        by_id = {r.id: r for r in records}
        train = [by_id[i] for i in order[:n_train]]
        kept = {r.id for r in cap_per_class(train, spec.per_class_cap, spec.level, spec.run_seed)}
        for rid in order[:n_train]:
            if rid not in kept:
                del assignment[rid]
    return _fill(SplitResult(spec), records, assignment)


def cap_per_class(train: Sequence[TweetRecord], cap: int, level: str = "country",
                  seed: int = 0) -> list[TweetRecord]:
    """Uniformly subsample every class down to at most ``cap`` records.

    Classes at or below the cap are untouched; input order is preserved.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    groups: dict = {}
    for rec in train:
        groups.setdefault(rec.label(level), []).append(rec)
    keep: set[str] = set()
    streams = RngStreams(seed).split("cap")
    for label in sorted(groups, key=str):
        members = groups[label]
        if len(members) <= cap:
            keep.update(r.id for r in members)
            continue
        rng = streams.stream(str(label))
        ids = sorted(r.id for r in members)
        keep.update(ids[i] for i in rng.choice(len(ids), size=cap, replace=False))
    return [r for r in train if r.id in keep]


def user_cities(records: Iterable[TweetRecord], level: str = "city",
                strict: bool = True) -> dict[str, str]:
    """user -> city; a user seen under two cities is an error in strict mode.

    In lenient mode such users take their most frequent city (ties by name).
    """
    seen: dict[str, Counter] = {}
    for rec in records:
        label = rec.label(level)
        if label is None:
            continue
        seen.setdefault(rec.user_id, Counter())[label] += 1
    out = {}
    for user, counts in seen.items():
        if len(counts) > 1 and strict:
            raise UserCityConflict(f"user {user!r} appears under {sorted(counts)}")
        out[user] = min(counts, key=lambda c: (-counts[c], c))
    return out


def split_user_disjoint(records: Sequence[TweetRecord], spec: SplitSpec,
                        strict: bool = True) -> SplitResult:
    """TRAIN/TEST split where no user appears on both sides.

    Cities with a single user are dropped first, then cities below the
    setting's user threshold; each remaining city sends a fixed number of
    uniformly sampled users to TEST. There is no DEV split.
    """
    if not records:
        raise EmptyCorpus("cannot split an empty corpus")
    if spec.mode != "user_disjoint":
        raise ValueError("split_user_disjoint needs mode user_disjoint")
    min_users, n_test = SETTINGS[spec.setting]
    owner = user_cities(records, spec.level, strict)
    by_city: dict[str, list[str]] = {}
    for user, city in owner.items():
        by_city.setdefault(city, []).append(user)
    eligible = sorted(c for c, us in by_city.items() if len(us) >= max(2, min_users))
    if not eligible:
        raise NoEligibleCities(f"no city has >= {min_users} users")
    streams = RngStreams(spec.run_seed).split("user_disjoint")
    user_split: dict[str, str] = {}
    for city in eligible:
        users = sorted(by_city[city])
        rng = streams.stream(city)
        test_idx = set(rng.choice(len(users), size=n_test, replace=False).tolist())
        for i, u in enumerate(users):
            user_split[u] = "test" if i in test_idx else "train"
    assignment = {}
    for rec in records:
        if rec.label(spec.level) is None:
            continue
        split = user_split.get(rec.user_id)
        if split is not None and owner.get(rec.user_id) == rec.label(spec.level):
            assignment[rec.id] = split
    return _fill(SplitResult(spec), records, assignment)


def split_records(records: Sequence[TweetRecord], spec: SplitSpec) -> SplitResult:
    if spec.mode == "user_disjoint":
        return split_user_disjoint(records, spec)
    return split_random(records, spec)


@dataclass
class DisjointReport:
    ok: bool
    shared_records: dict = field(default_factory=dict)
    shared_users: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def verify_disjoint(result: SplitResult, check_users: bool | None = None) -> DisjointReport:
    """Check pairwise disjointness of record ids and, for user splits, user ids."""
    if check_users is None:
        check_users = result.spec.mode == "user_disjoint"
    report = DisjointReport(True)
    pairs = [("train", "dev"), ("train", "test"), ("dev", "test")]
    for a, b in pairs:
        shared = sorted(set(result.ids[a]) & set(result.ids[b]))
        if shared:
            report.shared_records[f"{a}/{b}"] = shared
        if check_users:
            users = sorted(set(result.users[a]) & set(result.users[b]))
            if users:
                report.shared_users[f"{a}/{b}"] = users
    report.ok = not report.shared_records and not report.shared_users
    return report
