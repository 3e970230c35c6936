"""Tweet records, normalization, proxy labels and location resolution."""
from __future__ import annotations

import csv
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

ARABIC_RANGES = ((0x0600, 0x06FF), (0x0750, 0x077F), (0x08A0, 0x08FF))
DIACRITICS = frozenset(chr(c) for c in range(0x064B, 0x0653)) | {"ٰ"}

USER_TOKEN = "<USER>"
URL_TOKEN = "<URL>"
PLACEHOLDERS = (USER_TOKEN, URL_TOKEN)

# squeezing runs first turns "www." into "ww.", so both prefixes count
_URL_RE = re.compile(r"(?<!\S)(?:https?://|w{2,3}\.)\S*", re.IGNORECASE)
_MENTION_RE = re.compile(r"(?<!\S)@\w+")
_RUN_RE = re.compile(r"(.)\1{2,}", re.DOTALL)


class CorpusError(ValueError):
    """Base for data validation failures."""


class Unresolved(CorpusError):
    pass


class MissingUser(CorpusError):
    pass


class UnknownCity(CorpusError):
    pass


@dataclass(frozen=True)
class LocationHierarchy:
    city: str
    state: str
    country: str

    def level(self, name: str) -> str:
        return getattr(self, name)


@dataclass
class TweetRecord:
    id: str
    user_id: str
    text: str
    is_retweet: bool = False
    is_reply: bool = False
    labels: LocationHierarchy | None = None
    lang_tags: list | None = None
    extra: dict = field(default_factory=dict)

    def label(self, level: str) -> str | None:
        if level in ("city", "state", "country"):
            return None if self.labels is None else self.labels.level(level)
        return self.extra.get(level)

    def to_json(self) -> dict:
        out = {"id": self.id, "user_id": self.user_id, "text": self.text,
               "is_retweet": self.is_retweet, "is_reply": self.is_reply}
        if self.labels is not None:
            out.update(city=self.labels.city, state=self.labels.state, country=self.labels.country)
        if self.lang_tags is not None:
            out["lang_tags"] = [list(t) for t in self.lang_tags]
        out.update(self.extra)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "TweetRecord":
        for key in ("id", "user_id", "text"):
            if key not in obj:
                raise CorpusError(f"record missing field {key!r}: {obj}")
        if not obj["id"]:
            raise CorpusError("record id must be non-empty")
        labels = None
        if all(obj.get(k) for k in ("city", "state", "country")):
            labels = LocationHierarchy(obj["city"], obj["state"], obj["country"])
        known = {"id", "user_id", "text", "is_retweet", "is_reply", "city", "state", "country",
                 "lang_tags"}
        tags = obj.get("lang_tags")
        return cls(id=str(obj["id"]), user_id=str(obj["user_id"]), text=obj["text"],
                   is_retweet=bool(obj.get("is_retweet", False)),
                   is_reply=bool(obj.get("is_reply", False)), labels=labels,
                   lang_tags=[(tuple(span), lang) for span, lang in tags] if tags is not None else None,
                   extra={k: v for k, v in obj.items() if k not in known})


def read_jsonl(path: str | Path) -> list[TweetRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            rec = TweetRecord.from_json(obj)
            if rec.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate record id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def write_jsonl(path: str | Path, records: Iterable[TweetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


# --- text -----------------------------------------------------------------

def _squeeze(text: str) -> str:
    return _RUN_RE.sub(lambda m: m.group(1) * 2, text)


def normalize_text(raw: str) -> str:
    """Squeeze character runs to length 2, then mask mentions and URLs.

    Runs are squeezed again after masking so a placeholder glued to a run
    of ``<`` or ``>`` cannot leave a run of three behind.
    """
    text = _squeeze(raw)
    text = _URL_RE.sub(URL_TOKEN, text)
    text = _MENTION_RE.sub(USER_TOKEN, text)
    return _squeeze(text)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith(("P", "S"))


def tokenize_light(text: str) -> list[str]:
    """Whitespace split, then split punctuation off as standalone tokens.

    ``<USER>`` and ``<URL>`` stay atomic.
    """
    tokens: list[str] = []
    for word in text.split():
        i = 0
        buf = []
        while i < len(word):
            hit = next((p for p in PLACEHOLDERS if word.startswith(p, i)), None)
            if hit:
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(hit)
                i += len(hit)
                continue
            ch = word[i]
            if _is_punct(ch):
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(ch)
            else:
                buf.append(ch)
            i += 1
        if buf:
            tokens.append("".join(buf))
    return tokens


def _is_arabic_char(ch: str) -> bool:
    c = ord(ch)
    return any(lo <= c <= hi for lo, hi in ARABIC_RANGES)


def is_arabic_word(token: str) -> bool:
    letters = [ch for ch in token if ch.isalpha()]
    if not letters:
        return False
    return sum(_is_arabic_char(ch) for ch in letters) * 2 > len(letters)


def count_arabic_words(text: str) -> int:
    return sum(is_arabic_word(tok) for tok in text.split())


def count_diacritics(text: str) -> int:
    return sum(ch in DIACRITICS for ch in text)


def strip_diacritics(text: str) -> str:
    return "".join(ch for ch in text if ch not in DIACRITICS)


# --- filtering and proxy labels -----------------------------------------

def preprocess(records: Iterable[TweetRecord], min_arabic_words: int = 3) -> list[TweetRecord]:
    """Drop retweets, normalize text, drop records with too few Arabic words.

    Returns new records; inputs are never mutated.
    """
    out = []
    for rec in records:
        if rec.is_retweet:
            continue
        text = normalize_text(rec.text)
        if count_arabic_words(text) < min_arabic_words:
            continue
        out.append(TweetRecord(rec.id, rec.user_id, text, rec.is_retweet, rec.is_reply,
                               rec.labels, rec.lang_tags, dict(rec.extra)))
    return out


MSA, DA, NONE = "MSA", "DA", "NONE"


def proxy_label_diaglossia(record: TweetRecord, min_diacritics: int = 5) -> str:
    if count_diacritics(record.text) >= min_diacritics:
        return MSA
    if record.is_reply:
        return DA
    return NONE


def build_diagloss(records: Iterable[TweetRecord], min_diacritics: int = 5) -> list[TweetRecord]:
    """Records with an MSA/DA proxy label stored under ``extra['diagloss']``."""
    out = []
    for rec in records:
        label = proxy_label_diaglossia(rec, min_diacritics)
        if label == NONE:
            continue
        out.append(TweetRecord(rec.id, rec.user_id, rec.text, rec.is_retweet, rec.is_reply,
                               rec.labels, rec.lang_tags, {**rec.extra, "diagloss": label}))
    return out


_SCRIPT_PREFIXES = (
    ("LATIN", "latin"), ("CYRILLIC", "cyrillic"), ("GREEK", "greek"), ("HEBREW", "hebrew"),
    ("CJK", "cjk"), ("HIRAGANA", "cjk"), ("KATAKANA", "cjk"), ("HANGUL", "hangul"),
    ("DEVANAGARI", "devanagari"), ("THAI", "thai"), ("ARMENIAN", "armenian"),
    ("GEORGIAN", "georgian"), ("ETHIOPIC", "ethiopic"),
)


def script_tagger(token: str) -> str | None:
    """Coarse language code from the majority script of a token's letters.

    Arabic-script tokens and tokens without letters get ``None``.
    """
    votes: Counter = Counter()
    for ch in token:
        if not ch.isalpha():
            continue
        if _is_arabic_char(ch):
            votes["ar"] += 1
            continue
        name = unicodedata.name(ch, "")
        tag = next((t for prefix, t in _SCRIPT_PREFIXES if name.startswith(prefix)), "other")
        votes[tag] += 1
    if not votes:
        return None
    tag, _ = max(sorted(votes.items()), key=lambda kv: kv[1])
    return None if tag == "ar" else tag


def extract_codesw(records: Iterable[TweetRecord], tagger=script_tagger, min_arabic: int = 3,
                   min_foreign: int = 4) -> list[TweetRecord]:
    """Keep code-switched records and attach per-token language tags.

    The dominant foreign language (ties broken alphabetically) is stored
    under ``extra['codesw']``.
    """
    out = []
    for rec in records:
        tokens = rec.text.split()
        n_ar = sum(is_arabic_word(t) for t in tokens)
        if n_ar < min_arabic:
            continue
        tags = []
        pos = 0
        for tok in tokens:
            start = rec.text.index(tok, pos)
            pos = start + len(tok)
            if is_arabic_word(tok):
                continue
            lang = tagger(tok)
            if lang is not None:
                tags.append(((start, pos), lang))
        if len(tags) < min_foreign:
            continue
        counts = Counter(lang for _, lang in tags)
        dominant = min(counts, key=lambda k: (-counts[k], k))
        out.append(TweetRecord(rec.id, rec.user_id, rec.text, rec.is_retweet, rec.is_reply,
                               rec.labels, tags, {**rec.extra, "codesw": dominant}))
    return out


# --- locations ----------------------------------------------------------

@dataclass(frozen=True)
class GazetteerEntry:
    city: str
    state: str
    country: str
    lat: float
    lon: float
    aliases: tuple = ()

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise CorpusError(f"coordinates out of range for {self.city}: {self.lat}, {self.lon}")

    @property
    def hierarchy(self) -> LocationHierarchy:
        return LocationHierarchy(self.city, self.state, self.country)


def _fold(s: str) -> str:
    return " ".join(s.split()).casefold()


class Gazetteer:
    """City table with a validated city -> state -> country hierarchy."""

    def __init__(self, entries: Iterable[GazetteerEntry]):
        self.entries: list[GazetteerEntry] = list(entries)
        self._by_key: dict[tuple[str, str], GazetteerEntry] = {}
        self._by_name: dict[str, list[GazetteerEntry]] = {}
        state_parent: dict[str, str] = {}
        for e in self.entries:
            key = (_fold(e.city), _fold(e.country))
            if key in self._by_key:
                raise CorpusError(f"duplicate gazetteer city {e.city!r} in {e.country!r}")
            prev = state_parent.setdefault(e.state, e.country)
            if prev != e.country:
                raise CorpusError(f"state {e.state!r} maps to both {prev!r} and {e.country!r}")
            self._by_key[key] = e
            for name in (e.city, *e.aliases):
                self._by_name.setdefault(_fold(name), []).append(e)
        self._city_index = {}
        for e in self.entries:
            self._city_index.setdefault(e.city, []).append(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[GazetteerEntry]:
        return iter(self.entries)

    def lookup(self, name: str) -> list[GazetteerEntry]:
        return list(self._by_name.get(_fold(name), ()))

    def get(self, city: str, country: str | None = None) -> GazetteerEntry:
        if country is not None:
            e = self._by_key.get((_fold(city), _fold(country)))
            if e is None:
                raise UnknownCity(city)
            return e
        hits = self._city_index.get(city)
        if not hits:
            raise UnknownCity(city)
        return hits[0]

    def coordinates(self, city: str) -> tuple[float, float]:
        e = self.get(city)
        return e.lat, e.lon

    def hierarchy(self) -> "Hierarchy":
        return Hierarchy((e.city, e.state, e.country) for e in self.entries)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "Gazetteer":
        entries = []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter="\t")
            expected = ["city", "state", "country", "lat", "lon", "aliases"]
            if reader.fieldnames != expected:
                raise CorpusError(f"gazetteer header must be {expected}, got {reader.fieldnames}")
            for row in reader:
                aliases = tuple(a.strip() for a in (row["aliases"] or "").split(";") if a.strip())
                entries.append(GazetteerEntry(row["city"], row["state"], row["country"],
                                              float(row["lat"]), float(row["lon"]), aliases))
        return cls(entries)

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("city\tstate\tcountry\tlat\tlon\taliases\n")
            for e in self.entries:
                fh.write(f"{e.city}\t{e.state}\t{e.country}\t{e.lat!r}\t{e.lon!r}\t"
                         f"{';'.join(e.aliases)}\n")


def read_alias_table(path: str | Path) -> dict[str, tuple[str, str]]:
    table = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0] == "alias":
                continue
            if len(row) != 3:
                raise CorpusError(f"alias row needs 3 columns: {row}")
            table[_fold(row[0])] = (row[1], row[2])
    return table


def resolve_location(raw_location: str, gazetteer: Gazetteer,
                     alias_table: Mapping[str, tuple[str, str]] | None = None) -> LocationHierarchy:
    """Exact city/alias lookup after case folding and whitespace trimming.

    The alias table wins over gazetteer aliases; an ambiguous bare city name
    resolves to the first gazetteer row carrying it.
    """
    key = _fold(raw_location)
    if alias_table:
        folded = {_fold(k): v for k, v in alias_table.items()}
        if key in folded:
            city, country = folded[key]
            return gazetteer.get(city, country).hierarchy
    hits = gazetteer.lookup(key)
    if not hits:
        raise Unresolved(raw_location)
    return hits[0].hierarchy


def propagate_labels(users: Mapping[str, LocationHierarchy], tweets: Iterable[TweetRecord],
                     strict: bool = True) -> list[TweetRecord]:
    """Copy each user's location triple onto their tweets.

    In non-strict mode tweets from unknown users are skipped.
    """
    out = []
    for t in tweets:
        loc = users.get(t.user_id)
        if loc is None:
            if strict:
                raise MissingUser(t.user_id)
            continue
        out.append(TweetRecord(t.id, t.user_id, t.text, t.is_retweet, t.is_reply, loc,
                               t.lang_tags, dict(t.extra)))
    return out


class Hierarchy:
    """city -> state -> country maps; rejects a city or state with two parents."""

    def __init__(self, triples: Iterable[tuple[str, str, str]]):
        self.city_state: dict[str, str] = {}
        self.state_country: dict[str, str] = {}
        for city, state, country in triples:
            if self.city_state.setdefault(city, state) != state:
                raise CorpusError(f"city {city!r} has two states")
            if self.state_country.setdefault(state, country) != country:
                raise CorpusError(f"state {state!r} has two countries")

    @classmethod
    def from_records(cls, records: Iterable[TweetRecord]) -> "Hierarchy":
        return cls((r.labels.city, r.labels.state, r.labels.country)
                   for r in records if r.labels is not None)

    @property
    def cities(self) -> list[str]:
        return sorted(self.city_state)

    def project(self, city: str, level: str) -> str:
        if city not in self.city_state:
            raise UnknownCity(city)
        if level == "city":
            return city
        state = self.city_state[city]
        if level == "state":
            return state
        if level == "country":
            return self.state_country[state]
        raise ValueError(f"unknown level {level!r}")

    def triple(self, city: str) -> LocationHierarchy:
        return LocationHierarchy(city, self.project(city, "state"), self.project(city, "country"))


def project_label(city: str, hierarchy: Hierarchy, level: str = "country") -> str:
    return hierarchy.project(city, level)


@dataclass
class CorpusStats:
    tweets_per_class: dict
    users_per_class: dict
    n_tokens: int
    vocab_size: int


def corpus_stats(records: Iterable[TweetRecord], level: str = "country") -> CorpusStats:
    tweets: Counter = Counter()
    users: dict[str, set] = {}
    vocab: Counter = Counter()
    for r in records:
        label = r.label(level)
        if label is not None:
            tweets[label] += 1
            users.setdefault(label, set()).add(r.user_id)
        vocab.update(tokenize_light(r.text))
    return CorpusStats(dict(sorted(tweets.items())),
                       {k: len(v) for k, v in sorted(users.items())},
                       sum(vocab.values()), len(vocab))
