"""Generated corpora with a known city/state/country structure.

Each city owns a handful of exclusive marker words; the rest of every tweet
is drawn from fixed phrases over a shared vocabulary. Words are built from
Arabic letters so the normal preprocessing pipeline keeps them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .corpus import Gazetteer, GazetteerEntry, Hierarchy, LocationHierarchy, TweetRecord
from .nncore.rng import RngStreams

ARABIC_LETTERS = [chr(c) for c in range(0x0628, 0x063B)] + [chr(c) for c in range(0x0641, 0x064B)]
FATHA = "َ"


def _words(count: int, width: int, skip: int = 0) -> list[str]:
    """The first ``count`` letter strings with no two equal neighbours."""
    out = []
    for combo in itertools.product(ARABIC_LETTERS, repeat=width):
        if any(a == b for a, b in zip(combo, combo[1:])):
            continue
        if skip:
            skip -= 1
            continue
        out.append("".join(combo))
        if len(out) == count:
            return out
    raise ValueError(f"not enough {width}-letter words for {count}")


@dataclass
class SyntheticCorpus:
    train: list[TweetRecord]
    dev: list[TweetRecord]
    test: list[TweetRecord]
    gazetteer: Gazetteer
    markers: dict = field(default_factory=dict)  # city -> marker words
    shared: list = field(default_factory=list)

    @property
    def hierarchy(self) -> Hierarchy:
        return self.gazetteer.hierarchy()

    @property
    def cities(self) -> list[str]:
        return sorted(self.markers)

    @property
    def all_records(self) -> list[TweetRecord]:
        return [*self.train, *self.dev, *self.test]


def make_world(countries: int = 3, states_per_country: int = 2, cities_per_state: int = 2,
               seed: int = 0) -> Gazetteer:
    """Place countries far apart, states ~300 km apart, cities ~100 km apart."""
    rng = RngStreams(seed).stream("world")
    entries = []
    for ci in range(countries):
        clat, clon = 15.0 + 12.0 * ci, 5.0 + 15.0 * ci
        for si in range(states_per_country):
            slat, slon = clat + 3.0 * si, clon + 0.5 * si
            for k in range(cities_per_state):
                lat = slat + 0.9 * k + float(rng.uniform(-0.05, 0.05))
                lon = slon + float(rng.uniform(-0.05, 0.05))
                name = f"city{ci}{si}{k}"
                entries.append(GazetteerEntry(name, f"state{ci}{si}", f"country{ci}",
                                              round(lat, 4), round(lon, 4), (name.upper(),)))
    return Gazetteer(entries)


def make_corpus(seed: int = 0, markers_per_city: int = 5, shared_vocab: int = 200,
                phrase_len: int = 8, users_train: int = 8, users_dev: int = 1, users_test: int = 2,
                tweets_per_user: int = 25, noise: float = 0.05, reply_rate: float = 0.5,
                msa_rate: float = 0.0, **world) -> SyntheticCorpus:
    """Tweets of 20 words: marker, phrase, marker, marker, phrase, marker.

    With the defaults every city gets 200 TRAIN, 25 DEV and 50 TEST tweets,
    each split from its own users.
    """
    gaz = make_world(seed=seed, **world)
    streams = RngStreams(seed).split("corpus")
    shared = _words(shared_vocab, 3)
    n_phrases = shared_vocab // phrase_len
    phrases = [shared[p * phrase_len:(p + 1) * phrase_len] for p in range(n_phrases)]
    marker_words = _words(markers_per_city * len(gaz), 4, skip=1000)
    markers = {e.city: marker_words[ci * markers_per_city:(ci + 1) * markers_per_city]
               for ci, e in enumerate(gaz)}
    splits = {"train": [], "dev": [], "test": []}
    for e in gaz:
        rng = streams.stream(e.city)
        loc = LocationHierarchy(e.city, e.state, e.country)
        n_users = {"train": users_train, "dev": users_dev, "test": users_test}
        for split, count in n_users.items():
            for u in range(count):
                user = f"{e.city}-{split}-u{u}"
                for t in range(tweets_per_user):
                    mk = [markers[e.city][i] for i in rng.integers(0, markers_per_city, size=4)]
                    pa, pb = (phrases[i] for i in rng.integers(0, n_phrases, size=2))
                    body = []
                    for phrase in (pa, pb):
                        toks = list(phrase)
                        for j in range(len(toks)):
                            if rng.random() < noise:
                                toks[j] = shared[int(rng.integers(shared_vocab))]
                        body.append(toks)
                    words = [mk[0], *body[0], mk[1], mk[2], *body[1], mk[3]]
                    if msa_rate and rng.random() < msa_rate:
                        words = [w + FATHA if i < 6 else w for i, w in enumerate(words)]
                    splits[split].append(TweetRecord(
                        id=f"{user}-t{t:03d}", user_id=user, text=" ".join(words),
                        is_reply=bool(rng.random() < reply_rate), labels=loc))
    return SyntheticCorpus(splits["train"], splits["dev"], splits["test"], gaz, markers, shared)
