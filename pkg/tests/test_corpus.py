import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdialect import corpus as C
from microdialect.corpus import (DA, MSA, NONE, Gazetteer, GazetteerEntry, Hierarchy,
                                 LocationHierarchy, TweetRecord)

from .conftest import rec

FATHA = "َ"
text_alphabet = st.sampled_from(list("ab oo!.,<>@:/") + ["ا", "ل", "ك", FATHA, "ٰ"])


@pytest.fixture
def gaz():
    return Gazetteer([
        GazetteerEntry("Beirut", "Beirut Governorate", "Lebanon", 33.89, 35.50, ("Bayrut",)),
        GazetteerEntry("Tripoli", "North Governorate", "Lebanon", 34.43, 35.84),
        GazetteerEntry("Tripoli", "Tripoli District", "Libya", 32.89, 13.19),
        GazetteerEntry("Casablanca", "Casablanca-Settat", "Morocco", 33.57, -7.59),
    ])


# normalization and tokenization

def test_normalize_examples():
    assert C.normalize_text("coooool @bob http://t.co/x") == "cool <USER> <URL>"
    assert C.normalize_text("hello") == "hello"
    assert C.normalize_text("جاااااء") == "جااء"


def test_normalize_www_and_case():
    assert C.normalize_text("see WWW.example.com and HTTPS://x.y") == "see <URL> and <URL>"


def test_normalize_mention_mid_word_untouched():
    assert C.normalize_text("mail a@b.com") == "mail a@b.com"


@settings(max_examples=200, deadline=None)
@given(st.text(text_alphabet, max_size=40))
def test_normalize_idempotent_and_runs_bounded(raw):
    once = C.normalize_text(raw)
    assert C.normalize_text(once) == once
    assert not re.search(r"(.)\1\1", once, re.DOTALL)


@settings(max_examples=200, deadline=None)
@given(st.text(st.sampled_from(list("ab o!.") + ["ا", "ك"]), max_size=40))
def test_normalize_never_grows_without_mentions_or_urls(raw):
    assert len(C.normalize_text(raw)) <= len(raw)


def test_tokenize_examples():
    assert C.tokenize_light("hi, there") == ["hi", ",", "there"]
    assert C.tokenize_light("") == []
    assert C.tokenize_light("<USER> ok.") == ["<USER>", "ok", "."]


@settings(max_examples=200, deadline=None)
@given(st.text(text_alphabet, max_size=40))
def test_tokenize_reconstructs_text(text):
    assert "".join(C.tokenize_light(text)) == "".join(text.split())


def test_count_arabic_words():
    assert C.count_arabic_words("كتاب جديد هنا") == 3
    assert C.count_arabic_words("hello world") == 0
    assert C.count_arabic_words("كتاب and قلم") == 2


def test_arabic_word_majority_rule():
    assert C.is_arabic_word("كتابab")
    assert not C.is_arabic_word("كتab")  # exactly half is not a majority
    assert not C.is_arabic_word("123")


def test_diacritics():
    assert C.count_diacritics("ك" + FATHA * 5) == 5
    assert C.count_diacritics("") == 0
    assert C.strip_diacritics("كَتَبَ") == "كتب"


@settings(max_examples=100, deadline=None)
@given(st.text(text_alphabet, max_size=30))
def test_strip_idempotent(text):
    once = C.strip_diacritics(text)
    assert C.strip_diacritics(once) == once
    assert C.count_diacritics(once) == 0


# filtering

def test_preprocess_drops_retweets_and_short_records():
    records = [rec("1", text="كتاب جديد هنا @x"), rec("2", text="كتاب جديد", ),
               rec("3", text="كتاب جديد هنا", is_retweet=True)]
    out = C.preprocess(records)
    assert [r.id for r in out] == ["1"]
    assert out[0].text == "كتاب جديد هنا <USER>"
    assert records[0].text.endswith("@x")  # inputs untouched


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), max_size=8), st.lists(st.integers(0, 5), max_size=8))
def test_min_arabic_filter_monotone(a, b):
    make = lambda k, i: rec(f"{k}{i}", text=" ".join(["كتاب"] * i + ["x"]))  # noqa: E731
    base = [make("a", i) for i in a]
    kept = {r.id for r in C.preprocess(base)}
    more = {r.id for r in C.preprocess(base + [make(f"b{j}-", i) for j, i in enumerate(b)])}
    assert kept <= more


def test_proxy_diaglossia_examples():
    assert C.proxy_label_diaglossia(rec("a", text="ك" + FATHA * 6)) == MSA
    assert C.proxy_label_diaglossia(rec("b", is_reply=True)) == DA
    assert C.proxy_label_diaglossia(rec("c", text="ك" + FATHA * 2)) == NONE


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.booleans()), max_size=20))
def test_proxy_diaglossia_partitions(specs):
    records = [rec(str(i), text="ك" + FATHA * d, is_reply=r) for i, (d, r) in enumerate(specs)]
    groups = {MSA: set(), DA: set(), NONE: set()}
    for r in records:
        groups[C.proxy_label_diaglossia(r)].add(r.id)
    assert sum(len(g) for g in groups.values()) == len(records)
    labeled = C.build_diagloss(records)
    assert {r.id for r in labeled} == groups[MSA] | groups[DA]
    assert all(r.extra["diagloss"] in (MSA, DA) for r in labeled)


def test_codesw_boundaries():
    ar = "كتاب جديد هنا"
    keep = rec("k", text=ar + " one two three four")
    drop = rec("d", text=ar + " one two three")
    none = rec("n", text="one two three four five")
    out = C.extract_codesw([keep, drop, none])
    assert [r.id for r in out] == ["k"]
    assert out[0].extra["codesw"] == "latin"
    assert len(out[0].lang_tags) == 4
    (start, end), lang = out[0].lang_tags[0]
    assert keep.text[start:end] == "one" and lang == "latin"


def test_codesw_dominant_language():
    r = rec("x", text="كتاب جديد هنا one two привет мир мир")
    assert C.extract_codesw([r])[0].extra["codesw"] == "cyrillic"


# records and files

def test_jsonl_roundtrip(tmp_path):
    records = [rec("1", city="A", state="S", country="C", is_reply=True),
               TweetRecord("2", "v", "نص", lang_tags=[((0, 2), "latin")], extra={"diagloss": DA})]
    path = tmp_path / "c.jsonl"
    C.write_jsonl(path, records)
    back = C.read_jsonl(path)
    assert back == records


def test_jsonl_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "c.jsonl"
    C.write_jsonl(path, [rec("1"), rec("1")])
    with pytest.raises(C.CorpusError):
        C.read_jsonl(path)


def test_record_requires_fields():
    with pytest.raises(C.CorpusError):
        TweetRecord.from_json({"id": "1", "text": "x"})
    with pytest.raises(C.CorpusError):
        TweetRecord.from_json({"id": "", "user_id": "u", "text": "x"})


# locations

def test_resolve_examples(gaz):
    assert C.resolve_location("Beirut", gaz) == LocationHierarchy("Beirut", "Beirut Governorate", "Lebanon")
    assert C.resolve_location("  beirut ", gaz).city == "Beirut"
    assert C.resolve_location("bayrut", gaz).city == "Beirut"
    assert C.resolve_location("Casa", gaz, {"casa": ("Casablanca", "Morocco")}).country == "Morocco"
    with pytest.raises(C.Unresolved):
        C.resolve_location("Atlantis", gaz)


def test_resolve_alias_table_disambiguates(gaz):
    table = {"Tarabulus": ("Tripoli", "Libya")}
    assert C.resolve_location("tarabulus", gaz, table).country == "Libya"
    assert C.resolve_location("Tripoli", gaz) == C.resolve_location("Tripoli", gaz)


def test_gazetteer_validation():
    with pytest.raises(C.CorpusError):
        GazetteerEntry("X", "S", "C", 91.0, 0.0)
    with pytest.raises(C.CorpusError):
        Gazetteer([GazetteerEntry("X", "S", "C", 0, 0), GazetteerEntry("x", "S", "C", 1, 1)])
    with pytest.raises(C.CorpusError):
        Gazetteer([GazetteerEntry("X", "S", "C", 0, 0), GazetteerEntry("Y", "S", "D", 1, 1)])


def test_gazetteer_tsv_roundtrip(gaz, tmp_path):
    path = tmp_path / "g.tsv"
    gaz.to_tsv(path)
    back = Gazetteer.from_tsv(path)
    assert back.entries == gaz.entries
    bad = tmp_path / "bad.tsv"
    bad.write_text("city\tlat\n", encoding="utf-8")
    with pytest.raises(C.CorpusError):
        Gazetteer.from_tsv(bad)


def test_alias_table_file(tmp_path, gaz):
    path = tmp_path / "a.tsv"
    path.write_text("alias\tcity\tcountry\nCasa\tCasablanca\tMorocco\n", encoding="utf-8")
    table = C.read_alias_table(path)
    assert C.resolve_location("CASA", gaz, table).city == "Casablanca"


def test_propagate_labels():
    loc = LocationHierarchy("A", "S", "C")
    tweets = [rec(str(i), user="u") for i in range(3)]
    out = C.propagate_labels({"u": loc}, tweets)
    assert [t.labels for t in out] == [loc] * 3
    assert C.propagate_labels({"u": loc}, []) == []
    with pytest.raises(C.MissingUser):
        C.propagate_labels({}, tweets)
    assert C.propagate_labels({}, tweets, strict=False) == []


def test_hierarchy_rejects_ambiguous_city_labels(gaz):
    with pytest.raises(C.CorpusError):
        gaz.hierarchy()  # two cities named Tripoli


def test_project_label(gaz):
    h = Gazetteer([e for e in gaz if e.country != "Libya"]).hierarchy()
    assert C.project_label("Beirut", h) == "Lebanon"
    assert h.project("Beirut", "state") == "Beirut Governorate"
    with pytest.raises(C.UnknownCity):
        C.project_label("Atlantis", h)


def test_hierarchy_rejects_two_parents():
    with pytest.raises(C.CorpusError):
        Hierarchy([("a", "s1", "c"), ("a", "s2", "c")])
    with pytest.raises(C.CorpusError):
        Hierarchy([("a", "s", "c1"), ("b", "s", "c2")])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
def test_projection_composes_and_counts_nest(specs):
    triples = [(f"c{a}{b}{k}", f"s{a}{b}", f"k{a}") for a, b, k in specs]
    h = Hierarchy(triples)
    for city, _, _ in triples:
        assert h.project(city, "country") == h.state_country[h.project(city, "state")]
    records = [rec(str(i), city=c, state=s, country=k) for i, (c, s, k) in enumerate(triples)]
    by = {lvl: C.corpus_stats(records, lvl).tweets_per_class for lvl in ("city", "state", "country")}
    for city, state, country in triples:
        assert by["city"][city] <= by["state"][state] <= by["country"][country]
    assert sum(by["city"].values()) == len(records)


def test_corpus_stats_counts():
    records = [rec("1", user="u", city="A", state="S", country="C"),
               rec("2", user="u", city="A", state="S", country="C"),
               rec("3", user="v", city="B", state="S", country="C", text="x y")]
    stats = C.corpus_stats(records, "city")
    assert stats.tweets_per_class == {"A": 2, "B": 1}
    assert stats.users_per_class == {"A": 1, "B": 1}
    assert stats.n_tokens == 8
