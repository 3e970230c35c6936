from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microdialect import splits as SP
from microdialect.splits import SplitResult, SplitSpec

from .conftest import rec


def city_corpus(users_per_city: dict, tweets=2):
    out = []
    for city, n in users_per_city.items():
        for u in range(n):
            for t in range(tweets):
                out.append(rec(f"{city}-{u}-{t}", user=f"{city}-u{u}", city=city,
                               state=f"S{city}", country="K"))
    return out


def test_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(ratios=(0.8, 0.1, 0.2))
    with pytest.raises(ValueError):
        SplitSpec(per_class_cap=0)
    with pytest.raises(ValueError):
        SplitSpec(mode="user_disjoint")
    assert SplitSpec(seed=10, run_id="C").run_seed == 12


def test_random_split_sizes():
    records = [rec(str(i)) for i in range(100)]
    res = SP.split_random(records, SplitSpec(seed=7))
    assert res.sizes() == (80, 10, 10)
    assert SP.split_random(records, SplitSpec(seed=7)) == res


def test_random_split_rounding_small():
    assert SP.split_random([rec(str(i)) for i in range(3)], SplitSpec()).sizes() == (3, 0, 0)
    assert SP.split_sizes(3, (0.8, 0.1, 0.1)) == (3, 0, 0)


def test_random_split_empty():
    with pytest.raises(SP.EmptyCorpus):
        SP.split_random([], SplitSpec())


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(0, 10**6))
def test_random_split_partition(n, seed):
    records = [rec(f"r{i}") for i in range(n)]
    res = SP.split_random(records, SplitSpec(seed=seed))
    ids = res.train + res.dev + res.test
    assert sorted(ids) == sorted(r.id for r in records)
    assert SP.verify_disjoint(res)
    exact = (0.8 * n, 0.1 * n, 0.1 * n)
    assert all(abs(a - b) <= 1 + 1e-9 for a, b in zip(res.sizes()[1:], exact[1:]))


def test_cap_per_class():
    train = ([rec(f"a{i}", city="A", state="S", country="A") for i in range(150)]
             + [rec(f"b{i}", city="B", state="T", country="B") for i in range(50)])
    capped = SP.cap_per_class(train, 100, "country")
    assert Counter(r.label("country") for r in capped) == {"A": 100, "B": 50}
    assert SP.cap_per_class(train, 1000, "country") == train
    assert Counter(r.label("country") for r in SP.cap_per_class(train, 1, "country")) == {"A": 1, "B": 1}


def test_random_split_with_cap_drops_only_train():
    records = [rec(f"a{i:03d}", city="A", state="S", country="A") for i in range(100)]
    res = SP.split_random(records, SplitSpec(per_class_cap=20, level="country"))
    assert res.sizes() == (20, 10, 10)


def test_narrow_thresholds():
    records = city_corpus({"big": 16, "small": 15, "solo": 1})
    res = SP.split_user_disjoint(records, SplitSpec("user_disjoint", setting="narrow"))
    assert len(res.users["test"]) == 3 and len(res.users["train"]) == 13
    assert {u.split("-")[0] for u in res.users["train"] + res.users["test"]} == {"big"}
    assert res.dev == []


def test_wide_two_users():
    res = SP.split_user_disjoint(city_corpus({"pair": 2, "solo": 1}),
                                 SplitSpec("user_disjoint", setting="wide"))
    assert len(res.users["test"]) == 1 and len(res.users["train"]) == 1


def test_no_eligible_cities():
    with pytest.raises(SP.NoEligibleCities):
        SP.split_user_disjoint(city_corpus({"a": 3}), SplitSpec("user_disjoint", setting="narrow"))


def test_user_city_conflict():
    records = [rec("1", user="u", city="A", state="S", country="K"),
               rec("2", user="u", city="B", state="S", country="K")]
    with pytest.raises(SP.UserCityConflict):
        SP.user_cities(records)
    assert SP.user_cities(records, strict=False) == {"u": "A"}


def test_runs_differ():
    records = city_corpus({"c": 20})
    tests = {r: tuple(SP.split_user_disjoint(records, SplitSpec("user_disjoint", setting="narrow",
                                                                run_id=r)).users["test"])
             for r in "ABC"}
    assert len(set(tests.values())) > 1


def test_settings_nest():
    records = city_corpus({"a": 20, "b": 14, "c": 5, "d": 1})
    cities = {}
    for setting in SP.SETTINGS:
        res = SP.split_user_disjoint(records, SplitSpec("user_disjoint", setting=setting))
        cities[setting] = set(res.class_counts["train"]) | set(res.class_counts["test"])
    assert cities["narrow"] <= cities["medium"] <= cities["wide"]
    assert cities["wide"] == {"a", "b", "c"}


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.sampled_from(list("abcdef")), st.integers(1, 20), min_size=1),
       st.integers(0, 10**6), st.sampled_from(sorted(SP.SETTINGS)))
def test_user_disjoint_properties(users, seed, setting):
    records = city_corpus(users)
    spec = SplitSpec("user_disjoint", setting=setting, seed=seed)
    try:
        res = SP.split_user_disjoint(records, spec)
    except SP.NoEligibleCities:
        return
    assert SP.verify_disjoint(res)
    placement = {}
    by_id = {r.id: r for r in records}
    for s in SP.SPLITS:
        for rid in res.ids[s]:
            placement.setdefault(by_id[rid].user_id, set()).add(s)
    assert all(len(v) == 1 for v in placement.values())
    assert res == SP.split_user_disjoint(records, spec)


def test_verify_disjoint_reports_overlap():
    res = SplitResult(SplitSpec("user_disjoint", setting="wide"))
    res.ids["train"], res.users["train"] = ["1"], ["u"]
    res.ids["test"], res.users["test"] = ["2"], ["u"]
    report = SP.verify_disjoint(res)
    assert not report and report.shared_users == {"train/test": ["u"]}
    assert SP.verify_disjoint(SplitResult(SplitSpec()))


def test_manifest_roundtrip(tmp_path):
    records = city_corpus({"a": 16, "b": 16})
    res = SP.split_user_disjoint(records, SplitSpec("user_disjoint", setting="narrow", seed=4,
                                                    run_id="B"))
    path = tmp_path / "m.json"
    res.write_manifest(path)
    import json

    back = SplitResult.from_manifest(json.loads(path.read_text()))
    assert back.ids == res.ids and back.users == res.users
    assert back.spec.run_seed == res.spec.run_seed
    assert [r.id for r in back.select(records, "test")] == res.test
