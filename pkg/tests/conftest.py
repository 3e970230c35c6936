import numpy as np
import pytest

from microdialect.corpus import LocationHierarchy, TweetRecord
from microdialect.nncore.tensor import set_mode
from microdialect.synthetic import make_corpus


@pytest.fixture(autouse=True)
def float64_mode():
    set_mode("test")
    yield
    set_mode("test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic():
    return make_corpus(seed=0)


@pytest.fixture(scope="session")
def small_synthetic():
    return make_corpus(seed=3, users_train=2, users_dev=1, users_test=1, tweets_per_user=6)


def rec(rid, user="u", text="كتاب جديد هنا", city=None, state=None, country=None, **kw):
    labels = LocationHierarchy(city, state, country) if city else None
    return TweetRecord(id=rid, user_id=user, text=text, labels=labels, **kw)


# criterion number -> (passed, title, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
