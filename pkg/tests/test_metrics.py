import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_f1, pearson_formula
from utilorch.metrics import (
    Bucket,
    MetricError,
    bucket_continue_rate,
    efficiency,
    f1_score,
    normalize_answer,
    pearson,
)


def test_normalize_answer():
    assert normalize_answer("The  Eiffel-Tower!") == "eiffeltower"
    assert normalize_answer("An apple a day") == "apple day"


def test_f1_examples():
    r = f1_score("Barack Obama", "Obama")
    assert (r.precision, r.recall) == (0.5, 1.0)
    assert r.f1 == pytest.approx(2 / 3)
    assert f1_score("the Paris", "paris").f1 == 1.0
    assert f1_score("", "").f1 == 1.0
    assert f1_score("", "paris").f1 == 0.0
    assert f1_score("london", "paris").f1 == 0.0


def test_f1_counts_repeats_as_multiset():
    assert f1_score("paris paris", "paris").precision == 0.5
    assert f1_score("paris", "paris paris").recall == 0.5


@given(st.lists(st.sampled_from("a b c paris france x".split()), max_size=6), st.lists(st.sampled_from("a b c paris france x".split()), max_size=6))
def test_f1_matches_brute_force(pred, gold):
    got = f1_score(" ".join(pred), " ".join(gold)).f1
    want = brute_f1(normalize_answer(" ".join(pred)).split(), normalize_answer(" ".join(gold)).split())
    assert got == pytest.approx(want, abs=1e-12)
    assert 0.0 <= got <= 1.0


def test_efficiency():
    assert efficiency(0.5, 100) == 0.005
    with pytest.raises(MetricError):
        efficiency(0.5, 0)


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    with pytest.raises(MetricError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(MetricError):
        pearson([0.5] * 10, [0.1 * i for i in range(10)])
    with pytest.raises(MetricError):
        pearson([1], [1])
    with pytest.raises(MetricError):
        pearson([1, 2], [1, 2, 3])


def test_pearson_matches_formula():
    rng = random.Random(1)
    for _ in range(20):
        n = rng.randint(3, 40)
        x = [rng.random() for _ in range(n)]
        y = [rng.random() for _ in range(n)]
        assert pearson(x, y) == pytest.approx(pearson_formula(x, y), abs=1e-9)


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=20), st.floats(0.1, 10), st.floats(-50, 50), st.integers(0, 10**6))
def test_pearson_location_scale_invariant(x, a, c, seed):
    rng = random.Random(seed)
    y = [rng.random() for _ in x]
    if max(x) - min(x) < 1e-3:
        return
    assert pearson([a * v + c for v in x], y) == pytest.approx(pearson(x, y), abs=1e-9)


def test_buckets():
    records = [(0.0, False), (0.2, True), (0.33, True), (0.5, False), (0.7, True), (1.0, True)]
    got = bucket_continue_rate(records)
    assert got == [
        Bucket(0.0, 0.33, 2, 0.5),
        Bucket(0.33, 0.66, 2, 0.5),
        Bucket(0.66, 1.0, 2, 1.0),
    ]
    assert bucket_continue_rate([])[0].continue_rate is None
    with pytest.raises(MetricError):
        bucket_continue_rate(records, [0.0, 0.5, 0.4, 1.0])
    with pytest.raises(MetricError):
        bucket_continue_rate(records, [0.1, 1.0])
