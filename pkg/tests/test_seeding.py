import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shortlong.seeding import child_seed, generator, parallel_map, worker_count


def test_same_path_same_stream():
    a = generator(7, "rollout", 3).random(5)
    b = generator(7, "rollout", 3).random(5)
    assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 100), st.integers(0, 100))
def test_distinct_int_labels_distinct_streams(root, i, j):
    if i == j:
        return
    a = generator(root, "x", i).random(3)
    b = generator(root, "x", j).random(3)
    assert not np.array_equal(a, b)


def test_string_and_int_labels_differ():
    # crc32("3") != 3, so the two paths must name different streams
    a = generator(0, "3").random(3)
    b = generator(0, 3).random(3)
    assert not np.array_equal(a, b)


def test_child_seed_rejects_float_labels():
    with pytest.raises(TypeError):
        child_seed(0, 1.5)


def test_adding_a_consumer_does_not_perturb_siblings():
    before = generator(11, "env", 0).normal(size=4)
    _ = generator(11, "env", 1).normal(size=4)  # new consumer
    after = generator(11, "env", 0).normal(size=4)
    assert np.array_equal(before, after)


def test_worker_count_sources(monkeypatch):
    monkeypatch.delenv("SHORTLONG_WORKERS", raising=False)
    assert worker_count() == 1
    assert worker_count(4) == 4
    monkeypatch.setenv("SHORTLONG_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2  # explicit override wins
    monkeypatch.setenv("SHORTLONG_WORKERS", "0")
    assert worker_count() == 1  # floored at one worker


def _square(x):
    return x * x


def test_parallel_map_preserves_order(monkeypatch):
    monkeypatch.delenv("SHORTLONG_WORKERS", raising=False)
    items = list(range(10))
    assert parallel_map(_square, items) == [x * x for x in items]
    assert parallel_map(_square, items, workers=2) == [x * x for x in items]
