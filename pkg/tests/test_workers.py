import time

import pytest

from fisherflow import workers


@pytest.mark.parametrize("raw,expected", [(None, 1), ("4", 4), ("0", 1), ("many", 1)])
def test_thread_count(monkeypatch, raw, expected):
    if raw is None:
        monkeypatch.delenv(workers.THREADS_ENV, raising=False)
    else:
        monkeypatch.setenv(workers.THREADS_ENV, raw)
    assert workers.thread_count() == expected


@pytest.mark.parametrize("threads", ["1", "3"])
def test_ordered_map_keeps_input_order(monkeypatch, threads):
    monkeypatch.setenv(workers.THREADS_ENV, threads)

    def slow_square(x):
        time.sleep(0.01 * (5 - x))
        return x * x

    assert workers.ordered_map(slow_square, range(5)) == [0, 1, 4, 9, 16]
    assert workers.ordered_map(slow_square, []) == []
