"""
Thread-pool helpers shared by the flows and metrics.

The worker count is read from the FISHERFLOW_THREADS environment variable.
Results are always returned in input order so reductions are reproducible.

Imports:
    os
    concurrent.futures

Functions:
    thread_count
    ordered_map
"""

import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV: str = "FISHERFLOW_THREADS"


def thread_count() -> int:
    """
    Gets the worker cap from the environment.

    Returns:
        int: The number of worker threads, at least 1. Unset or invalid values give 1.
    """
    raw: str | None = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(function: Callable, items: Iterable) -> list:
    """
    Applies a function to each item, possibly concurrently, keeping input order.

    Args:
        function (Callable): The function to apply.
        items (Iterable): The inputs.

    Returns:
        list: The results in the order of the inputs.
    """
    items = list(items)
    workers: int = min(thread_count(), len(items))
    if workers <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, items))
