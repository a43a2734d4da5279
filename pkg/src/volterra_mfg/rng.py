"""Counter-based Gaussian increments and ordered parallel map over path batches."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import InvalidArgumentError

T = TypeVar("T")

THREADS_ENV = "VOLTERRA_MFG_THREADS"
_MASK64 = (1 << 64) - 1


def path_generator(seed: int, path: int) -> np.random.Generator:
    """Independent Philox stream for one Monte Carlo path.

    The key is the 64-bit seed and the path index occupies the top word of
    the 256-bit counter, so streams of different paths never overlap and
    any path can be regenerated on its own.
    """
    if path < 0:
        raise InvalidArgumentError("path index must be non-negative")
    bitgen = np.random.Philox(key=int(seed) & _MASK64, counter=[0, 0, 0, int(path)])
    return np.random.Generator(bitgen)


def path_increments(seed: int, path: int, n_players: int, n_steps: int, h: float) -> np.ndarray:
    """Brownian increments ``(n_players, n_steps)`` for one path.

    Draws are consumed player-major, so the increments of player ``l`` do not
    depend on how many players are requested (common random numbers across
    population sizes).
    """
    z = path_generator(seed, path).standard_normal((n_players, n_steps))
    return z * np.sqrt(h)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise InvalidArgumentError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        else:
            threads = 1
    if threads < 1:
        raise InvalidArgumentError(f"thread count must be >= 1, got {threads}")
    return threads


def path_batches(paths: int, batch_size: int) -> list[range]:
    return [range(s, min(s + batch_size, paths)) for s in range(0, paths, batch_size)]


def ordered_map(fn: Callable[[range], T], batches: Sequence[range], threads: int = 1) -> list[T]:
    """Map over batches, returning results in batch order regardless of scheduling."""
    if threads <= 1 or len(batches) <= 1:
        return [fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, batches))


def batch_means_stderr(values: Iterable[float], n_batches: int = 20) -> float:
    """Standard error of the mean from contiguous batch means."""
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if v.size < 2:
        return float("nan")
    nb = min(n_batches, v.size)
    means = np.array([chunk.mean() for chunk in np.array_split(v, nb)])
    return float(means.std(ddof=1) / np.sqrt(nb))
