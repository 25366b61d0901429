"""Deterministic random stream management.

Every stochastic component in this package draws from a generator derived
from a root seed plus a path of labels, e.g. ``generator(7, "rollout", 3)``.
Labels are hashed with crc32 so that distinct strings give distinct streams
and the derivation is stable across processes and platforms.  Two streams
with different paths are statistically independent (numpy SeedSequence
spawn-key semantics), so adding a consumer never perturbs existing ones.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

_T = TypeVar("_T")
_R = TypeVar("_R")


def _as_entropy(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    raise TypeError(f"seed path parts must be int or str, got {type(part).__name__}")


def child_seed(root: int, *path: int | str) -> np.random.SeedSequence:
    """Derive a SeedSequence for the stream identified by ``path``."""
    return np.random.SeedSequence(entropy=[int(root) & 0xFFFFFFFFFFFFFFFF] + [_as_entropy(p) for p in path])


def generator(root: int, *path: int | str) -> np.random.Generator:
    """A fresh Generator for the stream identified by ``path``."""
    return np.random.default_rng(child_seed(root, *path))


def worker_count(override: int | None = None) -> int:
    """Worker processes to use: explicit override, else SHORTLONG_WORKERS, else 1."""
    if override is not None:
        return max(1, int(override))
    env = os.environ.get("SHORTLONG_WORKERS", "")
    if env.strip():
        return max(1, int(env))
    return 1


def parallel_map(fn: Callable[[_T], _R], items: Sequence[_T], workers: int | None = None) -> list[_R]:
    """Map ``fn`` over ``items``, preserving order.

    Runs serially for one worker, in a process pool otherwise.  Results are
    identical either way; callers must pass explicit seeds through ``items``
    rather than relying on shared generator state.
    """
    n = worker_count(workers)
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
