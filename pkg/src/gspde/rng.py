"""Deterministic per-path random streams.

A master seed is split into per-path seeds with ``SeedSequence`` spawn keys, and
each path draws from a Philox (counter-based) generator. Path ``i`` therefore gets
the same stream no matter how many workers run or in which order.
"""

from __future__ import annotations

import numpy as np


def derive_seed(master: int, index: int) -> int:
    """64-bit seed for path ``index`` under ``master``."""
    if master < 0 or index < 0:
        raise ValueError("seeds and path indices must be non-negative")
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def seed_roster(master: int, n_paths: int) -> list[int]:
    return [derive_seed(master, i) for i in range(n_paths)]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))
