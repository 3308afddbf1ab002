"""Named random streams derived from a single run seed."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

STREAMS = {
    "dataset": 0,
    "sampling": 1,
    "restarts": 2,
    "init": 3,
    "eval": 4,
}


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 generator for one named purpose.

    Streams with different names never share state, so adding draws to one
    (say, more training steps) leaves the others untouched.
    """
    if name not in STREAMS:
        raise ConfigError(f"unknown random stream {name!r}; expected one of {sorted(STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],)))


def stream_seed(seed: int, name: str) -> int:
    """Integer seed for APIs that take a seed rather than a generator."""
    return int(stream_rng(seed, name).integers(0, 2**31 - 1))
