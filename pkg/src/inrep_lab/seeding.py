"""Named random substreams derived from one root seed.

``substream(seed, "train", "critic")`` always yields the same generator for the
same names, independent of how many other streams were drawn before it.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(names) -> tuple[int, ...]:
    return tuple(zlib.crc32(str(n).encode()) for n in names)


def seed_sequence(seed: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_key(names))


def substream(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *names))


def child_seed(seed: int, *names) -> int:
    """A plain integer seed for APIs that do not take a SeedSequence."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint32)[0])
