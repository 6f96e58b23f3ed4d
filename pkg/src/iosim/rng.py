"""Counter-based RNG substreams.

Every random decision in a run draws from a substream keyed by
``(seed, purpose, agent, iteration)``. The stream depends on nothing else, so
agent turns can be evaluated in any order or concurrently without changing
the outcome.
"""

from __future__ import annotations

import hashlib
import random


def substream_seed(seed: int, purpose: str, *keys: int) -> int:
    material = ":".join([str(seed), purpose, *map(str, keys)]).encode()
    return int.from_bytes(hashlib.blake2b(material, digest_size=16).digest(), "big")


def substream(seed: int, purpose: str, *keys: int) -> random.Random:
    return random.Random(substream_seed(seed, purpose, *keys))
