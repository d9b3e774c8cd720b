"""Deterministic random streams.

Every source of randomness in the toolkit is an explicit
``numpy.random.Generator`` derived from a single integer seed plus a
tuple of string/int tags naming the stream ("init", "dropout",
"task.train", ...). No global RNG state is ever touched, so runs are
reproducible and independent streams never interact.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_words(tag) -> list[int]:
    """Map a tag to entropy words, stable across processes and platforms."""
    if isinstance(tag, (int, np.integer)):
        return [int(tag) & 0xFFFFFFFF, (int(tag) >> 32) & 0xFFFFFFFF]
    digest = hashlib.blake2s(str(tag).encode("utf-8"), digest_size=8).digest()
    return [int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")]


def stream(seed: int, *tags) -> np.random.Generator:
    """Return a counter-based generator for the (seed, *tags) stream."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        entropy.extend(_tag_words(tag))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
