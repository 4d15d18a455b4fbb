"""Deterministic random-stream derivation.

Every stochastic component pulls from its own named substream of one master
seed, so results are independent of scheduling and of how many streams other
components consume.  Names are hashed with sha256 (not Python's ``hash``,
which is salted per process) so streams are stable across runs and machines.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(name: str, index: int) -> tuple[int, ...]:
    digest = hashlib.sha256(f"{name}:{index}".encode()).digest()
    # Four 32-bit words are plenty of entropy for a spawn key.
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return the generator for substream ``(name, index)`` of ``seed``."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=_key(name, index))
    return np.random.Generator(np.random.PCG64(seq))
