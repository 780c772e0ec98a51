"""Seed derivation.

Every random stream in a run comes from one integer run seed.  A stream is
identified by a name (``"init"``, ``"dropout"``, ``"shuffle/3"``, ...) and is
built as ``PCG64(SeedSequence([seed, crc32(name)]))``.  CRC32 is used instead
of ``hash()`` because the latter is salted per process.
"""
from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, stream: str) -> np.random.Generator:
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key])))
