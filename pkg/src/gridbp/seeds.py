"""Deterministic named RNG substreams derived from a single master seed."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Stable integer sub-seed for ``label`` under the master ``seed``."""
    key = zlib.crc32(label.encode("utf-8"))
    return (int(seed) % (1 << 63)) * 0x1_0000_0000 + key


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named component of a run.

    Streams with different labels are statistically independent, so a
    component can be re-run in isolation without replaying the others.
    """
    entropy = (int(seed) % (1 << 63), zlib.crc32(label.encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))
