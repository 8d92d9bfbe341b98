"""Seeded randomness with named, collision-free substreams.

The generator is Philox (4x64, 10 rounds), a counter-based 64-bit PRNG: the
same (seed, purpose, indices) tuple always yields the same stream on every
platform, and distinct tuples yield statistically independent streams.  Keys
are derived by hashing the tuple with BLAKE2b, so adding a new purpose can
never perturb an existing one.

Purposes used by the pipeline:

    "data"      synthetic video/caption generation (split per video)
    "init"      parameter initialization
    "sampling"  contrastive pair sampling during training
    "order"     per-epoch shuffling of the training videos
    "gradcheck" coordinate subsampling in the finite-difference harness
"""

from __future__ import annotations

import hashlib

import numpy as np


def _philox_key(seed: int, purpose: str, indices: tuple[int, ...]) -> int:
    # Philox4x64 takes a 128-bit key, hence the 16-byte digest
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode("utf-8"))
    h.update(b"\x1f")
    h.update(purpose.encode("utf-8"))
    for ix in indices:
        h.update(b"\x1f")
        h.update(str(int(ix)).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class SeededRng:
    """Root of a tree of independent Philox streams."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)

    def stream(self, purpose: str, *indices: int) -> np.random.Generator:
        """Fresh generator for (purpose, indices); repeatable call-for-call."""
        key = _philox_key(self.seed, purpose, indices)
        return np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeededRng(seed={self.seed})"
