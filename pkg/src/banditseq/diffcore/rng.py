"""Deterministic random streams.

Every source of randomness in this package flows through a `RandomStream`,
which wraps numpy's Philox bit generator (a counter-based PRNG with a
128-bit key and pure integer arithmetic, so identical seeds give identical
draws on every platform). Streams are forked by *label* rather than by
consuming parent state: `fork(label)` hashes the parent key together with
the label, so the same (seed, label) pair always denotes the same
substream no matter how much of the parent was consumed. That is what
makes per-round reward noise and per-sentence sampling replayable.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ContractViolation


def _key_from_bytes(material: bytes) -> np.ndarray:
    digest = hashlib.sha256(material).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64).copy()


class RandomStream:
    """A seeded, forkable stream of random draws."""

    def __init__(self, seed: int, _key: np.ndarray | None = None):
        if _key is None:
            _key = _key_from_bytes(b"banditseq/" + int(seed).to_bytes(8, "little", signed=True))
        self._key = _key
        self._gen = np.random.Generator(np.random.Philox(key=_key))

    def fork(self, *labels) -> "RandomStream":
        """Independent substream identified by (this stream's key, labels).

        Forking does not consume from this stream; the same labels always
        yield the same substream. Multiple labels address nested contexts
        (e.g. a purpose string plus a round index) in one call.
        """
        if not labels:
            raise ContractViolation("fork needs at least one label")
        material = self._key.tobytes()
        for label in labels:
            material += b"/" + str(label).encode("utf-8")
        return RandomStream(0, _key=_key_from_bytes(material))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def categorical(self, probs: np.ndarray) -> int:
        """Draw an index from a probability vector by inverse CDF.

        Walks the cumulative sum in index order, so a given uniform draw
        maps to the same index regardless of how the probabilities were
        produced.
        """
        u = self._gen.uniform()
        acc = 0.0
        last = len(probs) - 1
        for i in range(last):
            acc += probs[i]
            if u < acc:
                return i
        return last


def seeded_rng(seed: int) -> RandomStream:
    """Root stream for a 64-bit seed."""
    return RandomStream(seed)
