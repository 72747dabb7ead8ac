"""Deterministic random streams.

One seed drives every run. Streams are Philox (counter-based) generators whose
key is a hash of the seed plus a path of labels, so ``child()`` derivation is
stateless: the stream for ("step", 12, "loss") is the same no matter what was
drawn before it.
"""

import hashlib
import struct
from typing import Any, Tuple

import numpy as np


def _label_bytes(label: Any) -> bytes:
    if isinstance(label, (bool, np.bool_)):
        return b"b" + (b"1" if label else b"0")
    if isinstance(label, (int, np.integer)):
        return b"i" + str(int(label)).encode()
    return b"s" + str(label).encode("utf-8")


def derive_key(seed: int, path: Tuple[Any, ...]) -> Tuple[int, int]:
    """128-bit Philox key for (seed, *path)."""
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<Q", int(seed) & 0xFFFFFFFFFFFFFFFF))
    for label in path:
        b = _label_bytes(label)
        h.update(struct.pack("<I", len(b)))
        h.update(b)
    lo, hi = struct.unpack("<QQ", h.digest())
    return lo, hi


class RngStream:
    """A labelled, splittable random stream.

    Exposes the subset of ``numpy.random.Generator`` the project draws from,
    so functions accept either a stream or a plain Generator.
    """

    def __init__(self, seed: int, path: Tuple[Any, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        self._generator = None

    def child(self, *labels: Any) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(labels))

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            lo, hi = derive_key(self.seed, self.path)
            key = np.array([lo, hi], dtype=np.uint64)
            self._generator = np.random.Generator(np.random.Philox(key=key))
        return self._generator

    def derived_seed(self) -> int:
        """63-bit integer identifying this stream (used as a per-item seed in manifests)."""
        lo, _ = derive_key(self.seed, self.path)
        return lo >> 1

    # Generator passthrough

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def permutation(self, x):
        return self.generator.permutation(x)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path!r})"


def child_of(rng, *labels: Any):
    """Derive a labelled child from a stream; plain Generators are used as-is."""
    if isinstance(rng, RngStream):
        return rng.child(*labels)
    return rng
