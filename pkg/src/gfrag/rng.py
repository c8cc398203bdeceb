"""Counter-based random streams.

Every random stream is a numpy ``Generator`` over a ``Philox`` bit generator
whose 128-bit key is ``(seed, h)`` where ``h`` is a 64-bit digest of a stream
tag (a particle label, a replicate chunk index, ...). Streams are therefore
addressable: the same (seed, tag) always yields the same numbers, independently
of the order in which streams are created or of how work is scheduled.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_digest(tag) -> int:
    """64-bit digest of a tag made of ints, strings and tuples thereof."""
    h = hashlib.blake2b(digest_size=8)
    _feed(h, tag)
    return int.from_bytes(h.digest(), "little")


def _feed(h, tag):
    if isinstance(tag, tuple):
        h.update(b"(")
        for t in tag:
            _feed(h, t)
        h.update(b")")
    elif isinstance(tag, (int, np.integer)):
        h.update(b"i" + struct.pack("<q", int(tag)))
    elif isinstance(tag, str):
        h.update(b"s" + tag.encode("utf-8") + b"\0")
    else:
        raise TypeError(f"unsupported stream tag component {tag!r}")


def stream(seed: int, tag=()) -> np.random.Generator:
    """Generator keyed by ``(seed, digest(tag))``."""
    key = np.array([int(seed) & _MASK64, tag_digest(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def label_stream(seed: int, label: tuple) -> np.random.Generator:
    """Stream owned by the particle with Ulam-Harris ``label``."""
    return stream(seed, ("particle",) + tuple(label))


def chunk_stream(seed: int, name: str, index: int) -> np.random.Generator:
    """Stream for replicate chunk ``index`` of the experiment ``name``."""
    return stream(seed, ("chunk", name, int(index)))


class UniformBlock:
    """Buffered scalar uniforms drawn from a generator in blocks."""

    def __init__(self, rng: np.random.Generator, block: int = 64):
        self.rng = rng
        self.block = block
        self._buf = rng.random(block)
        self._i = 0

    def __call__(self) -> float:
        if self._i == self.block:
            self._buf = self.rng.random(self.block)
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return float(u)
