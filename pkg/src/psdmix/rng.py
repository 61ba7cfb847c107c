"""Reproducible, splittable random streams.

Every sampler accepts either a :class:`RngStream` or a plain
:class:`numpy.random.Generator`.  Streams are keyed by a seed plus an
integer (or tuple of integers) so each chain / time point / stage can own an
independent sequence that does not depend on scheduling order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _key(stream_id) -> tuple[int, ...]:
    if isinstance(stream_id, (tuple, list)):
        return tuple(int(s) for s in stream_id)
    return (int(stream_id),)


@dataclass
class RngStream:
    """A PCG64 stream identified by ``(seed, stream_id)``.

    Two streams built from the same pair replay the same draws.  The
    generator is created lazily and then advanced by every draw, so reusing
    one ``RngStream`` object continues the sequence.
    """

    seed: int
    stream_id: int | tuple[int, ...] = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.seed) < 0 or int(self.seed) >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(int(self.seed), spawn_key=_key(self.stream_id))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, *keys: int) -> "RngStream":
        """Independent sub-stream, e.g. ``stream.child(chain, t)``."""
        return RngStream(self.seed, _key(self.stream_id) + tuple(int(k) for k in keys))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Shorthand for ``RngStream(seed, keys).generator``."""
    return RngStream(seed, tuple(keys) if keys else 0).generator
