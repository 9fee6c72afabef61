"""Counter-based, splittable random streams.

A stream is addressed by ``(seed, key)`` where ``key`` is a tuple of
non-negative integers (a tag followed by indices such as a tree number or a
generation).  The bit generator is Philox, keyed from the address, so the
output of a stream never depends on which other streams were consumed before
it or on how work is split across workers.
"""

from dataclasses import dataclass

import numpy as np

# stream tags; the first element of every key
TAG_POTENTIAL = 1
TAG_POOL = 2
TAG_RAY = 3
TAG_TREE = 4
TAG_MOMENT = 5
TAG_TEST = 6
TAG_BOUNDARY = 7


@dataclass(frozen=True)
class RngStream:
    """Address of an independent random stream.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    key : tuple of int
        Stream identifier.  Distinct keys give statistically independent
        streams.
    counter : int
        Philox block counter to start from.
    """

    seed: int
    key: tuple = ()
    counter: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        key = tuple(int(k) for k in self.key)
        if any(k < 0 for k in key):
            raise ValueError("stream key entries must be non-negative")
        object.__setattr__(self, "key", key)

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        state = np.random.SeedSequence(self.seed, spawn_key=self.key).generate_state(2, np.uint64)
        bitgen = np.random.Philox(key=state)
        if self.counter:
            bitgen.advance(self.counter)
        return np.random.Generator(bitgen)


def as_stream(rng) -> RngStream:
    """Accept an ``RngStream`` or a plain integer seed."""
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or int seed, got {type(rng).__name__}")
