"""Reproducible random streams and exact bounded draws.

All randomness in this package flows through the protocol below, which is
pinned bit-exactly so that independent reimplementations can agree draw for
draw.

Stream derivation
    ``substream_seed(seed_base, i)`` is the ``(i+1)``-th output of a
    SplitMix64 sequence started at ``seed_base``::

        state = (seed_base + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64
        z = state
        z ^= z >> 30;  z = (z * 0xBF58476D1CE4E5B9) mod 2**64
        z ^= z >> 27;  z = (z * 0x94D049BB133111EB) mod 2**64
        z ^= z >> 31
        substream_seed = z

    Stream ``i`` is NumPy's PCG64 bit generator seeded with
    ``SeedSequence(substream_seed)``; raw words are the outputs of
    ``Generator.integers(0, 2**64, dtype=uint64)`` consumed in order.

Bounded draw (exact, integer totals)
    One raw word ``r`` is multiplied into the 128-bit product ``m = r *
    total``.  The candidate is ``u = m >> 64``.  The draw is rejected and a
    fresh word consumed while ``m mod 2**64 < (2**64 mod total)``, which
    makes ``u`` exactly uniform on ``[0, total)``.  For the totals used here
    the rejection probability is below 2**-40, but the branch is exact.

Unit uniform (real-valued parameters)
    ``u = (r >> 11) * 2**-53``, the standard 53-bit mantissa rule.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_U32MASK = np.uint64(0xFFFFFFFF)
_U32SHIFT = np.uint64(32)
_UNIT_SCALE = 2.0 ** -53


def substream_seed(seed_base: int, index: int) -> int:
    """Derive the 64-bit seed of substream ``index`` from ``seed_base``."""
    z = (seed_base + (index + 1) * GOLDEN) & MASK64
    z ^= z >> 30
    z = (z * _MIX1) & MASK64
    z ^= z >> 27
    z = (z * _MIX2) & MASK64
    z ^= z >> 31
    return z


def make_generator(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed (the package-wide bit source)."""
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


class RawStream:
    """Sequential uint64 raw-word source for one trajectory.

    Words are drawn from the PCG64 generator in blocks; consumption order is
    exactly the generator's output order, so a trajectory driven by this
    class is bit-identical to one driven by the block kernel with the same
    seed.
    """

    def __init__(self, seed: int, block: int = 256):
        self._gen = make_generator(seed)
        self._block = block
        self._buf: list[int] = []
        self._pos = 0

    def next_raw(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = [int(v) for v in self._gen.integers(0, 2 ** 64, dtype=np.uint64, size=self._block)]
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def uniform_below(self, total: int) -> int:
        """Exact uniform integer on [0, total) via 128-bit multiply."""
        if total <= 0:
            raise ValueError("total must be positive")
        threshold = ((1 << 64) % total) if total > 1 else 0
        while True:
            m = self.next_raw() * total
            if (m & MASK64) >= threshold:
                return m >> 64

    def unit(self) -> float:
        """Uniform float in [0, 1) from one raw word."""
        return (self.next_raw() >> 11) * _UNIT_SCALE


class BlockDraws:
    """Lockstep raw-word blocks for a batch of independent streams.

    Maintains the invariant that for every still-drawing row ``i``,
    ``raws[i, col:]`` are exactly the next undrawn words of stream ``i``.
    The astronomically rare bounded-draw rejections are repaired per row so
    the invariant (and hence scalar equivalence) survives them.
    """

    def __init__(self, seeds: np.ndarray, block: int):
        self.n = len(seeds)
        self.block = block
        self._gens = [make_generator(int(s)) for s in seeds]
        self._raws = np.empty((self.n, block), dtype=np.uint64)
        for i, g in enumerate(self._gens):
            self._raws[i] = g.integers(0, 2 ** 64, dtype=np.uint64, size=block)
        self._col = 0

    def _advance(self, live: np.ndarray) -> np.ndarray:
        if self._col == self.block:
            idx = np.nonzero(live)[0]
            for i in idx:
                self._raws[i] = self._gens[i].integers(0, 2 ** 64, dtype=np.uint64, size=self.block)
            self._col = 0
        col = self._col
        self._col += 1
        return self._raws[:, col]

    def _consume_extra(self, row: int) -> int:
        # Rejection repair: use the row's next in-block word, shift the rest
        # left, top the block up from the row's own generator.
        if self._col < self.block:
            v = int(self._raws[row, self._col])
            self._raws[row, self._col:-1] = self._raws[row, self._col + 1:]
        else:
            v = None
        fresh = int(self._gens[row].integers(0, 2 ** 64, dtype=np.uint64))
        if v is None:
            v = fresh
        else:
            self._raws[row, -1] = fresh
        return v

    def draw_below(self, totals: np.ndarray, live: np.ndarray) -> np.ndarray:
        """Exact uniform integers on [0, totals[i]) for live rows.

        ``totals`` must be positive int64 below 2**31 on live rows.  Entries
        of dead rows are unspecified.
        """
        r = self._advance(live)
        t_u = totals.astype(np.uint64)
        safe_t = np.where(live, t_u, np.uint64(1))
        r_lo = r & _U32MASK
        r_hi = r >> _U32SHIFT
        p1 = r_lo * safe_t
        p2 = r_hi * safe_t
        s = p2 + (p1 >> _U32SHIFT)
        hi = s >> _U32SHIFT
        lo = ((s & _U32MASK) << _U32SHIFT) | (p1 & _U32MASK)
        maybe = live & (lo < safe_t)
        if np.any(maybe):
            for row in np.nonzero(maybe)[0]:
                total = int(totals[row])
                threshold = (1 << 64) % total if total > 1 else 0
                m = int(r[row]) * total
                while (m & MASK64) < threshold:
                    m = self._consume_extra(int(row)) * total
                hi[row] = np.uint64(m >> 64)
        return hi.astype(np.int64)

    def draw_unit(self, live: np.ndarray) -> np.ndarray:
        """Uniform floats in [0, 1) for live rows (one word per live row)."""
        r = self._advance(live)
        return (r >> np.uint64(11)).astype(np.float64) * _UNIT_SCALE
