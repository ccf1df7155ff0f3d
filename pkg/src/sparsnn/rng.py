"""Counter-based random number generation for reproducible spike dropping.

Drop decisions must not depend on execution order: two runs with the same
seed, or the same run partitioned differently across threads, have to drop
exactly the same spikes. Instead of a stateful generator we derive every
random draw from a pure integer hash of (seed, stream position, batch row,
draw index), so any (layer, timestep, row) can be evaluated independently
and in any order. The hash is the splitmix64 finalizer, which is cheap and
passes the statistical bar needed here (uniform subset selection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer (pure Python ints)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer; `z` must be uint64."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _combine(h: int, word: int) -> int:
    return mix64(h + _GOLDEN + (word & _MASK64))


@dataclass(frozen=True)
class DropRng:
    """Keyed source of drop decisions.

    `seed` identifies the experiment, `position` the stream position (the
    caller encodes layer/timestep/batch counters into it). The batch row is
    mixed in at draw time, plus a small `salt` to separate independent
    decisions at the same position (e.g. spike drops vs gradient drops).
    Identical (seed, position, row, salt) give identical draws on every
    platform: the implementation is integer-only.
    """

    seed: int
    position: int = 0

    def at(self, position: int) -> "DropRng":
        """Return the same keyed stream repositioned at `position`."""
        return DropRng(self.seed, position)

    def _base(self, row: int, salt: int) -> int:
        h = self.seed & _MASK64
        h = _combine(h, self.position)
        h = _combine(h, row)
        h = _combine(h, salt)
        return h

    def keys(self, row: int, count: int, salt: int = 0) -> np.ndarray:
        """`count` independent 64-bit keys for (seed, position, row, salt)."""
        base = self._base(row, salt)
        idx = np.arange(1, count + 1, dtype=np.uint64)
        return _mix64_array(np.uint64(base) + idx * np.uint64(_GOLDEN))

    def subset(
        self, row: int, candidates: np.ndarray, keep: int, salt: int = 0
    ) -> np.ndarray:
        """Uniformly keep `keep` of `candidates`, returned sorted ascending.

        Each candidate gets an i.i.d. 64-bit key; the `keep` smallest keys
        win, which makes every subset equally likely.
        """
        n = len(candidates)
        if keep >= n:
            return np.sort(candidates)
        if keep <= 0:
            return candidates[:0]
        keys = self.keys(row, n, salt)
        order = np.argsort(keys, kind="stable")
        return np.sort(candidates[order[:keep]])
