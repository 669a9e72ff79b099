"""Boolean signals over a closed time domain ``[0, horizon]``, as interval sets.

An interval is stored as ``(lo, ls, hi, hs)`` where ``ls`` is 0 for a closed
lower end and +1 for an open one, and ``hs`` is 0 for a closed upper end and
-1 for an open one.  Reading ``(v, s)`` as "v plus s infinitesimals", a real
``t`` lies in the interval iff ``(lo, ls) <= (t, 0) <= (hi, hs)``
lexicographically.  Shifts, complements and intersections then reduce to
tuple comparisons, which keeps open/closed endpoints exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

Interval = tuple[float, int, float, int]


def _nonempty(iv: Interval) -> bool:
    return (iv[0], iv[1]) <= (iv[2], iv[3])


def _normalize(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    items = sorted((iv for iv in intervals if _nonempty(iv)), key=lambda iv: (iv[0], iv[1]))
    merged: list[list] = []
    for lo, ls, hi, hs in items:
        if merged:
            last = merged[-1]
            # touching or overlapping: no point is missing between the two
            if (lo, ls) <= (last[2], last[3] + 1):
                if (hi, hs) > (last[2], last[3]):
                    last[2], last[3] = hi, hs
                continue
        merged.append([lo, ls, hi, hs])
    return tuple(tuple(m) for m in merged)


@dataclass(frozen=True)
class BoolSignal:
    intervals: tuple[Interval, ...]
    horizon: float

    @classmethod
    def make(cls, intervals: Iterable[Interval], horizon: float) -> BoolSignal:
        clipped = []
        for lo, ls, hi, hs in intervals:
            if (lo, ls) < (0.0, 0):
                lo, ls = 0.0, 0
            if (hi, hs) > (horizon, 0):
                hi, hs = horizon, 0
            clipped.append((lo, ls, hi, hs))
        return cls(_normalize(clipped), horizon)

    @classmethod
    def true(cls, horizon: float) -> BoolSignal:
        return cls(((0.0, 0, horizon, 0),), horizon)

    @classmethod
    def from_segments(cls, times, values, horizon: float) -> BoolSignal:
        """Signal that equals ``values[k]`` on ``[times[k], times[k+1])``.

        The last value holds up to and including ``horizon``.
        """
        intervals = []
        start = None
        n = len(times)
        for k in range(n):
            if values[k] and start is None:
                start = times[k]
            elif not values[k] and start is not None:
                intervals.append((float(start), 0, float(times[k]), -1))
                start = None
        if start is not None:
            intervals.append((float(start), 0, float(horizon), 0))
        return cls.make(intervals, horizon)

    def __contains__(self, t: float) -> bool:
        return any((lo, ls) <= (t, 0) <= (hi, hs) for lo, ls, hi, hs in self.intervals)

    def at_zero(self) -> bool:
        return bool(self.intervals) and self.intervals[0][0] == 0.0 and self.intervals[0][1] == 0

    def negate(self) -> BoolSignal:
        gaps = []
        cursor = (0.0, 0)
        for lo, ls, hi, hs in self.intervals:
            gaps.append((cursor[0], cursor[1], lo, ls - 1))
            cursor = (hi, hs + 1)
        gaps.append((cursor[0], cursor[1], self.horizon, 0))
        return BoolSignal(_normalize(gaps), self.horizon)

    def conjoin(self, other: BoolSignal) -> BoolSignal:
        out = []
        a, b = self.intervals, other.intervals
        i = j = 0
        while i < len(a) and j < len(b):
            lo = max((a[i][0], a[i][1]), (b[j][0], b[j][1]))
            hi = min((a[i][2], a[i][3]), (b[j][2], b[j][3]))
            if lo <= hi:
                out.append((lo[0], lo[1], hi[0], hi[1]))
            if (a[i][2], a[i][3]) < (b[j][2], b[j][3]):
                i += 1
            else:
                j += 1
        return BoolSignal(_normalize(out), min(self.horizon, other.horizon))

    def until(self, other: BoolSignal, a: float, b: float) -> BoolSignal:
        """Points ``t`` with some ``t' in [t+a, t+b]`` where ``other`` holds and
        ``self`` holds throughout ``[t, t')``."""
        horizon = min(self.horizon, other.horizon)
        # lower end of the witness window relative to t: t+a, or strictly after t when a == 0
        wa = 0 if a > 0 else 1
        out = []
        if a == 0:
            out.extend(other.intervals)
        for j1, js1, j2, js2 in self.intervals:
            for k1, ks1, k2, ks2 in other.intervals:
                # witness t' must satisfy  max(t+a, k1) <= min(t+b, j2, k2)
                if (k1, ks1) > (j2, 0):
                    continue
                lowers = [(j1, js1)]
                uppers = [(j2, js2)]
                # (t + a, wa) <= (j2, 0)  and  (t + a, wa) <= (k2, ks2)
                for c, cs in ((j2, 0), (k2, ks2)):
                    uppers.append((c - a, 0) if wa <= cs else (c - a, -1))
                # (k1, ks1) <= (t + b, 0)
                if not math.isinf(b):
                    lowers.append((k1 - b, 0) if ks1 <= 0 else (k1 - b, 1))
                lo, hi = max(lowers), min(uppers)
                if lo <= hi:
                    out.append((lo[0], lo[1], hi[0], hi[1]))
        return BoolSignal.make(out, horizon)
