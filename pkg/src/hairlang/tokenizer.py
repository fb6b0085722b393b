"""Piecewise non-uniform quantization of control-point attributes.

Each attribute range is split into a few intervals, each carrying its own
number of equal-width bins, so dense regions of the data get finer bins.
Bins are half-open ``[lo, hi)`` except the very last, which also holds the
attribute maximum; values outside the range are clamped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

ATTRIBUTES = ("x", "y", "z", "w", "t")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    levels: int


class PiecewiseScheme:
    """Per-attribute bin edges built from ``Interval`` lists."""

    def __init__(self, intervals: dict[str, list[Interval]]):
        missing = set(ATTRIBUTES) - set(intervals)
        if missing:
            raise ValueError(f"scheme missing attributes: {sorted(missing)}")
        self.intervals = {a: [Interval(*iv) if not isinstance(iv, Interval) else iv for iv in intervals[a]] for a in ATTRIBUTES}
        self.edges = {a: _edges(self.intervals[a], a) for a in ATTRIBUTES}

    def levels(self, attribute: str) -> int:
        return len(self.edges[attribute]) - 1

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(self.levels(a) for a in ATTRIBUTES)

    def bin_width(self, attribute: str, token) -> np.ndarray:
        e = self.edges[attribute]
        token = np.asarray(token)
        return e[token + 1] - e[token]

    def quantize(self, value, attribute: str):
        """Token index of ``value`` (scalar or array) for ``attribute``."""
        v = np.asarray(value, dtype=np.float64)
        if np.any(np.isnan(v)):
            raise ValueError("cannot quantize NaN")
        e = self.edges[attribute]
        tok = np.searchsorted(e, v, side="right") - 1
        tok = np.clip(tok, 0, len(e) - 2)
        return int(tok) if tok.ndim == 0 else tok.astype(np.int64)

    def dequantize(self, token, attribute: str):
        """Bin centre for ``token`` (scalar or array)."""
        k = np.asarray(token)
        n = self.levels(attribute)
        if not np.issubdtype(k.dtype, np.integer):
            raise ValueError("tokens must be integers")
        if np.any((k < 0) | (k >= n)):
            raise ValueError(f"token out of range for attribute {attribute!r} (0..{n - 1})")
        e = self.edges[attribute]
        c = (e[k] + e[k + 1]) / 2.0
        return float(c) if c.ndim == 0 else c

    def quantize_points(self, points: np.ndarray) -> np.ndarray:
        """``(N, 5)`` float rows to ``(N, 5)`` int tokens."""
        points = np.asarray(points, dtype=np.float64)
        return np.stack([self.quantize(points[:, j], a) for j, a in enumerate(ATTRIBUTES)], axis=1)

    def dequantize_points(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        return np.stack([self.dequantize(tokens[:, j], a) for j, a in enumerate(ATTRIBUTES)], axis=1)

    def to_json(self) -> dict:
        return {a: [[iv.lo, iv.hi, iv.levels] for iv in self.intervals[a]] for a in ATTRIBUTES}

    @classmethod
    def from_json(cls, doc: dict) -> "PiecewiseScheme":
        return cls({a: [Interval(float(lo), float(hi), int(n)) for lo, hi, n in doc[a]] for a in ATTRIBUTES})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "PiecewiseScheme":
        return cls.from_json(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        return isinstance(other, PiecewiseScheme) and self.to_json() == other.to_json()


def _edges(intervals: list[Interval], name: str) -> np.ndarray:
    if not intervals:
        raise ValueError(f"attribute {name!r} has no intervals")
    edges = []
    for k, iv in enumerate(intervals):
        if iv.levels < 1 or not iv.hi > iv.lo:
            raise ValueError(f"bad interval {iv} for {name!r}")
        if k and iv.lo != intervals[k - 1].hi:
            raise ValueError(f"intervals for {name!r} are not contiguous")
        # exact rational edges so interval boundaries land on the literal bounds
        lo, hi = Fraction(str(iv.lo)), Fraction(str(iv.hi))
        start = 0 if k == 0 else 1
        edges += [float(lo + (hi - lo) * j / iv.levels) for j in range(start, iv.levels + 1)]
    e = np.asarray(edges)
    if np.any(np.diff(e) <= 0):
        raise ValueError(f"bin edges for {name!r} are not strictly increasing")
    return e


def default_scheme() -> PiecewiseScheme:
    return PiecewiseScheme(
        {
            "x": [Interval(-0.5, -0.1, 96), Interval(-0.1, 0.1, 320), Interval(0.1, 0.5, 96)],
            "y": [Interval(-0.5, 0.0, 96), Interval(0.0, 0.3, 160), Interval(0.3, 0.5, 256)],
            "z": [Interval(-0.5, -0.15, 96), Interval(-0.15, 0.1, 320), Interval(0.1, 0.5, 96)],
            "w": [Interval(0.0, 0.03, 64), Interval(0.03, 0.1, 64)],
            "t": [Interval(0.0, 0.02, 64), Interval(0.02, 0.1, 64)],
        }
    )


def uniform_scheme(position_levels: int = 512, size_levels: int = 128) -> PiecewiseScheme:
    """Single-interval grid over the same ranges, for ablations."""
    pos = [Interval(-0.5, 0.5, position_levels)]
    return PiecewiseScheme(
        {"x": pos, "y": pos, "z": pos, "w": [Interval(0.0, 0.1, size_levels)], "t": [Interval(0.0, 0.1, size_levels)]}
    )
