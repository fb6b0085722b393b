"""Hairstyle <-> token stream conversion.

Layout: ``SOS, P.., MOS, P.., MOS, ..., P.., EOS``. Cards are ordered around
the head (or along an axis for ablations) and each card runs root to tip.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import HairCard, Hairstyle
from .errors import BudgetError, ParseError
from .tokenizer import ATTRIBUTES, PiecewiseScheme

log = logging.getLogger(__name__)

SOS, MOS, EOS, POINT = "SOS", "MOS", "EOS", "P"
ORDERINGS = ("ccw", "x", "y", "z")
MAX_TOKENS = 8192


@dataclass(frozen=True)
class HairToken:
    kind: str
    values: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind == POINT:
            if self.values is None or len(self.values) != 5:
                raise ValueError("point token needs 5 values")
        elif self.kind in (SOS, MOS, EOS):
            if self.values is not None:
                raise ValueError(f"{self.kind} token carries no values")
        else:
            raise ValueError(f"unknown token kind {self.kind!r}")

    @classmethod
    def point(cls, values) -> "HairToken":
        return cls(POINT, tuple(int(v) for v in values))

    def __str__(self):
        return self.kind if self.values is None else "P " + " ".join(map(str, self.values))


@dataclass
class HairSequence:
    tokens: list[HairToken] = field(default_factory=list)
    ordering: str = "ccw"

    def __len__(self):
        return len(self.tokens)

    @property
    def point_count(self) -> int:
        return sum(t.kind == POINT for t in self.tokens)

    def to_text(self) -> str:
        return "\n".join(str(t) for t in self.tokens) + "\n"

    @classmethod
    def from_text(cls, text: str, ordering: str = "ccw") -> "HairSequence":
        tokens = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == POINT:
                    tokens.append(HairToken.point(int(v) for v in parts[1:]))
                else:
                    tokens.append(HairToken(parts[0]))
            except ValueError as exc:
                raise ParseError(f"bad token line {line!r}: {exc}", offset=f"line {lineno}") from exc
        return cls(tokens, ordering)

    def save(self, path):
        Path(path).write_text(self.to_text())

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """``(kinds, values)``: kind codes (0 SOS, 1 P, 2 MOS, 3 EOS) and ``(L, 5)`` ints."""
        codes = {SOS: 0, POINT: 1, MOS: 2, EOS: 3}
        kinds = np.array([codes[t.kind] for t in self.tokens], dtype=np.int64)
        values = np.zeros((len(self.tokens), 5), dtype=np.int64)
        for i, t in enumerate(self.tokens):
            if t.values is not None:
                values[i] = t.values
        return kinds, values


def card_means(style: Hairstyle) -> np.ndarray:
    return np.array([c.positions.mean(axis=0) for c in style.cards])


def ccw_angles(style: Hairstyle, start_angle: float = math.pi) -> np.ndarray:
    """Counter-clockwise angle (viewed from +y) of each card mean about the style centre.

    Angles are measured from the start direction; ``start_angle`` is the
    heading ``atan2(dx, dz)`` of that direction, ``pi`` being -z (the back of
    a head facing +z).
    """
    rel = card_means(style)[:, [0, 2]] - style.centroid[[0, 2]]
    heading = np.arctan2(rel[:, 0], rel[:, 1])
    return np.mod(heading - start_angle, 2 * math.pi)


def order_cards(style: Hairstyle, mode: str = "ccw", start_angle: float = math.pi) -> list[int]:
    if not style.cards:
        raise ValueError("empty hairstyle")
    if mode not in ORDERINGS:
        raise ValueError(f"unknown ordering {mode!r}; choose from {ORDERINGS}")
    means = card_means(style)
    idx = range(len(style.cards))
    if mode == "ccw":
        ang = ccw_angles(style, start_angle)
        rel = means[:, [0, 2]] - style.centroid[[0, 2]]
        radius = np.hypot(rel[:, 0], rel[:, 1])
        return sorted(idx, key=lambda i: (ang[i], radius[i], i))
    axis = "xyz".index(mode)
    return sorted(idx, key=lambda i: (means[i, axis], i))


def root_reference(style: Hairstyle) -> np.ndarray:
    c = style.centroid
    return np.array([c[0], style.y_extent[1], c[2]])


def orient_root_to_tip(card: HairCard, reference: np.ndarray) -> HairCard:
    """Reverse ``card`` if its last point is nearer the reference than its first."""
    first = np.linalg.norm(card.positions[0] - reference)
    last = np.linalg.norm(card.positions[-1] - reference)
    return card.reversed() if last < first else card


def arrange(style: Hairstyle, mode: str = "ccw", start_angle: float = math.pi) -> Hairstyle:
    """Cards in generation order, each oriented root to tip."""
    ref = root_reference(style)
    return Hairstyle([orient_root_to_tip(style.cards[i], ref) for i in order_cards(style, mode, start_angle)])


def to_sequence(
    style: Hairstyle,
    scheme: PiecewiseScheme,
    mode: str = "ccw",
    max_tokens: int = MAX_TOKENS,
    start_angle: float = math.pi,
) -> HairSequence:
    tokens = [HairToken(SOS)]
    if style.cards:
        arranged = arrange(style, mode, start_angle)
        for k, card in enumerate(arranged.cards):
            if k:
                tokens.append(HairToken(MOS))
            tokens.extend(HairToken.point(row) for row in scheme.quantize_points(card.points))
    tokens.append(HairToken(EOS))
    if len(tokens) > max_tokens:
        raise BudgetError(f"sequence of {len(tokens)} tokens exceeds budget {max_tokens}")
    return HairSequence(tokens, mode)


def expected_length(style: Hairstyle) -> int:
    return style.total_points + 2 + max(len(style.cards) - 1, 0)


def split_segments(seq: HairSequence, scheme: PiecewiseScheme | None = None) -> list[list[tuple[int, ...]]]:
    """Point-token groups between separators, after structural validation."""
    toks = seq.tokens
    if not toks or toks[0].kind != SOS:
        raise ParseError("sequence must start with SOS", offset=0)
    sizes = scheme.vocab_sizes if scheme is not None else None
    segments: list[list[tuple[int, ...]]] = [[]]
    for i, t in enumerate(toks[1:], 1):
        if t.kind == EOS:
            if i != len(toks) - 1:
                raise ParseError("tokens after EOS", offset=i)
            return segments if segments != [[]] else []
        if t.kind == SOS:
            raise ParseError("unexpected SOS", offset=i)
        if t.kind == MOS:
            segments.append([])
            continue
        if sizes is not None:
            for v, n, a in zip(t.values, sizes, ATTRIBUTES):
                if not 0 <= v < n:
                    raise ParseError(f"{a} token {v} outside vocabulary 0..{n - 1}", offset=i)
        segments[-1].append(t.values)
    raise ParseError("missing EOS", offset=len(toks))


def parse_sequence(seq: HairSequence, scheme: PiecewiseScheme) -> Hairstyle:
    segments = split_segments(seq, scheme)
    cards = []
    dropped = 0
    for seg in segments:
        if len(seg) < 2:
            dropped += 1
            continue
        cards.append(HairCard(scheme.dequantize_points(np.asarray(seg, dtype=np.int64))))
    if dropped:
        log.warning("dropped %d card(s) with fewer than 2 points", dropped)
    return Hairstyle(cards)


def check_grammar(seq: HairSequence, max_tokens: int = MAX_TOKENS) -> list[str]:
    """Violations of the sequence invariants; empty when the sequence is valid."""
    problems = []
    toks = seq.tokens
    if not toks or toks[0].kind != SOS:
        problems.append("does not start with SOS")
    if not toks or toks[-1].kind != EOS:
        problems.append("does not end with EOS")
    if len(toks) > max_tokens:
        problems.append("exceeds token budget")
    run = 0
    for i, t in enumerate(toks[1:], 1):
        if t.kind in (SOS,):
            problems.append(f"SOS at {i}")
        if t.kind in (MOS, EOS):
            if toks[i - 1].kind == MOS and t.kind == MOS:
                problems.append(f"consecutive MOS at {i}")
            if toks[i - 1].kind == SOS and t.kind == MOS:
                problems.append(f"MOS right after SOS at {i}")
            if run < 2 and not (t.kind == EOS and toks[i - 1].kind == SOS):
                problems.append(f"card ending at {i} has {run} point(s)")
            run = 0
        elif t.kind == POINT:
            run += 1
    return problems
