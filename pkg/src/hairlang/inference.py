"""Constrained autoregressive generation.

The decoding loop feeds position -> width -> thickness through the cascaded
heads and applies four structural rules: EOS is only honoured once enough
cards exist, a spline coherence test can end a card early, the first point
of each card is snapped back onto the condition surface, and long cards are
resampled to a fixed length.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .core import HairCard, Hairstyle
from .metrics import PointCloud
from .model import KIND_MOS, KIND_POINT, KIND_SOS, HairTransformer, prepare_condition
from .sequence import EOS, MOS, SOS, HairSequence, HairToken, parse_sequence
from .tokenizer import PiecewiseScheme

log = logging.getLogger(__name__)


@dataclass
class InferenceConfig:
    sampling: str = "greedy"  # or "top-k"
    top_k: int = 10
    temperature: float = 1.0
    spline_threshold: float = 0.03
    spline_min_index: int = 6
    spline_window: int = 8
    root_threshold: float = 0.03
    root_alternatives: int = 10
    min_cards_for_eos: int = 10
    soft_card_cap: int = 80
    hard_card_cap: int = 100
    enable_root_verification: bool = True
    enable_length_normalization: bool = True
    enable_coherence_check: bool = True
    max_tokens: int | None = None  # defaults to the model budget
    seed: int = 0

    def __post_init__(self):
        if self.sampling not in ("greedy", "top-k"):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if min(self.spline_threshold, self.root_threshold, self.temperature) <= 0:
            raise ValueError("thresholds and temperature must be positive")
        if not 2 <= self.soft_card_cap < self.hard_card_cap:
            raise ValueError("need 2 <= soft_card_cap < hard_card_cap")

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- the rules


def spline_extrapolate(points: np.ndarray, window: int = 8) -> np.ndarray:
    """Natural cubic spline over the last ``window`` points (index-parameterized), one step ahead."""
    pts = np.asarray(points, dtype=np.float64)[-window:]
    if len(pts) == 1:
        return pts[0].copy()
    s = np.arange(len(pts), dtype=np.float64)
    return CubicSpline(s, pts, bc_type="natural", axis=0)(float(len(pts)))


def coherence_check(card_so_far: np.ndarray, candidate: np.ndarray, cfg: InferenceConfig) -> tuple[str, float]:
    """``("accept" | "mos", deviation)`` for the next position of a card.

    Only the ``spline_min_index``-th point and later are tested.
    """
    pts = np.asarray(card_so_far, dtype=np.float64).reshape(-1, 3)
    if len(pts) + 1 < cfg.spline_min_index:
        return "accept", 0.0
    dev = float(np.linalg.norm(np.asarray(candidate, dtype=np.float64) - spline_extrapolate(pts, cfg.spline_window)))
    return ("mos" if dev > cfg.spline_threshold else "accept"), dev


def top_combinations(log_probs: list[np.ndarray], k: int) -> list[tuple[tuple[int, int, int], float]]:
    """The ``k`` best axis-token triples by summed log-probability (best-first search)."""
    ranked = [np.argsort(-lp, kind="stable") for lp in log_probs]

    def score(r):
        return float(sum(log_probs[a][ranked[a][r[a]]] for a in range(3)))

    start = (0, 0, 0)
    heap = [(-score(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < k:
        neg, r = heapq.heappop(heap)
        out.append((tuple(int(ranked[a][r[a]]) for a in range(3)), -neg))
        for a in range(3):
            nxt = tuple(r[b] + (b == a) for b in range(3))
            if nxt[a] < len(ranked[a]) and nxt not in seen:
                seen.add(nxt)
                heapq.heappush(heap, (-score(nxt), nxt))
    return out


def verify_root(
    pos_tokens: tuple[int, int, int],
    log_probs: list[np.ndarray],
    tree: cKDTree,
    scheme: PiecewiseScheme,
    cfg: InferenceConfig,
) -> tuple[tuple[int, int, int], dict]:
    """Keep ``pos_tokens`` if near the condition cloud, else pick the best nearby alternative."""

    def dist(tok):
        p = [scheme.dequantize(int(tok[a]), "xyz"[a]) for a in range(3)]
        return float(tree.query(p)[0])

    d0 = dist(pos_tokens)
    if d0 <= cfg.root_threshold:
        return tuple(pos_tokens), {"corrected": False, "distance": d0}
    cands = top_combinations(log_probs, cfg.root_alternatives)
    dists = [dist(c) for c, _ in cands]
    for rank, (c, d) in enumerate(zip(cands, dists)):
        if d <= cfg.root_threshold:
            return c[0], {"corrected": True, "distance": d0, "new_distance": d, "rank": rank + 1}
    best = int(np.argmin(dists))
    return cands[best][0], {"corrected": True, "distance": d0, "new_distance": dists[best], "rank": best + 1}


def normalize_length(card: HairCard, cfg: InferenceConfig | None = None, target: int | None = None) -> HairCard:
    """Resample a card longer than the soft cap to exactly the cap (arc-length cubic spline)."""
    cfg = cfg or InferenceConfig()
    target = target or cfg.soft_card_cap
    pts = card.points
    if len(pts) <= target:
        return card
    seg = np.linalg.norm(np.diff(pts[:, :3], axis=0), axis=1)
    # tiny index term keeps the parameter strictly increasing across repeated points
    s = np.concatenate([[0.0], np.cumsum(seg)]) + 1e-12 * np.arange(len(pts))
    u = np.linspace(s[0], s[-1], target)
    out = CubicSpline(s, pts, bc_type="natural", axis=0)(u)
    out[0], out[-1] = pts[0], pts[-1]
    out[:, 3:] = np.maximum(out[:, 3:], 0.0)
    return HairCard(out)


# ----------------------------------------------------------------- sampling


def _log_softmax(logits: torch.Tensor) -> np.ndarray:
    return torch.log_softmax(logits.double(), dim=-1).numpy()


def _pick(logits: torch.Tensor, cfg: InferenceConfig, rng: np.random.Generator) -> int:
    if cfg.sampling == "greedy":
        return int(torch.argmax(logits))
    lg = logits.double().numpy() / cfg.temperature
    k = min(cfg.top_k, len(lg))
    idx = np.argsort(-lg, kind="stable")[:k]
    p = np.exp(lg[idx] - lg[idx].max())
    return int(idx[rng.choice(k, p=p / p.sum())])


@dataclass
class GenerationResult:
    style: Hairstyle
    sequence: HairSequence
    log: list[dict] = field(default_factory=list)
    truncated: bool = False

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")

    def actions(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.log:
            counts[rec["action"]] = counts.get(rec["action"], 0) + 1
        return counts


class _Decoder:
    """Token prefix plus a key/value cache that can be rebuilt after rewrites."""

    def __init__(self, model: HairTransformer, cond: torch.Tensor):
        self.model = model
        self.cond = cond
        self.kinds = [KIND_SOS]
        self.values = [(0, 0, 0, 0, 0)]
        self.rebuild()

    def _run(self, cond, kinds, values, offset):
        k = torch.tensor([kinds], dtype=torch.long)
        v = torch.tensor([values], dtype=torch.long)
        return self.model(cond, k, v, cache=self.cache, offset=offset)[0, -1]

    def rebuild(self):
        self.cache = {}
        self.f = self._run(self.cond, self.kinds, self.values, 0)

    def push(self, kind: int, values=(0, 0, 0, 0, 0)):
        offset = self.cond.shape[1] + len(self.kinds)
        self.kinds.append(kind)
        self.values.append(tuple(values))
        self.f = self._run(None, [kind], [tuple(values)], offset)

    def positions_used(self) -> int:
        return self.cond.shape[1] + len(self.kinds)


@torch.no_grad()
def generate(
    cloud: PointCloud,
    model: HairTransformer,
    scheme: PiecewiseScheme,
    cfg: InferenceConfig | None = None,
) -> GenerationResult:
    """Sample one hairstyle conditioned on ``cloud``."""
    cfg = cfg or InferenceConfig()
    model.eval()
    rng = np.random.default_rng(cfg.seed)
    budget = min(cfg.max_tokens or model.cfg.max_tokens, model.cfg.max_tokens)
    prep = prepare_condition(cloud.points, cloud.normals, model.cfg)
    tree = cKDTree(cloud.points)
    dec = _Decoder(model, model.encode_condition(prep)[None])

    cards: list[np.ndarray] = []  # completed cards as (n, 5) token arrays
    current: list[tuple[int, ...]] = []
    glog: list[dict] = []
    truncated = False
    step = 0

    def record(action, **detail):
        glog.append({"step": step, "card": len(cards), "action": action, "detail": detail})

    def current_positions():
        if not current:
            return np.zeros((0, 3))
        return scheme.dequantize_points(np.asarray(current))[:, :3]

    def rewrite_current(new_tokens: np.ndarray):
        # replace the tokens of the card in progress and rebuild the cache
        n_old = len(current)
        del dec.kinds[len(dec.kinds) - n_old :]
        del dec.values[len(dec.values) - n_old :]
        dec.kinds.extend([KIND_POINT] * len(new_tokens))
        dec.values.extend(tuple(int(v) for v in row) for row in new_tokens)
        current[:] = [tuple(int(v) for v in row) for row in new_tokens]
        dec.rebuild()

    def close_card(reason: str) -> None:
        if cfg.enable_length_normalization and len(current) > cfg.soft_card_cap:
            card = HairCard(scheme.dequantize_points(np.asarray(current)))
            resampled = scheme.quantize_points(normalize_length(card, cfg).points)
            record(reason, before=len(current), after=len(resampled))
            rewrite_current(resampled)
        cards.append(np.asarray(current, dtype=np.int64))
        current.clear()

    while True:
        step += 1
        # room for one more point plus the closing EOS
        if dec.positions_used() + 2 > budget:
            if current:
                dropped = len(current)
                del dec.kinds[len(dec.kinds) - dropped :]
                del dec.values[len(dec.values) - dropped :]
                current.clear()
                if cards and dec.kinds[-1] == KIND_MOS:
                    dec.kinds.pop()
                    dec.values.pop()
            else:
                dropped = 0
                if cards and dec.kinds[-1] == KIND_MOS:
                    dec.kinds.pop()
                    dec.values.pop()
            truncated = True
            record("truncated", dropped_points=dropped, budget=budget)
            break

        f = dec.f[None]
        p_eos = float(torch.sigmoid(model.head_eos(f))[0, 0])
        p_mos = float(torch.sigmoid(model.head_mos(f))[0, 0])
        n_cards = len(cards) + (1 if current else 0)

        if p_eos > 0.5:
            if n_cards > cfg.min_cards_for_eos and len(current) >= 2:
                close_card("resample_soft")
                record("eos", p=p_eos)
                break
            record("eos_gated", p=p_eos, cards=n_cards)
            if len(current) >= 2:
                close_card("resample_soft")
                dec.push(KIND_MOS)
                record("mos", reason="gated_eos")
                continue
        elif p_mos > 0.5 and len(current) >= 2:
            close_card("resample_soft")
            dec.push(KIND_MOS)
            record("mos", p=p_mos)
            continue

        pos_logits = model.split_pos_logits(model.head_pos(f))
        pos = tuple(_pick(lg[0], cfg, rng) for lg in pos_logits)
        if not current and cfg.enable_root_verification:
            new_pos, info = verify_root(pos, [_log_softmax(lg[0]) for lg in pos_logits], tree, scheme, cfg)
            if info["corrected"]:
                record("root_corrected", old=list(pos), new=list(new_pos), **{k: v for k, v in info.items() if k != "corrected"})
            pos = new_pos
        ptok = torch.tensor([pos], dtype=torch.long)
        ep = model.embed_position(ptok)
        w = _pick(model.head_w(torch.cat([f, ep], dim=-1))[0], cfg, rng)
        t = _pick(model.head_t(torch.cat([f, ep, model.embed_w(torch.tensor([w]))], dim=-1))[0], cfg, rng)
        token = (*pos, w, t)

        if cfg.enable_coherence_check and current:
            xyz = np.array([scheme.dequantize(pos[a], "xyz"[a]) for a in range(3)])
            verdict, dev = coherence_check(current_positions(), xyz, cfg)
            if verdict == "mos":
                record("mos_substituted", deviation=dev, point_index=len(current) + 1)
                close_card("resample_soft")
                dec.push(KIND_MOS)
                continue

        current.append(token)
        dec.push(KIND_POINT, token)
        record("point", tokens=list(token))

        if len(current) >= cfg.hard_card_cap and cfg.enable_length_normalization:
            close_card("resample_hard")
            dec.push(KIND_MOS)
            record("mos", reason="hard_cap")

    if current:
        if len(current) >= 2:
            cards.append(np.asarray(current, dtype=np.int64))
        current.clear()
    tokens = [HairToken(SOS)]
    for k, c in enumerate(cards):
        if k:
            tokens.append(HairToken(MOS))
        tokens.extend(HairToken.point(row) for row in c)
    tokens.append(HairToken(EOS))
    seq = HairSequence(tokens)
    return GenerationResult(parse_sequence(seq, scheme), seq, glog, truncated)


def load_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
