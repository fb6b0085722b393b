"""Mesh ingestion, cleanup filters and a procedural hairstyle generator."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .core import HairCard, HairMesh, Hairstyle, MalformedUnitError, mesh_to_card, unit_faces
from .errors import GeometryError, ParseError

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- OBJ


def load_obj(path) -> HairMesh:
    """Read a triangle-only ASCII OBJ. Vertices are kept as written."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs 3 coordinates")
                    verts.append([float(c) for c in parts[1:4]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise ValueError(f"only triangles are supported, got {len(parts) - 1}-gon")
                    idx = []
                    for tok in parts[1:]:
                        k = int(tok.split("/")[0])
                        idx.append(k - 1 if k > 0 else len(verts) + k)
                    faces.append(idx)
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", offset=f"line {lineno}") from exc
    if not verts:
        raise ParseError(f"{path}: empty mesh")
    try:
        return HairMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except GeometryError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_obj(mesh: HairMesh, path):
    """Write one ``card_<i>`` object per card (a single object if no layout)."""
    if mesh.sections:
        spans = []
        for sec in mesh.sections:
            lo, hi = int(np.min(sec)), int(np.max(sec)) + 1
            spans.append((lo, hi))
    else:
        spans = [(0, len(mesh.vertices))]
    face_owner = np.searchsorted([hi for _, hi in spans], mesh.faces.min(axis=1), side="right") if len(mesh.faces) else []
    lines = []
    for ci, (lo, hi) in enumerate(spans):
        lines.append(f"o card_{ci}")
        lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices[lo:hi]]
        for f in mesh.faces[np.asarray(face_owner) == ci]:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------------ cleanup ops


def merge_close_vertices(mesh: HairMesh, eps: float = 1e-6) -> HairMesh:
    """Collapse vertices closer than ``eps`` to their cluster centroid.

    Repeats until no pair is within ``eps`` so that the result is a fixed point.
    Faces that lose a corner to the merge are dropped.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    verts, faces = mesh.vertices, mesh.faces
    while len(verts):
        pairs = cKDTree(verts).query_pairs(eps, output_type="ndarray")
        if not len(pairs):
            break
        n = len(verts)
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = connected_components(graph, directed=False)
        # relabel clusters in order of first appearance to keep vertex order stable
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        new_index = rank[inverse]
        counts = np.bincount(new_index)
        merged = np.zeros((len(counts), 3))
        np.add.at(merged, new_index, verts)
        verts = merged / counts[:, None]
        faces = new_index[faces]
        faces = faces[(faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])]
    if len(faces) == len(mesh.faces) and len(verts) == len(mesh.vertices):
        return mesh
    return HairMesh(verts, faces)


def edge_counts(faces: np.ndarray) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in faces:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            counts[key] = counts.get(key, 0) + 1
    return counts


def is_watertight(mesh: HairMesh) -> bool:
    if not len(mesh.faces):
        return False
    return all(c == 2 for c in edge_counts(mesh.faces).values())


def connected_parts(mesh: HairMesh) -> list[HairMesh]:
    """Connected components (by shared vertices), ordered by lowest vertex index."""
    n = len(mesh.vertices)
    if not len(mesh.faces):
        return []
    f = mesh.faces
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    used = np.unique(f)
    parts = []
    for lab in sorted(set(labels[used]), key=lambda lab: int(np.flatnonzero(labels == lab)[0])):
        keep = np.flatnonzero(labels == lab)
        remap = -np.ones(n, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        sub = f[labels[f[:, 0]] == lab]
        parts.append(HairMesh(mesh.vertices[keep], remap[sub]))
    return parts


def split_watertight_components(mesh: HairMesh, rejected: list | None = None) -> list[HairMesh]:
    """Watertight connected components; the rest go to ``rejected`` if given."""
    kept = []
    for part in connected_parts(mesh):
        if is_watertight(part):
            kept.append(part)
        else:
            log.info("dropping non-watertight component with %d vertices", len(part.vertices))
            if rejected is not None:
                rejected.append(part)
    return kept


# --------------------------------------------------------- card pattern checks


@dataclass
class Rejection:
    reason: str
    detail: str = ""

    def __bool__(self):
        return False


def _adjacency(mesh: HairMesh) -> list[set[int]]:
    adj = [set() for _ in range(len(mesh.vertices))]
    for a, b, c in mesh.faces:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return adj


def _bfs_layers(start: frozenset, adj, n: int, size: int):
    layers = [sorted(start)]
    seen = set(start)
    frontier = start
    while len(seen) < n:
        nxt = set()
        for v in frontier:
            nxt |= adj[v]
        nxt -= seen
        if len(nxt) != size:
            return None
        layers.append(sorted(nxt))
        seen |= nxt
        frontier = nxt
    return layers


def _layer_structure_ok(mesh: HairMesh, layers, size: int, adj) -> bool:
    """Faces and edges follow the repeating-unit pattern for these layers."""
    n_layers = len(layers)
    if n_layers < 2:
        return False
    layer_of = np.empty(len(mesh.vertices), dtype=np.int64)
    for k, layer in enumerate(layers):
        layer_of[layer] = k
    caps = 2 if size == 4 else 1
    if len(mesh.faces) != 2 * size * (n_layers - 1) + 2 * caps:
        return False
    fl = layer_of[mesh.faces]
    flat = fl.min(axis=1) == fl.max(axis=1)
    if np.any(fl.max(axis=1) - fl.min(axis=1) > 1):
        return False
    cap_layers = fl[flat, 0]
    if sorted(cap_layers.tolist()) != sorted([0] * caps + [n_layers - 1] * caps):
        return False
    for k, layer in enumerate(layers):
        inner = [len(adj[v] & set(layer)) for v in layer]
        if size == 4:
            want = [2, 2, 3, 3] if k in (0, n_layers - 1) else [2, 2, 2, 2]
            if sorted(inner) != want:
                return False
        elif inner != [2, 2, 2]:
            return False
        if k + 1 < n_layers:
            nxt = set(layers[k + 1])
            if any(len(adj[v] & nxt) != 2 for v in layer):
                return False
    return True


def _candidate_layers(mesh: HairMesh, size: int, adj, max_tries: int = 256):
    """Yield every layering that matches the unit pattern, starting from low-valence caps."""
    n = len(mesh.vertices)
    if n % size:
        return
    valence = np.array([len(a) for a in adj])
    low = set(np.flatnonzero(valence == valence.min()).tolist())
    face_sets = [frozenset(f.tolist()) for f in mesh.faces]
    by_vertex: dict[int, list[int]] = {}
    for fi, f in enumerate(mesh.faces):
        for v in f:
            by_vertex.setdefault(int(v), []).append(fi)
    tried = set()
    for fi, fs in enumerate(face_sets):
        if not fs & low:
            continue
        if size == 3:
            starts = [fs]
        else:
            starts = [fs | face_sets[g] for v in fs for g in by_vertex[v] if g != fi and len(fs & face_sets[g]) == 2]
        for start in starts:
            if len(start) != size or start in tried:
                continue
            tried.add(start)
            if len(tried) > max_tries:
                return
            layers = _bfs_layers(start, adj, n, size)
            if layers is not None and _layer_structure_ok(mesh, layers, size, adj):
                yield layers


def _find_layers(mesh: HairMesh, size: int):
    adj = _adjacency(mesh)
    return next(_candidate_layers(mesh, size, adj), None), adj


def _diagonal_pairs(layer, adj, is_end: bool):
    """The two opposite-corner pairs of a layer; for caps the first is the cap diagonal."""
    ls = set(layer)
    if is_end:
        deg = {v: len(adj[v] & ls) for v in layer}
        return [v for v in layer if deg[v] == 3], [v for v in layer if deg[v] == 2]
    a = layer[0]
    opp = next(v for v in layer if v != a and v not in adj[a])
    return [a, opp], [v for v in layer if v not in (a, opp)]


_RING_DIRECTED = ((0, 2), (2, 1), (1, 3), (3, 0))


def _order_by_winding(mesh: HairMesh, layers, adj) -> np.ndarray | None:
    """Exact labelling for the canonical triangulation with consistent winding.

    The root cap faces fix the ring direction; then for every ring edge
    ``a -> b`` the face holding the directed edge ``b -> a`` reaches the next
    layer at the corner that plays ``b``'s role there. Returns ``None`` when
    the mesh does not follow that pattern.
    """
    third = {}
    for a, b, c in mesh.faces.tolist():
        third[(a, b)], third[(b, c)], third[(c, a)] = c, a, b
    n = len(layers)
    w_pair, t_pair = _diagonal_pairs(layers[0], adj, True)
    first = None
    for f in mesh.faces.tolist():
        if set(f) <= set(layers[0]):
            for r in range(3):
                u, v, x = f[r:] + f[:r]
                if v in t_pair and u in w_pair and x in w_pair:
                    first = (u, v, x)
            if first:
                break
    if first is None:
        return None
    labels = [first[0], first[2], first[1], next(v for v in t_pair if v != first[1])]
    out = [labels]
    for k in range(n - 1):
        nxt_layer = set(layers[k + 1])
        nxt = [None] * 4
        for a, b in _RING_DIRECTED:
            x = third.get((labels[b], labels[a]))
            if x is None or x not in nxt_layer:
                return None
            nxt[b] = x
        if len(set(nxt)) != 4:
            return None
        labels = nxt
        out.append(labels)
    if set(out[-1][:2]) != set(_diagonal_pairs(layers[-1], adj, True)[0]):
        return None
    return np.asarray(out, dtype=np.int64)


def _order_diamonds(mesh: HairMesh, layers, adj) -> np.ndarray:
    """Reorder each layer to ``[+w, -w, +t, -t]``.

    Which opposite pair is the width diagonal is only pinned topologically at
    the two caps (they are split along it). Interior layers are labelled by a
    two-state Viterbi pass that keeps diagonal directions and lengths
    continuous between neighbouring layers.
    """
    V = mesh.vertices
    n = len(layers)
    pairs = [_diagonal_pairs(layer, adj, k in (0, n - 1)) for k, layer in enumerate(layers)]

    def vec(pair):
        return V[pair[0]] - V[pair[1]]

    def label(k, state):
        p, q = pairs[k]
        return (p, q) if state == 0 else (q, p)

    def step_cost(k, s_prev, s_next):
        (w0, t0), (w1, t1) = label(k, s_prev), label(k + 1, s_next)
        cost = 0.0
        for a, b in ((w0, w1), (t0, t1)):
            va, vb = vec(a), vec(b)
            la, lb = np.linalg.norm(va), np.linalg.norm(vb)
            cost += 1.0 - abs(_cos(va, vb))
            if la > 0 and lb > 0:
                cost += abs(np.log(la / lb))
        return cost

    inf = float("inf")
    best = [0.0, inf]  # layer 0 is fixed to its cap labelling
    back = []
    for k in range(n - 1):
        allowed = (0,) if k + 1 == n - 1 else (0, 1)
        nxt, ptr = [inf, inf], [0, 0]
        for s1 in allowed:
            for s0 in (0, 1):
                if best[s0] == inf:
                    continue
                c = best[s0] + step_cost(k, s0, s1)
                if c < nxt[s1]:
                    nxt[s1], ptr[s1] = c, s0
        back.append(ptr)
        best = nxt
    states = [0]
    for ptr in reversed(back):
        states.append(ptr[states[-1]])
    states.reverse()

    out = []
    prev_w = prev_t = None
    for k in range(n):
        w, t = (list(x) for x in label(k, states[k]))
        if prev_w is not None and vec(w) @ prev_w < 0:
            w.reverse()
        if prev_t is not None and vec(t) @ prev_t < 0:
            t.reverse()
        prev_w, prev_t = vec(w), vec(t)
        out.append([w[0], w[1], t[0], t[1]])
    return np.asarray(out, dtype=np.int64)


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def verify_card_pattern(component: HairMesh, tol: float = 1e-6) -> HairCard | Rejection:
    """Walk a watertight component from an end cap and extract its card."""
    if not len(component.faces):
        return Rejection("empty")
    if not is_watertight(component):
        return Rejection("not-watertight")
    adj = _adjacency(component)
    failure = None
    for layers in _candidate_layers(component, 4, adj):
        sections = _order_by_winding(component, layers, adj)
        if sections is None:
            sections = _order_diamonds(component, layers, adj)
        try:
            return mesh_to_card(HairMesh(component.vertices, component.faces, [sections]), tol)
        except MalformedUnitError as exc:
            failure = failure or Rejection("malformed-unit", str(exc))
    return failure or Rejection("no-end-caps", "no cap from which the unit pattern can be walked")


def standardize_triangle_units(component: HairMesh, rel_tol: float = 1e-4) -> HairMesh | Rejection:
    """Turn isosceles-triangle cross-sections into diamonds by reflecting each apex.

    Components already in diamond form are returned unchanged.
    """
    if len(component.vertices) % 4 == 0 and _find_layers(component, 4)[0] is not None:
        return component
    layers, _ = _find_layers(component, 3)
    if layers is None:
        return Rejection("no-end-caps", "not a chain of triangular units")
    V = component.vertices
    rows = []
    prev_base = None
    for k, layer in enumerate(layers):
        options = []
        for apex in layer:
            b0, b1 = [v for v in layer if v != apex]
            l0, l1 = np.linalg.norm(V[apex] - V[b0]), np.linalg.norm(V[apex] - V[b1])
            if abs(l0 - l1) <= rel_tol * max(l0, l1):
                options.append((apex, b0, b1))
        if not options:
            return Rejection("non-isosceles", f"cross-section {k} has no equal sides")
        if prev_base is not None and len(options) > 1:
            options.sort(key=lambda o: -abs(_cos(V[o[1]] - V[o[2]], prev_base)))
        apex, b0, b1 = options[0]
        base = V[b0] - V[b1]
        if prev_base is not None and base @ prev_base < 0:
            b0, b1 = b1, b0
            base = -base
        prev_base = base
        u = base / np.linalg.norm(base)
        foot = V[b1] + ((V[apex] - V[b1]) @ u) * u
        rows.append(np.stack([V[b0], V[b1], V[apex], 2 * foot - V[apex]]))
    verts = np.concatenate(rows)
    n = len(layers)
    return HairMesh(verts, unit_faces(n), [np.arange(4 * n).reshape(n, 4)])


# ----------------------------------------------------------------- style filter


@dataclass
class PreprocessConfig:
    vertex_merge_eps: float = 1e-6
    recall_threshold: float = 0.98
    max_width_thickness: float = 0.10
    max_total_points: int = 6000

    def __post_init__(self):
        if not (self.vertex_merge_eps > 0 and self.max_width_thickness > 0 and self.max_total_points > 0):
            raise ValueError("preprocess thresholds must be positive")
        if not 0 < self.recall_threshold <= 1:
            raise ValueError("recall_threshold must lie in (0, 1]")


@dataclass
class FilterResult:
    accepted: bool
    reasons: list[str] = field(default_factory=list)


def recall(accepted_vertices: np.ndarray, original_vertices: np.ndarray, eps: float = 1e-6) -> float:
    """Fraction of original vertices with an accepted vertex within ``eps``."""
    original_vertices = np.asarray(original_vertices).reshape(-1, 3)
    if not len(original_vertices):
        return 1.0
    accepted_vertices = np.asarray(accepted_vertices).reshape(-1, 3)
    if not len(accepted_vertices):
        return 0.0
    d, _ = cKDTree(accepted_vertices).query(original_vertices, distance_upper_bound=eps * (1 + 1e-9))
    return float(np.mean(np.isfinite(d)))


def filter_style(style: Hairstyle, cfg: PreprocessConfig | None = None, recall_rate: float | None = None) -> FilterResult:
    cfg = cfg or PreprocessConfig()
    reasons = []
    if not style.cards:
        reasons.append("empty")
    if recall_rate is not None and recall_rate < cfg.recall_threshold:
        reasons.append("low-recall")
    if style.cards:
        pts = style.all_points
        if np.any(pts[:, 3] > cfg.max_width_thickness):
            reasons.append("outlier-width")
        if np.any(pts[:, 4] > cfg.max_width_thickness):
            reasons.append("outlier-thickness")
    if style.total_points > cfg.max_total_points:
        reasons.append("too-many-points")
    return FilterResult(not reasons, reasons)


@dataclass
class PreprocessResult:
    style: Hairstyle
    recall: float
    filter: FilterResult
    rejections: list[Rejection]


def preprocess_mesh(mesh: HairMesh, cfg: PreprocessConfig | None = None) -> PreprocessResult:
    """Merge, split, standardize and verify a raw hair mesh into a hairstyle."""
    cfg = cfg or PreprocessConfig()
    merged = merge_close_vertices(mesh, cfg.vertex_merge_eps)
    dropped: list[HairMesh] = []
    parts = split_watertight_components(merged, dropped)
    rejections = [Rejection("not-watertight", f"{len(p.vertices)} vertices") for p in dropped]
    cards, kept_vertices = [], []
    for part in parts:
        std = standardize_triangle_units(part)
        if isinstance(std, Rejection):
            rejections.append(std)
            continue
        res = verify_card_pattern(std)
        if isinstance(res, Rejection):
            rejections.append(res)
            continue
        cards.append(res)
        kept_vertices.append(part.vertices)
    accepted = np.concatenate(kept_vertices) if kept_vertices else np.zeros((0, 3))
    rate = recall(accepted, mesh.vertices, cfg.vertex_merge_eps)
    style = Hairstyle(cards)
    return PreprocessResult(style, rate, filter_style(style, cfg, rate), rejections)


# ------------------------------------------------------------ synthetic styles


@dataclass
class SynthConfig:
    card_count: tuple[int, int] = (25, 130)
    points_per_card: tuple[int, int] = (20, 60)
    scalp_center: tuple[float, float, float] = (0.0, 0.12, 0.0)
    scalp_radius: float = 0.17
    length: tuple[float, float] = (0.12, 0.42)
    max_polar_deg: float = 80.0
    curl: float = 0.25
    gravity: float = 1.0
    width: tuple[float, float] = (0.02, 0.09)
    thickness_ratio: tuple[float, float] = (0.3, 0.7)
    tip_ratio: tuple[float, float] = (0.1, 0.3)
    max_total_points: int = 6000
    seed: int = 0

    def __post_init__(self):
        for name in ("card_count", "points_per_card", "length", "width", "thickness_ratio", "tip_ratio"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}")
        if self.points_per_card[0] < 2:
            raise ValueError("cards need at least 2 points")

    def to_json(self):
        return asdict(self)


def _bezier(ctrl: np.ndarray, s: np.ndarray) -> np.ndarray:
    s = s[:, None]
    return (
        (1 - s) ** 3 * ctrl[0]
        + 3 * (1 - s) ** 2 * s * ctrl[1]
        + 3 * (1 - s) * s**2 * ctrl[2]
        + s**3 * ctrl[3]
    )


def _synth_card(rng: np.random.Generator, cfg: SynthConfig, style_len: float, azimuth: float, polar: float) -> HairCard:
    center = np.asarray(cfg.scalp_center)
    out = np.array([np.sin(polar) * np.sin(azimuth), np.cos(polar), np.sin(polar) * np.cos(azimuth)])
    root = center + cfg.scalp_radius * out
    horiz = np.array([out[0], 0.0, out[2]])
    hn = np.linalg.norm(horiz)
    horiz = horiz / hn if hn > 1e-9 else np.array([0.0, 0.0, -1.0])
    down = np.array([0.0, -1.0, 0.0])
    L = style_len * rng.uniform(0.8, 1.2)
    wiggle = cfg.curl * L
    flat = np.array([1.0, 0.0, 1.0])
    ctrl = np.stack(
        [
            root,
            root + 0.3 * L * out,
            root + 0.45 * L * horiz + 0.35 * cfg.gravity * L * down + flat * rng.normal(0, wiggle / 3, 3),
            root + 0.35 * L * horiz + 0.8 * cfg.gravity * L * down + flat * rng.normal(0, wiggle / 2, 3),
        ]
    )
    dense = _bezier(ctrl, np.linspace(0.0, 1.0, 400))
    lo, hi = dense.min(axis=0), dense.max(axis=0)
    # shrink towards the root rather than clipping, which would leave kinks
    shrink = 1.0
    for j in range(3):
        if hi[j] > 0.49:
            shrink = min(shrink, (0.49 - root[j]) / (hi[j] - root[j]))
        if lo[j] < -0.49:
            shrink = min(shrink, (-0.49 - root[j]) / (lo[j] - root[j]))
    dense = root + shrink * (dense - root)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    n = int(rng.integers(cfg.points_per_card[0], cfg.points_per_card[1] + 1))
    targets = np.linspace(0.0, arc[-1], n)
    pos = np.stack([np.interp(targets, arc, dense[:, j]) for j in range(3)], axis=1)
    s = targets / arc[-1]
    w_root = rng.uniform(*cfg.width)
    tip = rng.uniform(*cfg.tip_ratio)
    gamma = rng.uniform(0.8, 2.0)
    profile = 1.0 - (1.0 - tip) * s**gamma
    widths = w_root * profile
    thick = widths * rng.uniform(*cfg.thickness_ratio)
    return HairCard(np.column_stack([pos, widths, thick]))


def generate_synthetic(cfg: SynthConfig) -> Hairstyle:
    """One procedural hairstyle, deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n_cards = int(rng.integers(cfg.card_count[0], cfg.card_count[1] + 1))
    style_len = rng.uniform(*cfg.length)
    polar_max = np.deg2rad(cfg.max_polar_deg)
    cards = []
    total = 0
    for k in range(n_cards):
        azimuth = 2 * np.pi * (k + rng.uniform(-0.3, 0.3)) / n_cards
        polar = polar_max * np.sqrt(rng.uniform(0.15, 1.0))
        card = _synth_card(rng, cfg, style_len, azimuth, polar)
        if total + len(card) > cfg.max_total_points:
            break
        cards.append(card)
        total += len(card)
    return Hairstyle(cards)


def synthetic_dataset(n: int, cfg: SynthConfig | None = None, seed: int = 0) -> list[Hairstyle]:
    cfg = cfg or SynthConfig()
    base = asdict(cfg)
    out = []
    for i in range(n):
        base["seed"] = seed * 100003 + i
        out.append(generate_synthetic(SynthConfig(**base)))
    return out


def write_dataset(styles: list[Hairstyle], out_dir, extra: dict | None = None) -> Path:
    """Store styles as JSON files plus a JSON-lines manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, style in enumerate(styles):
        name = f"style_{i:05d}.json"
        style.save(out_dir / name)
        rec = {"path": name, "cards": len(style), "points": style.total_points}
        if extra:
            rec.update(extra)
        lines.append(json.dumps(rec))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


def read_dataset(path) -> list[Hairstyle]:
    path = Path(path)
    manifest = path / "manifest.jsonl" if path.is_dir() else path
    root = manifest.parent
    styles = []
    for line in manifest.read_text().splitlines():
        if line.strip():
            styles.append(Hairstyle.load(root / json.loads(line)["path"]))
    return styles
