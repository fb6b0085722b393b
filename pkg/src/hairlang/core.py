"""Invertible control-point parameterization of hair cards.

A hair card is a chain of diamond cross-sections. Each control point stores
only its position, width and thickness; the width direction comes from a
smooth normal field solved along the card and the thickness direction is the
cross product of that normal with the curve tangent. Reconstruction places
the four diamond corners from these frames and stitches consecutive
cross-sections into a closed tube; extraction reads centroids and diagonal
lengths back off the mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.linalg import solveh_banded

from .errors import DegenerateGeometryError, GeometryError, MalformedUnitError, ParseError

# five-point stencil, applied to [p[i-2], p[i-1], p[i], p[i+1], p[i+2]]
STENCIL = np.array([-1.0 / 12.0, 2.0 / 3.0, 0.0, -2.0 / 3.0, 1.0 / 12.0])

# axis priority for sign and tie-break rules: y, then x, then z
AXIS_PRIORITY = (1, 0, 2)

_EPS_NORM = 1e-10


@dataclass
class HairCard:
    """Ordered control points of one card, root first.

    ``points`` is an ``(N, 5)`` array of ``[x, y, z, width, thickness]``.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 5:
            raise ValueError(f"card points must have shape (N, 5), got {pts.shape}")
        if len(pts) < 2:
            raise ValueError("a hair card needs at least 2 control points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("card contains non-finite values")
        if np.any(pts[:, 3:] < 0):
            raise ValueError("width and thickness must be non-negative")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def widths(self) -> np.ndarray:
        return self.points[:, 3]

    @property
    def thicknesses(self) -> np.ndarray:
        return self.points[:, 4]

    def reversed(self) -> "HairCard":
        return HairCard(self.points[::-1].copy())

    def scaled(self, s: float) -> "HairCard":
        return HairCard(self.points * s)


@dataclass
class Hairstyle:
    cards: list[HairCard] = field(default_factory=list)

    def __len__(self):
        return len(self.cards)

    @property
    def total_points(self) -> int:
        return sum(len(c) for c in self.cards)

    @cached_property
    def all_points(self) -> np.ndarray:
        if not self.cards:
            return np.zeros((0, 5))
        return np.concatenate([c.points for c in self.cards])

    @cached_property
    def centroid(self) -> np.ndarray:
        return self.all_points[:, :3].mean(axis=0)

    @cached_property
    def y_extent(self) -> tuple[float, float]:
        y = self.all_points[:, 1]
        return float(y.min()), float(y.max())

    def to_json(self) -> dict:
        return {"cards": [{"points": c.points.tolist()} for c in self.cards]}

    @classmethod
    def from_json(cls, doc: dict) -> "Hairstyle":
        try:
            cards = [HairCard(np.asarray(c["points"], dtype=np.float64)) for c in doc["cards"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"invalid hairstyle document: {exc}") from exc
        return cls(cards)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Hairstyle":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", offset=f"line {exc.lineno}") from exc
        return cls.from_json(doc)


@dataclass
class SolverConfig:
    smoothness_weight: float = 1.0
    # None means min(5, N)
    pca_window: int | None = None

    def __post_init__(self):
        if not self.smoothness_weight > 0:
            raise ValueError("smoothness_weight must be positive")

    def window_for(self, n: int) -> int:
        w = 5 if self.pca_window is None else self.pca_window
        return max(2, min(w, n))


@dataclass
class FrameField:
    tangents: np.ndarray
    width_dirs: np.ndarray
    thickness_dirs: np.ndarray


@dataclass
class HairMesh:
    """Triangle mesh with optional per-card cross-section bookkeeping.

    ``sections`` holds, for each card, an ``(n_points, k)`` array of vertex
    indices; ``k`` is 4 for canonical diamonds in the order
    ``[+width, -width, +thickness, -thickness]``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    sections: list[np.ndarray] | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")

    @property
    def card_sizes(self) -> list[int]:
        return [len(s) for s in self.sections] if self.sections is not None else []

    @property
    def scalar_count(self) -> int:
        return 3 * len(self.vertices) + 3 * len(self.faces)


def sign_fix(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so its largest-magnitude component is positive.

    Components equal in magnitude are resolved by axis priority y > x > z.
    """
    mags = np.abs(v)
    top = mags.max()
    for axis in AXIS_PRIORITY:
        if mags[axis] >= top - 1e-12:
            return v if v[axis] > 0 else -v
    return v


def _unit(v, eps=_EPS_NORM):
    n = np.linalg.norm(v)
    if n < eps:
        return None
    return v / n


def estimate_tangents(card: HairCard) -> np.ndarray:
    """Unit tangents pointing root to tip, one per control point.

    Interior points use the five-point stencil; boundary indices are clamped
    to the nearest existing point. Cards shorter than five points use
    one-sided differences at the ends and central differences inside.
    """
    p = card.positions
    n = len(p)
    if np.ptp(p, axis=0).max() == 0.0:
        raise DegenerateGeometryError("all control points coincide")

    if n >= 5:
        idx = np.clip(np.arange(n)[:, None] + np.arange(-2, 3)[None, :], 0, n - 1)
        raw = np.einsum("k,ikj->ij", STENCIL, p[idx])
        tangents = -raw
    else:
        tangents = np.empty_like(p)
        tangents[0] = p[1] - p[0]
        tangents[-1] = p[-1] - p[-2]
        for i in range(1, n - 1):
            tangents[i] = p[i + 1] - p[i - 1]

    out = np.empty_like(tangents)
    for i in range(n):
        t = _unit(tangents[i])
        if t is None:
            # repeated points: fall back to the nearest non-zero chord
            t = _fallback_tangent(p, i)
        out[i] = t
    return out


def _fallback_tangent(p, i):
    n = len(p)
    for step in range(1, n):
        for a, b in ((i, min(i + step, n - 1)), (max(i - step, 0), i), (max(i - step, 0), min(i + step, n - 1))):
            t = _unit(p[b] - p[a])
            if t is not None:
                return t
    raise DegenerateGeometryError("all control points coincide")


def build_data_matrices(card: HairCard) -> np.ndarray:
    """Per-point ``3x3`` scatter of the difference vectors to each neighbour."""
    p = card.positions
    n = len(p)
    D = np.zeros((n, 3, 3))
    d_prev = p[1:] - p[:-1]  # d_prev for points 1..n-1
    d_next = p[:-1] - p[1:]  # d_next for points 0..n-2
    D[1:] += np.einsum("ni,nj->nij", d_prev, d_prev)
    D[:-1] += np.einsum("ni,nj->nij", d_next, d_next)
    return D


def pca_initial_normal(card: HairCard, window: int) -> np.ndarray:
    """Smallest-variance direction of the first ``window`` positions.

    When the two smallest eigenvalues coincide (collinear or two-point
    windows) the result is the first axis in y, x, z order that is least
    aligned with the dominant direction, orthogonalized against it.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    pts = card.positions[: min(window, len(card))]
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[-1], 1e-300)
    if evals[-1] <= 0:
        raise DegenerateGeometryError("PCA window has coincident points")
    if (evals[1] - evals[0]) <= 1e-9 * scale:
        dominant = evecs[:, 2]
        align = np.abs(dominant)
        best = min(AXIS_PRIORITY, key=lambda a: (round(align[a], 12), AXIS_PRIORITY.index(a)))
        e = np.zeros(3)
        e[best] = 1.0
        normal = e - (e @ dominant) * dominant
        normal /= np.linalg.norm(normal)
    else:
        normal = evecs[:, 0]
    return sign_fix(normal)


def _assemble_system(D: np.ndarray, lam: float) -> sparse.csr_matrix:
    n = len(D)
    diag = [D[i] + 2.0 * lam * np.eye(3) for i in range(n)]
    off = -lam * np.eye(3)
    blocks = [[None] * n for _ in range(n)]
    for i in range(n):
        blocks[i][i] = diag[i]
        if i + 1 < n:
            blocks[i][i + 1] = off
            blocks[i + 1][i] = off
    return sparse.bmat(blocks, format="csr")


def anchored_system(card: HairCard, anchor: np.ndarray, lam: float):
    """Return ``(A_free, rhs)`` for the normal field with the root pinned.

    ``A`` is the block-tridiagonal matrix with diagonal blocks ``D_i + 2*lam*I``
    and off-diagonal blocks ``-lam*I``. Fixing the root normal moves its three
    columns to the right-hand side, leaving an overdetermined system in the
    remaining ``3(N-1)`` unknowns.
    """
    A = _assemble_system(build_data_matrices(card), lam)
    A_free = A[:, 3:]
    rhs = -(A[:, :3] @ anchor)
    return A_free, rhs


def _banded_upper(M: sparse.spmatrix, u: int) -> np.ndarray:
    n = M.shape[0]
    ab = np.zeros((u + 1, n))
    M = M.todia() if not sparse.isspmatrix_dia(M) else M
    for k in range(u + 1):
        ab[u - k, k:] = M.diagonal(k)
    return ab


def solve_least_squares_normals(card: HairCard, anchor: np.ndarray, lam: float) -> np.ndarray:
    """Un-normalized least-squares normals, anchor included as row 0."""
    A_free, rhs = anchored_system(card, anchor, lam)
    M = (A_free.T @ A_free).tocsr()
    b = A_free.T @ rhs
    # A is block-tridiagonal, so A^T A spans at most two blocks either side
    x = solveh_banded(_banded_upper(M, 8), b, lower=False, check_finite=False)
    return np.vstack([anchor, x.reshape(-1, 3)])


def solve_normal_field(card: HairCard, cfg: SolverConfig | None = None, anchor=None) -> np.ndarray:
    """Smooth per-point normals minimizing projection plus smoothness energy."""
    cfg = cfg or SolverConfig()
    if len(card) < 3:
        raise ValueError("normal solve needs at least 3 control points")
    if anchor is None:
        anchor = pca_initial_normal(card, cfg.window_for(len(card)))
    raw = solve_least_squares_normals(card, np.asarray(anchor, dtype=np.float64), cfg.smoothness_weight)
    out = np.empty_like(raw)
    prev = None
    for i, v in enumerate(raw):
        u = _unit(v)
        if u is None:
            if prev is None:
                raise GeometryError("normal solve collapsed at the anchor")
            u = prev
        out[i] = u
        prev = u
    return out


def normal_objective(card: HairCard, normals: np.ndarray, lam: float = 1.0) -> float:
    """Projection energy plus ``lam`` times squared differences of neighbours."""
    D = build_data_matrices(card)
    data = np.einsum("ni,nij,nj->", normals, D, normals)
    smooth = np.sum((normals[1:] - normals[:-1]) ** 2)
    return float(data + lam * smooth)


def pca_normal_field(card: HairCard, window: int = 5) -> np.ndarray:
    """Per-point PCA normals over a centred window, signs chained for continuity."""
    p = card.positions
    n = len(p)
    window = max(2, min(window, n))
    out = np.empty((n, 3))
    for i in range(n):
        lo = min(max(0, i - window // 2), n - window)
        out[i] = pca_initial_normal(HairCard(card.points[lo : lo + window]), window)
        if i and out[i] @ out[i - 1] < 0:
            out[i] = -out[i]
    return out


def compute_frames(card: HairCard, cfg: SolverConfig | None = None) -> FrameField:
    cfg = cfg or SolverConfig()
    tangents = estimate_tangents(card)
    if len(card) < 3:
        n0 = pca_initial_normal(card, 2)
        normals = np.tile(n0, (len(card), 1))
    else:
        normals = solve_normal_field(card, cfg)

    width_dirs = np.empty_like(normals)
    thickness_dirs = np.empty_like(normals)
    for i, (n, t) in enumerate(zip(normals, tangents)):
        w = _unit(n - (n @ t) * t, 1e-8)
        if w is None:
            raise DegenerateGeometryError(f"normal parallel to tangent at point {i}")
        psi = _unit(np.cross(w, t), 1e-8)
        if psi is None:
            raise DegenerateGeometryError(f"degenerate thickness direction at point {i}")
        width_dirs[i] = w
        thickness_dirs[i] = psi
    return FrameField(tangents, width_dirs, thickness_dirs)


# corner order inside a cross-section: +width, -width, +thickness, -thickness;
# walking around the diamond visits 0, 2, 1, 3
_RING = ((0, 2), (2, 1), (1, 3), (3, 0))


def unit_faces(n_sections: int, offset: int = 0) -> np.ndarray:
    """Canonical triangle connectivity for ``n_sections`` diamonds, outward-facing."""
    faces = []
    for i in range(n_sections - 1):
        a0, a1 = offset + 4 * i, offset + 4 * (i + 1)
        for a, b in _RING:
            faces.append((a0 + a, a1 + a, a1 + b))
            faces.append((a0 + a, a1 + b, a0 + b))
    r, t = offset, offset + 4 * (n_sections - 1)
    faces += [(r + 0, r + 2, r + 1), (r + 0, r + 1, r + 3)]
    faces += [(t + 0, t + 1, t + 2), (t + 0, t + 3, t + 1)]
    return np.asarray(faces, dtype=np.int64)


def cross_section_corners(card: HairCard, frames: FrameField) -> np.ndarray:
    p = card.positions
    hw = (card.widths / 2.0)[:, None] * frames.width_dirs
    ht = (card.thicknesses / 2.0)[:, None] * frames.thickness_dirs
    return np.stack([p + hw, p - hw, p + ht, p - ht], axis=1)


def card_to_mesh(card: HairCard, frames: FrameField | None = None) -> HairMesh:
    if frames is None:
        frames = compute_frames(card)
    n = len(card)
    if n < 2:
        raise GeometryError("card too short to mesh")
    verts = cross_section_corners(card, frames).reshape(-1, 3)
    return HairMesh(verts, unit_faces(n), [np.arange(4 * n).reshape(n, 4)])


def _diamond_params(corners: np.ndarray, tol: float, where) -> np.ndarray:
    if len(corners) != 4:
        raise MalformedUnitError(f"cross-section {where} has {len(corners)} corners, expected 4")
    mid_w = (corners[0] + corners[1]) / 2.0
    mid_t = (corners[2] + corners[3]) / 2.0
    if np.linalg.norm(mid_w - mid_t) > tol:
        raise MalformedUnitError(f"diagonals of cross-section {where} do not intersect")
    center = corners.mean(axis=0)
    w = np.linalg.norm(corners[0] - corners[1])
    t = np.linalg.norm(corners[2] - corners[3])
    return np.array([*center, w, t])


def mesh_to_card(mesh: HairMesh, tol: float = 1e-6) -> HairCard:
    """Recover the control points of a single canonical card mesh."""
    if mesh.sections is not None:
        if len(mesh.sections) != 1:
            raise MalformedUnitError(f"expected one card, mesh holds {len(mesh.sections)}")
        sections = mesh.sections[0]
    else:
        if len(mesh.vertices) % 4:
            raise MalformedUnitError("vertex count is not a multiple of 4")
        sections = np.arange(len(mesh.vertices)).reshape(-1, 4)
    rows = [_diamond_params(mesh.vertices[np.asarray(s)], tol, i) for i, s in enumerate(sections)]
    return HairCard(np.asarray(rows))


def style_to_mesh(style: Hairstyle, cfg: SolverConfig | None = None) -> HairMesh:
    verts, faces, sections = [], [], []
    offset = 0
    for card in style.cards:
        m = card_to_mesh(card, compute_frames(card, cfg))
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        sections.append(m.sections[0] + offset)
        offset += len(m.vertices)
    if not verts:
        return HairMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), [])
    return HairMesh(np.concatenate(verts), np.concatenate(faces), sections)


def mesh_to_style(mesh: HairMesh, tol: float = 1e-6) -> Hairstyle:
    if mesh.sections is None:
        raise MalformedUnitError("mesh carries no cross-section layout")
    cards = []
    for i, sec in enumerate(mesh.sections):
        rows = [_diamond_params(mesh.vertices[np.asarray(s)], tol, (i, j)) for j, s in enumerate(sec)]
        cards.append(HairCard(np.asarray(rows)))
    return Hairstyle(cards)


def mesh_scalar_count(n_points: int) -> int:
    """Scalars in the reconstructed mesh of one ``n_points`` card."""
    return 3 * (4 * n_points) + 3 * (8 * (n_points - 1) + 4)


def token_compression_ratio(style: Hairstyle) -> float:
    """Control-point scalars over reconstructed-mesh scalars."""
    if not style.cards:
        raise ValueError("empty hairstyle")
    points = style.total_points
    mesh = sum(mesh_scalar_count(len(c)) for c in style.cards)
    return 5 * points / mesh
