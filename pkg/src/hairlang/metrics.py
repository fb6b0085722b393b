"""Point-cloud metrics for comparing hairstyles.

Conventions: Chamfer distance is the mean of the two directed mean
nearest-neighbour distances (unsquared); EMD is the mean matched distance
of an exact one-to-one assignment between equal-size subsamples; Voxel-IoU
voxelizes both clouds on a fixed grid over ``[-0.5, 0.5]^3``.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .core import HairCard, HairMesh, Hairstyle, card_to_mesh, compute_frames, style_to_mesh
from .errors import GeometryError

BOX_LO, BOX_HI = -0.5, 0.5


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not len(self.points):
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


def _points(a) -> np.ndarray:
    return a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64).reshape(-1, 3)


def sample_surface(mesh: HairMesh, n: int = 10_000, seed: int = 0) -> PointCloud:
    """Area-weighted uniform samples with the normals of their faces."""
    if not len(mesh.faces):
        raise GeometryError("cannot sample an empty mesh")
    tri = mesh.vertices[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area2 = np.linalg.norm(cross, axis=1)
    total = area2.sum()
    if total <= 0:
        raise GeometryError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(tri), size=n, p=area2 / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    t = tri[face]
    pts = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    normals = cross[face] / np.where(area2[face] > 0, area2[face], 1.0)[:, None]
    return PointCloud(pts, normals)


def _directed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(b).query(a)
    return d


def chamfer(a, b) -> float:
    pa, pb = _points(a), _points(b)
    return float((_directed(pa, pb).mean() + _directed(pb, pa).mean()) / 2.0)


def hausdorff(a, b) -> float:
    pa, pb = _points(a), _points(b)
    return float(max(_directed(pa, pb).max(), _directed(pb, pa).max()))


def emd_approx(a, b, m: int = 1024, seed: int = 0) -> float:
    """Mean matched distance of the optimal one-to-one assignment on ``m`` samples."""
    pa, pb = _points(a), _points(b)
    if m > len(pa) or m > len(pb):
        raise ValueError(f"m={m} exceeds cloud sizes ({len(pa)}, {len(pb)})")
    rng = np.random.default_rng(seed)
    sa = pa[rng.choice(len(pa), m, replace=False)] if m < len(pa) else pa
    rng = np.random.default_rng(seed)
    sb = pb[rng.choice(len(pb), m, replace=False)] if m < len(pb) else pb
    cost = np.linalg.norm(sa[:, None, :] - sb[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def voxelize(a, res: int = 16) -> set[tuple[int, int, int]]:
    p = _points(a)
    idx = np.floor((p - BOX_LO) / (BOX_HI - BOX_LO) * res).astype(np.int64)
    idx = np.clip(idx, 0, res - 1)
    return set(map(tuple, np.unique(idx, axis=0).tolist()))


def voxel_iou(a, b, res: int = 16) -> float:
    va, vb = voxelize(a, res), voxelize(b, res)
    union = va | vb
    if not union:
        return 1.0
    return len(va & vb) / len(union)


@dataclass
class MetricReport:
    cd: float
    emd: float
    hausdorff: float
    voxel_iou: float
    pairs: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        if self.pairs is None:
            d.pop("pairs")
        if not self.extra:
            d.pop("extra")
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


COLUMNS = ("CD", "EMD", "Hausdorff", "Voxel-IoU")


def format_table(rows: dict[str, MetricReport]) -> str:
    """Aligned text table, one row per labelled report."""
    label_w = max([len("Method")] + [len(k) for k in rows])
    head = "Method".ljust(label_w) + " | " + " | ".join(c.rjust(9) for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for name, r in rows.items():
        vals = (r.cd, r.emd, r.hausdorff, r.voxel_iou)
        lines.append(name.ljust(label_w) + " | " + " | ".join(f"{v:9.4f}" for v in vals))
    return "\n".join(lines)


def compare_clouds(a, b, emd_points: int = 1024, seed: int = 0, res: int = 16) -> MetricReport:
    m = min(emd_points, len(_points(a)), len(_points(b)))
    return MetricReport(chamfer(a, b), emd_approx(a, b, m, seed), hausdorff(a, b), voxel_iou(a, b, res))


def style_cloud(style: Hairstyle, n: int = 10_000, seed: int = 0) -> PointCloud:
    # cards whose points all coincide have no surface; generated styles can contain them
    cards = [c for c in style.cards if np.ptp(c.positions, axis=0).max() > 0]
    return sample_surface(style_to_mesh(Hairstyle(cards)), n, seed)


def style_report(pred: Hairstyle, gt: Hairstyle, n: int = 10_000, seed: int = 0, emd_points: int = 1024) -> MetricReport:
    return compare_clouds(style_cloud(pred, n, seed), style_cloud(gt, n, seed), emd_points, seed)


def _card_seed(card: HairCard, seed: int) -> int:
    # content-derived so that card order never changes the samples
    return (zlib.crc32(np.ascontiguousarray(card.points).tobytes()) + seed) % (2**32)


def card_cloud(card: HairCard, n: int = 1024, seed: int = 0) -> PointCloud:
    return sample_surface(card_to_mesh(card, compute_frames(card)), n, _card_seed(card, seed))


def card_level_report(pred: Hairstyle, gt: Hairstyle, n: int = 512, seed: int = 0, emd_points: int = 256) -> MetricReport:
    """Bidirectional nearest-card matching by CD, metrics averaged over matched pairs."""
    if not pred.cards or not gt.cards:
        raise ValueError("both hairstyles need at least one card")
    pc = [card_cloud(c, n, seed) for c in pred.cards]
    gc = [card_cloud(c, n, seed) for c in gt.cards]
    cd = np.array([[chamfer(p, g) for g in gc] for p in pc])
    pairs = [(i, int(np.argmin(cd[i]))) for i in range(len(pc))]
    pairs += [(int(np.argmin(cd[:, j])), j) for j in range(len(gc))]
    reports = []
    for i, j in pairs:
        m = min(emd_points, len(pc[i]), len(gc[j]))
        reports.append(
            (cd[i, j], emd_approx(pc[i], gc[j], m, seed), hausdorff(pc[i], gc[j]), voxel_iou(pc[i], gc[j]))
        )
    avg = np.mean(reports, axis=0)
    return MetricReport(*(float(v) for v in avg), pairs=len(pairs))
