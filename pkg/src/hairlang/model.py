"""Conditional decoder-only transformer over control-point tokens.

Each control point enters the network as one token: its five attribute
indices are embedded (16 dims each), concatenated and linearly projected.
A grouped point-cloud encoder turns the condition cloud into a fixed number
of prefix tokens. From the feature at each position the cascaded heads
predict the next point's position, then width given position, then
thickness given both; two binary heads flag card and hairstyle ends.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BudgetError
from .sequence import EOS, MOS, POINT, SOS, HairSequence

KIND_SOS, KIND_POINT, KIND_MOS, KIND_EOS, KIND_PAD = 0, 1, 2, 3, -1


@dataclass
class ModelConfig:
    layers: int = 4
    hidden: int = 128
    heads: int = 4
    attr_embed_dim: int = 16
    vocab: tuple[int, int, int, int, int] = (512, 512, 512, 128, 128)
    max_tokens: int = 8192
    condition_tokens: int = 16
    # the condition cloud is thinned to this many points before encoding
    cond_points: int = 1024
    cond_hidden: int = 64
    mlp_ratio: int = 4
    # start attribute tables and output rows from ordinal sinusoidal codes
    ordinal_init: bool = True
    seed: int = 0

    def __post_init__(self):
        self.vocab = tuple(int(v) for v in self.vocab)
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if len(self.vocab) != 5:
            raise ValueError("vocab needs 5 sizes (x, y, z, width, thickness)")

    def to_json(self) -> dict:
        d = asdict(self)
        d["vocab"] = list(self.vocab)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ------------------------------------------------------------ condition prep


def _canonical_order(points: np.ndarray) -> np.ndarray:
    return np.lexsort(points.T[::-1])


def farthest_point_sample(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of ``k`` farthest-point samples, independent of input order.

    Starts from the point farthest from the centroid; ties are resolved by
    lexicographic coordinate order.
    """
    order = _canonical_order(points)
    pts = points[order]
    k = min(k, len(pts))
    chosen = np.empty(k, dtype=np.int64)
    d = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
    chosen[0] = int(np.argmax(d))
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for i in range(1, k):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(pts - pts[chosen[i]], axis=1))
    return order[chosen]


@dataclass
class PreparedCondition:
    """Geometry-only part of condition encoding (no learned weights)."""

    local: np.ndarray  # (P, 6) position relative to group centre, normal
    group: np.ndarray  # (P,) group index per point
    centers: np.ndarray  # (K, 3)


def prepare_condition(points: np.ndarray, normals: np.ndarray | None, cfg: ModelConfig) -> PreparedCondition:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < cfg.condition_tokens:
        raise ValueError(f"condition needs at least {cfg.condition_tokens} points, got {len(points)}")
    if normals is None:
        normals = np.zeros_like(points)
    normals = np.asarray(normals, dtype=np.float64)
    if len(points) > cfg.cond_points:
        keep = farthest_point_sample(points, cfg.cond_points)
        points, normals = points[keep], normals[keep]
    centers = points[farthest_point_sample(points, cfg.condition_tokens)]
    d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=-1)
    group = np.argmin(d, axis=1)
    local = np.concatenate([points - centers[group], normals], axis=1)
    return PreparedCondition(local, group, centers)


# ------------------------------------------------------------------- modules


def ordinal_codes(n: int, dim: int) -> torch.Tensor:
    """``(n, dim)`` sin/cos codes of the bin index; neighbouring bins get similar rows."""
    u = torch.arange(n, dtype=torch.float64)[:, None]
    freqs = torch.logspace(0, math.log10(max(n / 4, 1.0)), dim // 2, dtype=torch.float64) * (2 * math.pi / max(n, 1))
    ang = u * freqs[None]
    codes = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
    if codes.shape[1] < dim:
        codes = torch.cat([codes, torch.zeros(n, dim - codes.shape[1], dtype=torch.float64)], dim=1)
    return (codes / math.sqrt(dim / 2)).float()


def _mlp(inp: int, hidden: int, out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(inp, hidden), nn.GELU(), nn.Linear(hidden, out))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.hidden
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(h)
        self.qkv = nn.Linear(h, 3 * h)
        self.proj = nn.Linear(h, h)
        self.ln2 = nn.LayerNorm(h)
        self.mlp = _mlp(h, cfg.mlp_ratio * h, h)

    def forward(self, x, cache=None):
        B, T, H = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(H, dim=-1)
        q, k, v = (t.view(B, T, self.heads, H // self.heads).transpose(1, 2) for t in (q, k, v))
        past = 0
        if cache is not None:
            if cache.get("k") is not None:
                past = cache["k"].shape[2]
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        S = k.shape[2]
        # query t (absolute past + t) sees keys 0..past + t
        mask = torch.ones(T, S, dtype=torch.bool, device=x.device).tril(diagonal=past)
        y = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        y = y.transpose(1, 2).reshape(B, T, H)
        x = x + self.proj(y)
        return x + self.mlp(self.ln2(x))


class HairTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        h, e = cfg.hidden, cfg.attr_embed_dim
        vx, vy, vz, vw, vt = cfg.vocab
        self.embed_pos = nn.ModuleList([nn.Embedding(n, e) for n in (vx, vy, vz)])
        self.embed_w = nn.Embedding(vw, e)
        self.embed_t = nn.Embedding(vt, e)
        self.point_proj = nn.Linear(5 * e, h)
        self.sos = nn.Parameter(torch.randn(h) * 0.02)
        self.mos = nn.Parameter(torch.randn(h) * 0.02)
        self.seq_pos = nn.Embedding(cfg.max_tokens, h)

        c = cfg.cond_hidden
        self.cond_point = _mlp(6, c, c)
        self.cond_proj = nn.Linear(c + 3, h)

        self.blocks = nn.ModuleList([Block(cfg) for _ in range(cfg.layers)])
        self.ln_f = nn.LayerNorm(h)

        self.head_pos = _mlp(h, h, vx + vy + vz)
        self.head_w = _mlp(h + 3 * e, h, vw)
        self.head_t = _mlp(h + 4 * e, h, vt)
        self.head_mos = _mlp(h, h, 1)
        self.head_eos = _mlp(h, h, 1)

        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Embedding):
                nn.init.normal_(m.weight, std=0.02)
        if cfg.ordinal_init:
            with torch.no_grad():
                for emb in [*self.embed_pos, self.embed_w, self.embed_t]:
                    emb.weight.copy_(ordinal_codes(emb.num_embeddings, e))
                out = self.head_pos[2]
                rows = torch.cat([ordinal_codes(v, h) for v in (vx, vy, vz)])
                out.weight.copy_(rows * 0.1)
                self.head_w[2].weight.copy_(ordinal_codes(vw, h) * 0.1)
                self.head_t[2].weight.copy_(ordinal_codes(vt, h) * 0.1)

    # ---------------------------------------------------------- embeddings

    @property
    def dtype(self):
        return self.point_proj.weight.dtype

    def embed_position(self, pos_tokens: torch.Tensor) -> torch.Tensor:
        """``(..., 3)`` axis tokens to concatenated ``(..., 3e)`` embeddings."""
        return torch.cat([emb(pos_tokens[..., j]) for j, emb in enumerate(self.embed_pos)], dim=-1)

    def embed_point(self, tokens: torch.Tensor) -> torch.Tensor:
        """``(..., 5)`` point tokens to hidden-size control-point tokens."""
        parts = [self.embed_position(tokens[..., :3]), self.embed_w(tokens[..., 3]), self.embed_t(tokens[..., 4])]
        return self.point_proj(torch.cat(parts, dim=-1))

    def embed_tokens(self, kinds: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
        safe = values.clamp(min=0)
        x = self.embed_point(safe)
        x = torch.where((kinds == KIND_SOS)[..., None], self.sos.expand_as(x), x)
        x = torch.where((kinds == KIND_MOS)[..., None], self.mos.expand_as(x), x)
        return x

    def encode_condition(self, prep: PreparedCondition) -> torch.Tensor:
        """``(K, hidden)`` condition tokens from a prepared cloud."""
        local = torch.as_tensor(prep.local, dtype=self.dtype)
        group = torch.as_tensor(prep.group, dtype=torch.long)
        feats = self.cond_point(local)
        K = len(prep.centers)
        idx = group[:, None].expand_as(feats)
        pooled = torch.full((K, feats.shape[1]), float("-inf"), dtype=feats.dtype)
        pooled = pooled.scatter_reduce(0, idx, feats, reduce="amax", include_self=True)
        pooled = torch.where(torch.isfinite(pooled), pooled, torch.zeros_like(pooled))
        centers = torch.as_tensor(prep.centers, dtype=self.dtype)
        return self.cond_proj(torch.cat([pooled, centers], dim=-1))

    # ------------------------------------------------------------- trunk

    def forward(self, cond: torch.Tensor, kinds: torch.Tensor, values: torch.Tensor, cache=None, offset: int = 0):
        """Features for each input token.

        ``cond`` is ``(B, K, H)`` (or ``None`` when continuing from a cache),
        ``kinds``/``values`` are ``(B, T)`` and ``(B, T, 5)``. Returns
        ``(B, T, H)``; the feature at position ``i`` sees the condition and
        tokens ``0..i`` and predicts token ``i + 1``.
        """
        x = self.embed_tokens(kinds, values)
        if cond is not None:
            x = torch.cat([cond, x], dim=1)
        total = offset + x.shape[1]
        if total > self.cfg.max_tokens:
            raise BudgetError(f"{total} positions exceed max_tokens={self.cfg.max_tokens}")
        x = x + self.seq_pos(torch.arange(offset, total))
        for i, block in enumerate(self.blocks):
            x = block(x, None if cache is None else cache.setdefault(i, {}))
        x = self.ln_f(x)
        if cond is not None:
            x = x[:, cond.shape[1] :]
        return x

    # ------------------------------------------------------------- heads

    def split_pos_logits(self, logits: torch.Tensor) -> list[torch.Tensor]:
        vx, vy, vz = self.cfg.vocab[:3]
        return list(logits.split([vx, vy, vz], dim=-1))

    def decode(self, f: torch.Tensor, pos_tokens: torch.Tensor | None = None, width_tokens: torch.Tensor | None = None):
        """Cascaded decoding from features ``f``.

        Position logits come from ``f`` alone. Width logits consume the
        embedded position (given, else argmax); thickness logits consume
        position and width. Returns a dict of logits.
        """
        pos_logits = self.split_pos_logits(self.head_pos(f))
        if pos_tokens is None:
            pos_tokens = torch.stack([lg.argmax(-1) for lg in pos_logits], dim=-1)
        ep = self.embed_position(pos_tokens)
        w_logits = self.head_w(torch.cat([f, ep], dim=-1))
        if width_tokens is None:
            width_tokens = w_logits.argmax(-1)
        t_logits = self.head_t(torch.cat([f, ep, self.embed_w(width_tokens)], dim=-1))
        return {
            "pos": pos_logits,
            "width": w_logits,
            "thickness": t_logits,
            "mos": self.head_mos(f).squeeze(-1),
            "eos": self.head_eos(f).squeeze(-1),
        }


# --------------------------------------------------------------- batching


def sequence_arrays(seq: HairSequence) -> tuple[np.ndarray, np.ndarray]:
    return seq.arrays()


@dataclass
class Example:
    kinds: np.ndarray
    values: np.ndarray
    condition: PreparedCondition
    meta: dict = field(default_factory=dict)


def collate(examples: list[Example]) -> tuple[np.ndarray, np.ndarray]:
    T = max(len(ex.kinds) for ex in examples)
    kinds = np.full((len(examples), T), KIND_PAD, dtype=np.int64)
    values = np.zeros((len(examples), T, 5), dtype=np.int64)
    for i, ex in enumerate(examples):
        kinds[i, : len(ex.kinds)] = ex.kinds
        values[i, : len(ex.kinds)] = ex.values
    return kinds, values


@dataclass
class LossBreakdown:
    ce_pos: float
    ce_width: float
    ce_thickness: float
    bce_mos: float
    bce_eos: float
    total: float
    ce_axes: tuple[float, float, float] = (0.0, 0.0, 0.0)


def loss_terms(model: HairTransformer, examples: list[Example], outputs=None):
    """Teacher-forced loss tensors and the target bookkeeping used for accuracy."""
    kinds_np, values_np = collate(examples)
    kinds = torch.as_tensor(kinds_np)
    values = torch.as_tensor(values_np)
    inp_k, inp_v = kinds[:, :-1], values[:, :-1]
    tgt_k, tgt_v = kinds[:, 1:], values[:, 1:]
    if outputs is None:
        cond = torch.stack([model.encode_condition(ex.condition) for ex in examples])
        f = model(cond, inp_k, inp_v)
        valid = tgt_k != KIND_PAD
        is_point = tgt_k == KIND_POINT
        fp = f[is_point]
        tv = tgt_v[is_point]
        outputs = model.decode(fp, pos_tokens=tv[:, :3], width_tokens=tv[:, 3])
        flags_mos = model.head_mos(f[valid]).squeeze(-1)
        flags_eos = model.head_eos(f[valid]).squeeze(-1)
        outputs = dict(outputs, mos=flags_mos, eos=flags_eos)
    valid = tgt_k != KIND_PAD
    tv = tgt_v[tgt_k == KIND_POINT]
    axes = [F.cross_entropy(lg, tv[:, j]) for j, lg in enumerate(outputs["pos"])]
    ce_w = F.cross_entropy(outputs["width"], tv[:, 3])
    ce_t = F.cross_entropy(outputs["thickness"], tv[:, 4])
    dt = outputs["mos"].dtype
    mos_t = (tgt_k[valid] == KIND_MOS).to(dt)
    eos_t = (tgt_k[valid] == KIND_EOS).to(dt)
    bce_mos = F.binary_cross_entropy_with_logits(outputs["mos"], mos_t)
    bce_eos = F.binary_cross_entropy_with_logits(outputs["eos"], eos_t)
    ce_pos = (axes[0] + axes[1] + axes[2]) / 3.0
    total = ce_pos + ce_w + ce_t + bce_mos + bce_eos
    return {
        "total": total,
        "ce_pos": ce_pos,
        "ce_axes": axes,
        "ce_width": ce_w,
        "ce_thickness": ce_t,
        "bce_mos": bce_mos,
        "bce_eos": bce_eos,
        "outputs": outputs,
        "targets": tv,
        "flag_targets": (mos_t, eos_t),
    }


def loss(model: HairTransformer, examples: list[Example]) -> LossBreakdown:
    with torch.no_grad():
        t = loss_terms(model, examples)
    return LossBreakdown(
        float(t["ce_pos"]),
        float(t["ce_width"]),
        float(t["ce_thickness"]),
        float(t["bce_mos"]),
        float(t["bce_eos"]),
        float(t["total"]),
        tuple(float(a) for a in t["ce_axes"]),
    )


def gradients(model: HairTransformer, examples: list[Example]) -> dict[str, torch.Tensor]:
    model.zero_grad(set_to_none=True)
    t = loss_terms(model, examples)
    if not torch.isfinite(t["total"]):
        raise FloatingPointError("non-finite loss")
    t["total"].backward()
    grads = {}
    for name, p in model.named_parameters():
        grads[name] = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
    return grads


@torch.no_grad()
def teacher_forced_accuracy(model: HairTransformer, examples: list[Example], batch_size: int = 8) -> dict[str, float]:
    """Argmax accuracy of each head against the next token, with ground-truth cascade inputs."""
    hits = {"x": 0, "y": 0, "z": 0, "width": 0, "thickness": 0, "joint_pos": 0, "mos": 0, "eos": 0}
    n_points = n_flags = 0
    for s in range(0, len(examples), batch_size):
        t = loss_terms(model, examples[s : s + batch_size])
        out, tv = t["outputs"], t["targets"]
        pred = torch.stack([lg.argmax(-1) for lg in out["pos"]], dim=-1)
        ok = pred == tv[:, :3]
        for j, a in enumerate("xyz"):
            hits[a] += int(ok[:, j].sum())
        hits["joint_pos"] += int(ok.all(-1).sum())
        hits["width"] += int((out["width"].argmax(-1) == tv[:, 3]).sum())
        hits["thickness"] += int((out["thickness"].argmax(-1) == tv[:, 4]).sum())
        mos_t, eos_t = t["flag_targets"]
        hits["mos"] += int(((out["mos"] > 0) == (mos_t > 0.5)).sum())
        hits["eos"] += int(((out["eos"] > 0) == (eos_t > 0.5)).sum())
        n_points += len(tv)
        n_flags += len(mos_t)
    acc = {k: v / max(n_points if k not in ("mos", "eos") else n_flags, 1) for k, v in hits.items()}
    acc["position"] = (acc["x"] + acc["y"] + acc["z"]) / 3
    return acc


# ------------------------------------------------------------ serialization


def save_weights(model: HairTransformer, out_dir, extra: dict | None = None) -> Path:
    """Directory archive: ``manifest.json`` plus one little-endian float32 file per tensor."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        fname = name.replace(".", "_") + ".bin"
        (out_dir / fname).write_bytes(arr.tobytes())
        params.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "file": fname})
    manifest = {"config": model.cfg.to_json(), "params": params}
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out_dir


def load_weights(in_dir) -> HairTransformer:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    model = HairTransformer(ModelConfig.from_json(manifest["config"]))
    state = {}
    for p in manifest["params"]:
        arr = np.frombuffer((in_dir / p["file"]).read_bytes(), dtype="<f4").reshape(p["shape"])
        state[p["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model


def sequence_kind_codes():
    return {SOS: KIND_SOS, POINT: KIND_POINT, MOS: KIND_MOS, EOS: KIND_EOS}
