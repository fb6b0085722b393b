"""Teacher-forced training loop: Adam, optional gradient accumulation, cosine decay."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import Hairstyle, style_to_mesh
from .metrics import sample_surface
from .model import Example, HairTransformer, loss_terms, prepare_condition, teacher_forced_accuracy
from .sequence import to_sequence
from .tokenizer import PiecewiseScheme

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 1000
    batch_size: int = 8
    accum_steps: int = 1
    warmup: int = 50
    min_lr_ratio: float = 0.05
    grad_clip: float = 1.0
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    ordering: str = "ccw"
    cloud_points: int = 10_000
    time_limit: float | None = None  # seconds
    # "epoch" reshuffles every pass; "fixed" reuses one seeded permutation
    shuffle: str = "epoch"

    def __post_init__(self):
        if self.shuffle not in ("epoch", "fixed"):
            raise ValueError(f"unknown shuffle mode {self.shuffle!r}")

    def to_json(self) -> dict:
        return asdict(self)


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, diagnostics: dict):
        super().__init__(f"loss became non-finite at step {step}: {diagnostics}")
        self.step = step
        self.diagnostics = diagnostics


@dataclass
class TrainResult:
    curve: list[dict] = field(default_factory=list)
    accuracy: dict = field(default_factory=dict)
    seconds: float = 0.0

    def losses(self) -> np.ndarray:
        return np.array([r["total"] for r in self.curve])


def style_condition(style: Hairstyle, n: int = 10_000, seed: int = 0):
    cloud = sample_surface(style_to_mesh(style), n, seed)
    return cloud


def prepare_examples(
    styles: list[Hairstyle],
    scheme: PiecewiseScheme,
    model_cfg,
    ordering: str = "ccw",
    cloud_points: int = 10_000,
    seed: int = 0,
) -> list[Example]:
    out = []
    for i, style in enumerate(styles):
        kinds, values = to_sequence(style, scheme, ordering, model_cfg.max_tokens - model_cfg.condition_tokens).arrays()
        cloud = style_condition(style, cloud_points, seed + i)
        prep = prepare_condition(cloud.points, cloud.normals, model_cfg)
        out.append(Example(kinds, values, prep, {"index": i}))
    return out


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    span = max(cfg.steps - cfg.warmup, 1)
    frac = min((step - cfg.warmup) / span, 1.0)
    return cfg.lr * (cfg.min_lr_ratio + (1 - cfg.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


def train(model: HairTransformer, examples: list[Example], cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Optimize ``model`` in place; returns the per-step loss curve and final accuracy."""
    if not examples:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    # near-converged weights and Adam moments drift into subnormal floats, which are very slow on CPU
    torch.set_flush_denormal(True)
    try:
        return _train(model, examples, cfg, out_dir)
    finally:
        torch.set_flush_denormal(False)


def _train(model, examples, cfg, out_dir):
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, cfg.adam_beta2), eps=cfg.adam_eps)
    result = TrainResult()
    start = time.perf_counter()
    order: list[int] = []
    fixed = rng.permutation(len(examples)).tolist() if cfg.shuffle == "fixed" else None
    model.train()
    for step in range(cfg.steps):
        for group in opt.param_groups:
            group["lr"] = lr_at(step, cfg)
        opt.zero_grad(set_to_none=True)
        parts = {"total": 0.0, "ce_pos": 0.0, "ce_width": 0.0, "ce_thickness": 0.0, "bce_mos": 0.0, "bce_eos": 0.0}
        for _ in range(cfg.accum_steps):
            if len(order) < cfg.batch_size:
                order += fixed if cfg.shuffle == "fixed" else rng.permutation(len(examples)).tolist()
            batch = [examples[i] for i in order[: cfg.batch_size]]
            del order[: cfg.batch_size]
            t = loss_terms(model, batch)
            if not torch.isfinite(t["total"]):
                diag = {k: float(t[k].detach()) for k in parts}
                diag["lr"] = lr_at(step, cfg)
                raise TrainingDiverged(step, diag)
            (t["total"] / cfg.accum_steps).backward()
            for k in parts:
                parts[k] += float(t[k].detach()) / cfg.accum_steps
        # norm before clipping, kept in the curve as a stability diagnostic
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip or float("inf"))
        opt.step()
        result.curve.append({"step": step, "lr": lr_at(step, cfg), "grad_norm": float(norm), **parts})
        if step % 50 == 0:
            log.info("step %d loss %.4f", step, parts["total"])
        if cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit:
            log.warning("time limit reached after %d steps", step + 1)
            break
    model.eval()
    result.seconds = time.perf_counter() - start
    result.accuracy = teacher_forced_accuracy(model, examples)
    if out_dir is not None:
        write_curve(result.curve, Path(out_dir) / "loss_curve.csv")
        (Path(out_dir) / "accuracy.json").write_text(json.dumps(result.accuracy, indent=1))
    return result


def write_curve(curve: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(curve[0]))
        w.writeheader()
        w.writerows(curve)


def read_curve(path) -> list[dict]:
    with open(path) as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average, ``len(values) - window + 1`` entries."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()]) if len(v) else v
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window
