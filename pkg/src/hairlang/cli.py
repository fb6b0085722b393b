"""Hair-card meshes, token sequences, training and generation from the command line.

Exit codes: 0 ok, 1 parse error, 2 geometry error / rejected mesh, 3 token budget.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .core import Hairstyle, style_to_mesh, token_compression_ratio
from .dataset import (
    PreprocessConfig,
    SynthConfig,
    load_obj,
    preprocess_mesh,
    read_dataset,
    save_obj,
    synthetic_dataset,
    write_dataset,
)
from .errors import GeometryError, HairError
from .inference import GenerationResult, InferenceConfig, generate
from .metrics import PointCloud, format_table, sample_surface, style_report
from .model import HairTransformer, ModelConfig, load_weights, save_weights
from .sequence import ORDERINGS, check_grammar, to_sequence
from .tokenizer import PiecewiseScheme, default_scheme
from .train import TrainConfig, prepare_examples, train

log = logging.getLogger("hairlang")


def _scheme(args) -> PiecewiseScheme:
    return PiecewiseScheme.load(args.scheme) if args.scheme else default_scheme()


def _file_config(args) -> dict:
    return json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}


def _inference_cfg(args, overrides: dict) -> InferenceConfig:
    d = dict(overrides)
    d["seed"] = args.seed
    if args.no_root_verify:
        d["enable_root_verification"] = False
    if args.no_length_norm:
        d["enable_length_normalization"] = False
    return InferenceConfig(**d)


def _write_config(target: Path, args, extra: dict | None = None) -> None:
    """Effective config next to the output: ``config.json`` in a directory, ``<stem>.config.json`` for a file."""
    doc = {k: v for k, v in vars(args).items() if k != "func"}
    doc.update(extra or {})
    target = Path(target)
    path = target / "config.json" if target.is_dir() else target.with_name(target.stem + ".config.json")
    path.write_text(json.dumps(doc, indent=1, default=str))


def _load_style(path) -> Hairstyle:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        res = preprocess_mesh(load_obj(path))
        if not res.style.cards:
            raise GeometryError(f"no hair cards recovered from {path}")
        return res.style
    return Hairstyle.load(path)


def _condition_cloud(path, seed: int) -> PointCloud:
    path = Path(path)
    mesh = load_obj(path) if path.suffix.lower() == ".obj" else style_to_mesh(Hairstyle.load(path))
    return sample_surface(mesh, 10_000, seed)


# ---------------------------------------------------------------- commands


def cmd_encode(args) -> int:
    res = preprocess_mesh(load_obj(args.mesh), PreprocessConfig(vertex_merge_eps=args.eps))
    if not res.style.cards:
        reasons = sorted({r.reason for r in res.rejections}) or ["no-cards"]
        raise GeometryError("mesh rejected: " + ", ".join(reasons))
    out = Path(args.output)
    res.style.save(out)
    _write_config(out, args)
    print(f"cards: {len(res.style)}  points: {res.style.total_points}  recall: {res.recall:.4f}")
    print(f"compression ratio: {token_compression_ratio(res.style):.6f}")
    if res.rejections:
        print(f"rejected components: {len(res.rejections)} ({', '.join(sorted({r.reason for r in res.rejections}))})")
    if not res.filter.accepted:
        print("filter: rejected (" + ", ".join(res.filter.reasons) + ")")
    return 0


def cmd_decode(args) -> int:
    style = Hairstyle.load(args.style)
    out = Path(args.output)
    save_obj(style_to_mesh(style), out)
    _write_config(out, args)
    print(f"wrote {out} ({len(style)} cards)")
    return 0


def cmd_tokenize(args) -> int:
    style = Hairstyle.load(args.style)
    seq = to_sequence(style, _scheme(args), args.ordering)
    out = Path(args.output)
    seq.save(out)
    _write_config(out, args)
    print(f"{len(seq)} tokens")
    return 0


def cmd_make_synthetic(args) -> int:
    cfg = SynthConfig(**_file_config(args).get("synthetic", {}))
    styles = synthetic_dataset(args.n, cfg, seed=args.seed)
    out = Path(args.output)
    write_dataset(styles, out)
    _write_config(out, args, {"synthetic": asdict(cfg)})
    print(f"wrote {len(styles)} styles to {out}")
    return 0


def _train_setup(args, styles, ordering):
    fc = _file_config(args)
    mcfg = ModelConfig(**{**fc.get("model", {}), "seed": args.seed})
    tcfg = TrainConfig(**{**fc.get("train", {}), "seed": args.seed, "ordering": ordering})
    if getattr(args, "steps", None):
        tcfg.steps = args.steps
    return mcfg, tcfg


def _train_one(styles, scheme, mcfg, tcfg, out: Path):
    torch.manual_seed(tcfg.seed)
    model = HairTransformer(mcfg)
    examples = prepare_examples(styles, scheme, mcfg, tcfg.ordering, tcfg.cloud_points, tcfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    result = train(model, examples, tcfg, out)
    save_weights(model, out / "weights", {"scheme": scheme.to_json(), "ordering": tcfg.ordering})
    return model, result


def cmd_train(args) -> int:
    styles = read_dataset(args.dataset)
    mcfg, tcfg = _train_setup(args, styles, args.ordering)
    out = Path(args.output)
    _, result = _train_one(styles, _scheme(args), mcfg, tcfg, out)
    _write_config(out, args, {"model": mcfg.to_json(), "train": tcfg.to_json()})
    acc = result.accuracy
    print(f"steps: {len(result.curve)}  time: {result.seconds:.1f}s  final loss: {result.curve[-1]['total']:.4f}")
    print(
        f"teacher-forced accuracy: position {acc['position']:.4f} (x {acc['x']:.4f}, y {acc['y']:.4f}, z {acc['z']:.4f}) "
        f"width {acc['width']:.4f} thickness {acc['thickness']:.4f}"
    )
    return 0


def _load_model(path):
    path = Path(path)
    wdir = path / "weights" if (path / "weights" / "manifest.json").exists() else path
    manifest = json.loads((wdir / "manifest.json").read_text())
    scheme = PiecewiseScheme.from_json(manifest["scheme"]) if "scheme" in manifest else None
    return load_weights(wdir), scheme


def cmd_generate(args) -> int:
    model, stored = _load_model(args.weights)
    scheme = _scheme(args) if args.scheme else (stored or default_scheme())
    icfg = _inference_cfg(args, _file_config(args).get("inference", {}))
    cloud = _condition_cloud(args.condition, args.seed)
    res = generate(cloud, model, scheme, icfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_generation(res, out)
    _write_config(out, args, {"inference": icfg.to_json()})
    print(f"cards: {len(res.style)}  tokens: {len(res.sequence)}  truncated: {res.truncated}")
    print("interventions: " + json.dumps({k: v for k, v in res.actions().items() if k != "point"}))
    return 0


def _write_generation(res: GenerationResult, out: Path) -> None:
    res.style.save(out / "hairstyle.json")
    res.sequence.save(out / "tokens.txt")
    res.write_log(out / "generation.jsonl")


def cmd_eval(args) -> int:
    report = style_report(_load_style(args.pred), _load_style(args.gt), seed=args.seed)
    out = Path(args.output)
    out.write_text(report.dumps())
    _write_config(out, args)
    print(format_table({"pred": report}))
    return 0


def cmd_preprocess(args) -> int:
    raw = Path(args.raw)
    out = Path(args.output)
    cfg = PreprocessConfig(**_file_config(args).get("preprocess", {}))
    accepted, report = [], []
    for path in sorted(raw.glob("*.obj")):
        try:
            res = preprocess_mesh(load_obj(path), cfg)
        except HairError as exc:
            report.append({"file": path.name, "accepted": False, "reasons": [type(exc).__name__], "detail": str(exc)})
            continue
        rec = {
            "file": path.name,
            "accepted": res.filter.accepted,
            "reasons": res.filter.reasons,
            "recall": res.recall,
            "rejected_components": [{"reason": r.reason, "detail": r.detail} for r in res.rejections],
        }
        report.append(rec)
        if res.filter.accepted:
            accepted.append(res.style)
    write_dataset(accepted, out)
    (out / "rejections.json").write_text(json.dumps(report, indent=1))
    _write_config(out, args, {"preprocess": asdict(cfg)})
    print(f"accepted {len(accepted)} of {len(report)} meshes")
    return 0


def run_ablation(styles, scheme, mcfg, tcfg, icfg, orderings, out: Path, n_generate: int | None = None) -> dict:
    """Train and generate once per ordering; returns ``{ordering: MetricReport}``."""
    rows = {}
    for mode in orderings:
        mode_dir = out / mode
        tc = TrainConfig(**{**tcfg.to_json(), "ordering": mode})
        model, _ = _train_one(styles, scheme, mcfg, tc, mode_dir)
        reports, problems, empty = [], 0, 0
        for i, style in enumerate(styles[:n_generate]):
            cloud = sample_surface(style_to_mesh(style), 10_000, tc.seed + i)
            res = generate(cloud, model, scheme, icfg)
            problems += bool(check_grammar(res.sequence))
            if i == 0:
                _write_generation(res, mode_dir)
            try:
                reports.append(style_report(res.style, style, n=2048, seed=tc.seed, emd_points=256))
            except GeometryError:
                # nothing with surface area was generated
                empty += 1
        mean = {k: float(np.mean([getattr(r, k) for r in reports])) if reports else float("nan") for k in ("cd", "emd", "hausdorff", "voxel_iou")}
        from .metrics import MetricReport

        rows[mode] = MetricReport(**mean, pairs=len(reports), extra={"grammar_errors": problems, "empty": empty})
    return rows


def cmd_ablate(args) -> int:
    styles = read_dataset(args.dataset)
    mcfg, tcfg = _train_setup(args, styles, "ccw")
    icfg = _inference_cfg(args, _file_config(args).get("inference", {}))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    orderings = args.orderings.split(",")
    for m in orderings:
        if m not in ORDERINGS:
            raise HairError(f"unknown ordering {m!r}")
    rows = run_ablation(styles, _scheme(args), mcfg, tcfg, icfg, orderings, out, args.generate)
    table = format_table({f"ordering={k}": v for k, v in rows.items()})
    (out / "ablation.txt").write_text(table + "\n")
    (out / "ablation.json").write_text(json.dumps({k: v.to_json() for k, v in rows.items()}, indent=1))
    _write_config(out, args, {"model": mcfg.to_json(), "train": tcfg.to_json(), "inference": icfg.to_json()})
    print(table)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--scheme", help="quantization scheme JSON (default: built-in grid)")
    common.add_argument("--ordering", choices=ORDERINGS, default="ccw")
    common.add_argument("--config", help="JSON config with model/train/inference/synthetic/preprocess sections")
    common.add_argument("--no-root-verify", action="store_true")
    common.add_argument("--no-length-norm", action="store_true")
    common.add_argument("--json-errors", action="store_true", help="structured error JSON on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hairlang", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("encode", cmd_encode, "hair-card mesh OBJ -> hairstyle JSON")
    sp.add_argument("mesh")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--eps", type=float, default=1e-6, help="vertex merge tolerance")

    sp = add("decode", cmd_decode, "hairstyle JSON -> mesh OBJ")
    sp.add_argument("style")
    sp.add_argument("-o", "--output", required=True)

    sp = add("tokenize", cmd_tokenize, "hairstyle JSON -> token text")
    sp.add_argument("style")
    sp.add_argument("-o", "--output", required=True)

    sp = add("make-synthetic", cmd_make_synthetic, "write a synthetic dataset")
    sp.add_argument("-n", type=int, default=50)
    sp.add_argument("-o", "--output", required=True)

    sp = add("train", cmd_train, "train a model on a dataset directory")
    sp.add_argument("dataset")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--steps", type=int)

    sp = add("generate", cmd_generate, "generate a hairstyle conditioned on a mesh or hairstyle")
    sp.add_argument("weights")
    sp.add_argument("condition", help="OBJ mesh or hairstyle JSON to sample the condition cloud from")
    sp.add_argument("-o", "--output", required=True)

    sp = add("eval", cmd_eval, "compare a predicted hairstyle with ground truth")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("-o", "--output", required=True)

    sp = add("preprocess", cmd_preprocess, "raw OBJ directory -> dataset + rejection report")
    sp.add_argument("raw")
    sp.add_argument("-o", "--output", required=True)

    sp = add("ablate", cmd_ablate, "train/generate per ordering and tabulate metrics")
    sp.add_argument("dataset")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--orderings", default="ccw,x,y,z")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--generate", type=int, default=None, help="styles to generate per ordering (default all)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HairError as exc:
        code = exc.exit_code
        if args.json_errors:
            err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
            if getattr(exc, "offset", None) is not None:
                err["offset"] = exc.offset
            print(json.dumps(err), file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
