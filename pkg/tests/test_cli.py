import json

import numpy as np
import pytest

from hairlang.cli import main
from hairlang.core import HairCard, Hairstyle, style_to_mesh
from hairlang.dataset import SynthConfig, generate_synthetic, load_obj, save_obj, synthetic_dataset, write_dataset
from hairlang.metrics import chamfer
from hairlang.sequence import HairSequence, check_grammar

TINY_CFG = {
    "model": {"layers": 2, "hidden": 16, "heads": 2, "max_tokens": 512, "condition_tokens": 4, "cond_points": 64, "cond_hidden": 8},
    "train": {"steps": 4, "batch_size": 2, "warmup": 1, "cloud_points": 300},
    "inference": {"max_tokens": 120},
    "synthetic": {"card_count": [3, 4], "points_per_card": [4, 6]},
}


@pytest.fixture
def style_json(tmp_path):
    style = generate_synthetic(SynthConfig(card_count=(6, 6), seed=1))
    path = tmp_path / "style.json"
    style.save(path)
    return path, style


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY_CFG))
    return str(path)


def test_encode_decode_roundtrip(tmp_path, style_json, capsys):
    path, style = style_json
    obj = tmp_path / "in.obj"
    save_obj(style_to_mesh(style), obj)
    assert main(["encode", str(obj), "-o", str(tmp_path / "enc.json")]) == 0
    assert "compression ratio" in capsys.readouterr().out
    assert main(["decode", str(tmp_path / "enc.json"), "-o", str(tmp_path / "out.obj")]) == 0
    a, b = load_obj(obj), load_obj(tmp_path / "out.obj")
    assert chamfer(a.vertices, b.vertices) < 1e-6
    assert (tmp_path / "enc.config.json").exists() and (tmp_path / "out.config.json").exists()


def test_encode_ratio_single_card(tmp_path, capsys):
    n = 40
    pos = np.column_stack([np.zeros(n), 0.3 - 0.01 * np.arange(n), np.zeros(n)])
    style = Hairstyle([HairCard(np.column_stack([pos, np.full(n, 0.04), np.full(n, 0.02)]))])
    save_obj(style_to_mesh(style), tmp_path / "c.obj")
    assert main(["encode", str(tmp_path / "c.obj"), "-o", str(tmp_path / "c.json")]) == 0
    assert "compression ratio: 0.140056" in capsys.readouterr().out


def test_encode_torus_exit_2(tmp_path, capsys):
    from test_dataset import torus

    save_obj(torus(), tmp_path / "t.obj")
    code = main(["encode", str(tmp_path / "t.obj"), "-o", str(tmp_path / "t.json"), "--json-errors"])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and "rejected" in err["message"]


def test_parse_error_exit_1(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{oops")
    assert main(["decode", str(tmp_path / "bad.json"), "-o", str(tmp_path / "x.obj"), "--json-errors"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ParseError"


def test_budget_error_exit_3(tmp_path):
    n = 9000
    pos = np.column_stack([np.zeros(n), np.linspace(0.4, -0.4, n), np.zeros(n)])
    Hairstyle([HairCard(np.column_stack([pos, np.full(n, 0.02), np.full(n, 0.01)]))]).save(tmp_path / "big.json")
    assert main(["tokenize", str(tmp_path / "big.json"), "-o", str(tmp_path / "t.txt")]) == 3


def test_tokenize(tmp_path, style_json):
    path, style = style_json
    assert main(["tokenize", str(path), "-o", str(tmp_path / "t.txt"), "--ordering", "x"]) == 0
    seq = HairSequence.from_text((tmp_path / "t.txt").read_text())
    assert check_grammar(seq) == []
    assert len(seq) == style.total_points + len(style) + 1
    assert json.loads((tmp_path / "t.config.json").read_text())["ordering"] == "x"


def test_eval_identity(tmp_path, style_json):
    path, _ = style_json
    assert main(["eval", str(path), str(path), "-o", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["cd"] == 0 and report["voxel_iou"] == 1


def test_make_synthetic_deterministic(tmp_path, config):
    for name in ("a", "b"):
        assert main(["make-synthetic", "-n", "3", "--seed", "5", "--config", config, "-o", str(tmp_path / name)]) == 0
    for i in range(3):
        f = f"style_{i:05d}.json"
        assert (tmp_path / "a" / f).read_text() == (tmp_path / "b" / f).read_text()
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["seed"] == 5 and cfg["synthetic"]["card_count"] == [3, 4]


def test_train_generate_orderings(tmp_path, config, capsys):
    write_dataset(synthetic_dataset(3, SynthConfig(card_count=(3, 4), points_per_card=(4, 6)), seed=2), tmp_path / "d")
    assert main(["train", str(tmp_path / "d"), "-o", str(tmp_path / "run"), "--config", config]) == 0
    assert "teacher-forced accuracy" in capsys.readouterr().out
    assert (tmp_path / "run" / "weights" / "manifest.json").exists()
    assert (tmp_path / "run" / "loss_curve.csv").exists()
    assert (tmp_path / "run" / "config.json").exists()
    cond = tmp_path / "d" / "style_00000.json"
    for mode in ("y", "ccw"):
        out = tmp_path / f"gen_{mode}"
        assert main(["generate", str(tmp_path / "run"), str(cond), "-o", str(out), "--config", config, "--ordering", mode]) == 0
        seq = HairSequence.from_text((out / "tokens.txt").read_text())
        assert check_grammar(seq) == []
        assert (out / "generation.jsonl").exists() and (out / "config.json").exists()
        assert json.loads((out / "config.json").read_text())["inference"]["max_tokens"] == 120


def test_generate_flags(tmp_path, config):
    write_dataset(synthetic_dataset(2, SynthConfig(card_count=(3, 3), points_per_card=(4, 5)), seed=3), tmp_path / "d")
    main(["train", str(tmp_path / "d"), "-o", str(tmp_path / "run"), "--config", config])
    out = tmp_path / "g"
    args = ["generate", str(tmp_path / "run"), str(tmp_path / "d" / "style_00000.json"), "-o", str(out)]
    assert main(args + ["--config", config, "--no-root-verify", "--no-length-norm"]) == 0
    inf = json.loads((out / "config.json").read_text())["inference"]
    assert not inf["enable_root_verification"] and not inf["enable_length_normalization"]


def test_preprocess(tmp_path):
    from test_dataset import torus

    raw = tmp_path / "raw"
    raw.mkdir()
    save_obj(style_to_mesh(generate_synthetic(SynthConfig(card_count=(5, 5), seed=4))), raw / "good.obj")
    save_obj(torus(), raw / "junk.obj")
    (raw / "broken.obj").write_text("v 0 0 0\nf 1 2 3 4\n")
    assert main(["preprocess", str(raw), "-o", str(tmp_path / "out")]) == 0
    report = {r["file"]: r for r in json.loads((tmp_path / "out" / "rejections.json").read_text())}
    assert report["good.obj"]["accepted"]
    assert not report["junk.obj"]["accepted"]
    assert report["broken.obj"]["reasons"] == ["ParseError"]
    assert len((tmp_path / "out" / "manifest.jsonl").read_text().splitlines()) == 1


def test_ablate(tmp_path, config):
    write_dataset(synthetic_dataset(2, SynthConfig(card_count=(3, 3), points_per_card=(4, 5)), seed=6), tmp_path / "d")
    args = ["ablate", str(tmp_path / "d"), "-o", str(tmp_path / "abl"), "--config", config, "--orderings", "ccw,y", "--generate", "1"]
    assert main(args) == 0
    table = (tmp_path / "abl" / "ablation.txt").read_text()
    assert "ordering=ccw" in table and "ordering=y" in table
