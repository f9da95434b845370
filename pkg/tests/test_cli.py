import json

import numpy as np
import pytest

from maskmatch import config as cfgmod
from maskmatch.cli import dispatch
from maskmatch.errors import UsageError


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full tiny pipeline: gen-synthetic -> train -> eval."""
    root = tmp_path_factory.mktemp("cli")
    common = ["--objects", "3", "--dim", "8", "--grid", "12x12", "--distractor-parts", "1"]
    assert dispatch(["gen-synthetic", "--out", str(root / "train"), "--packs", "25",
                     "--seed", "4", "--split", "0", *common]) == 0
    assert dispatch(["gen-synthetic", "--out", str(root / "eval"), "--packs", "10",
                     "--seed", "4", "--split", "1", *common]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"train": {"steps": 40}, "mining": {"batch_size": 4}}))
    assert dispatch(["train", "--manifest", str(root / "train" / "manifest.txt"),
                     "--config", str(cfg), "--out", str(root / "run"), "--seed", "1"]) == 0
    ckpt = root / "run" / "ckpt_40.ommc"
    assert ckpt.exists()
    report = root / "report.json"
    assert dispatch(["eval", "--manifest", str(root / "eval" / "manifest.txt"),
                     "--ckpt", str(ckpt), "--report", str(report), "--plot", "ascii"]) == 0
    return root


def test_full_pipeline_outputs(pipeline, capsys):
    report = json.loads((pipeline / "report.json").read_text())
    assert report["counts"]["samples"] == 10
    assert (pipeline / "run" / "config.resolved.json").exists()
    assert (pipeline / "run" / "metrics.csv").exists()


def test_inspect_pack(pipeline, capsys):
    pack = next((pipeline / "train").glob("*.ommp"))
    assert dispatch(["inspect-pack", str(pack)]) == 0
    out = capsys.readouterr().out
    assert "direction: ego2exo" in out
    assert "feature dim: 8" in out
    assert "candidates:" in out
    assert "visible: True" in out


def test_match_prints_ranked_list(pipeline, capsys, tmp_path):
    pack = sorted((pipeline / "eval").glob("*.ommp"))[0]
    overlay = tmp_path / "o.pgm"
    code = dispatch(["match", "--pack", str(pack), "--ckpt", str(pipeline / "run" / "ckpt_40.ommc"),
                     "--threshold", "-1", "--emit-overlay", str(overlay)])
    assert code == 0
    out = capsys.readouterr().out
    assert "chosen=" in out and "ranked:" in out
    assert overlay.read_bytes().startswith(b"P5\n")


def test_usage_error_exit_code_1(capsys):
    assert dispatch(["train"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_command_exit_code_1(capsys):
    assert dispatch(["frobnicate"]) == 1


def test_data_error_exit_code_2(tmp_path, capsys):
    bogus = tmp_path / "bogus.ommp"
    bogus.write_bytes(b"XXXXnotapack")
    assert dispatch(["inspect-pack", str(bogus)]) == 2
    missing = tmp_path / "missing.ommp"
    assert dispatch(["inspect-pack", str(missing)]) == 2


def test_help_exits_zero():
    assert dispatch(["--help"]) == 0
    assert dispatch(["train", "--help"]) == 0


def test_sweep_threshold(pipeline, capsys, tmp_path):
    report = tmp_path / "sweep.json"
    code = dispatch(["eval", "--manifest", str(pipeline / "eval" / "manifest.txt"),
                     "--ckpt", str(pipeline / "run" / "ckpt_40.ommc"),
                     "--sweep-threshold", "--report", str(report)])
    assert code == 0
    data = json.loads(report.read_text())
    assert len(data["threshold_sweep"]) == 21


def test_gen_synthetic_determinism(tmp_path):
    args = ["gen-synthetic", "--packs", "3", "--objects", "3", "--dim", "8",
            "--grid", "12x12", "--seed", "9"]
    assert dispatch([*args, "--out", str(tmp_path / "a")]) == 0
    assert dispatch([*args, "--out", str(tmp_path / "b")]) == 0
    for pa in sorted((tmp_path / "a").glob("*.ommp")):
        pb = tmp_path / "b" / pa.name
        assert pa.read_bytes() == pb.read_bytes()


def test_train_cli_determinism(pipeline, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"steps": 10}, "mining": {"batch_size": 4}}))
    argv = ["train", "--manifest", str(pipeline / "train" / "manifest.txt"),
            "--config", str(cfg), "--seed", "3"]
    assert dispatch([*argv, "--out", str(tmp_path / "r1")]) == 0
    assert dispatch([*argv, "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1" / "ckpt_10.ommc").read_bytes() == (tmp_path / "r2" / "ckpt_10.ommc").read_bytes()
    assert (tmp_path / "r1" / "metrics.csv").read_text() == (tmp_path / "r2" / "metrics.csv").read_text()


# --- config layer -----------------------------------------------------------------


def test_config_defaults_roundtrip():
    resolved = cfgmod.resolve_config(None, {})
    assert resolved == cfgmod.DEFAULTS
    tcfg = cfgmod.to_train_config(resolved)
    assert tcfg.batch == 16 and tcfg.temperature == 0.2


def test_config_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trian": {"steps": 3}}))
    with pytest.raises(UsageError, match="unknown config key: trian"):
        cfgmod.resolve_config(cfg, {})
    cfg.write_text(json.dumps({"train": {"stepz": 3}}))
    with pytest.raises(UsageError, match="train.stepz"):
        cfgmod.resolve_config(cfg, {})


def test_config_toml_and_overrides(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[train]\nsteps = 7\n[loss]\ntemperature = 0.5\n")
    resolved = cfgmod.resolve_config(cfg, {"train.seed": 11})
    assert resolved["train"]["steps"] == 7
    assert resolved["loss"]["temperature"] == 0.5
    assert resolved["train"]["seed"] == 11
