import hashlib
import json

import numpy as np
import pytest

from motion_prior import cli, data


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 2, "--length", 24, "--out", root / "synth") == 0
    assert run("train", "--iters", 30, "--synth-n", 4, "--synth-length", 20, "--stride", 4,
               "--out", root / "hm") == 0
    return root


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_synth_writes_clips_and_manifest(workspace):
    files = sorted(p.name for p in (workspace / "synth").iterdir())
    assert files == ["clip_000.bvh", "clip_001.bvh", "manifest.json"]
    manifest = json.loads((workspace / "synth" / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 0
    assert len(data.read_bvh(workspace / "synth" / "clip_000.bvh")) == 24


def test_eval_identical_files_gives_zero_errors(workspace, capsys):
    clip = workspace / "synth" / "clip_000.bvh"
    assert run("eval", clip, clip, "--out", workspace / "ev") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mpjpe"] == report["accel_err"] == report["global_quat"] == 0
    assert report["pa_mpjpe"] < 1e-9


def test_interpolate_emits_both_results(workspace):
    out = workspace / "interp"
    clip = workspace / "synth" / "clip_000.bvh"
    before = digest(clip)
    code = run("interpolate", "--checkpoint", workspace / "hm" / "model.ckpt", "--input", clip,
               "--lead", 4, "--gap", 8, "--trail", 4, "--phase1-iters", 3, "--phase2-iters", 3, "--out", out)
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"optimized.csv", "slerp.csv", "trajectory_optimized.csv", "trajectory_slerp.csv",
            "diagnostics.jsonl", "metrics.json", "manifest.json"} <= names
    report = json.loads((out / "metrics.json").read_text())
    assert report["gap_frames"] == [4, 12] and set(report) == {"gap_frames", "optimized", "slerp"}
    assert len((out / "diagnostics.jsonl").read_text().splitlines()) == 6
    assert digest(clip) == before


def test_lerp_baseline_differs_from_slerp(workspace):
    args = ["interpolate", "--checkpoint", workspace / "hm" / "model.ckpt",
            "--input", workspace / "synth" / "clip_000.bvh", "--lead", 4, "--gap", 8, "--trail", 4,
            "--phase1-iters", 0, "--phase2-iters", 0]
    assert run(*args, "--baseline", "lerp", "--out", workspace / "lerp") == 0
    lerp = (workspace / "lerp" / "lerp.csv").read_text()
    assert lerp != (workspace / "interp" / "slerp.csv").read_text()


def test_usage_errors_exit_2(workspace, tmp_path, capsys):
    ckpt = workspace / "hm" / "model.ckpt"
    clip = workspace / "synth" / "clip_000.bvh"
    assert run("interpolate", "--checkpoint", ckpt, "--input", clip, "--gap", 30, "--out", tmp_path) == 2
    assert "exceeds the model window" in capsys.readouterr().err
    assert run("bogus") == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert run("synth", "--config", bad, "--out", tmp_path) == 2
    assert run("synth", "--config", tmp_path / "missing.cfg", "--out", tmp_path) == 2


def test_runtime_error_exits_1(tmp_path, capsys):
    missing = tmp_path / "nope.bvh"
    assert run("eval", missing, missing, "--out", tmp_path) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("motion-prior: error:") and "\n" not in err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# synthetic data\nn = 3\nlength = 12  # frames\nformat = csv\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "a") == 0
    assert len(list((tmp_path / "a").glob("clip_*.csv"))) == 3
    assert run("synth", "--config", cfg, "--n", 1, "--out", tmp_path / "b") == 0
    assert len(list((tmp_path / "b").glob("clip_*.csv"))) == 1


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("MOTION_PRIOR_SEED", "17")
    assert run("synth", "--n", 1, "--length", 8, "--out", tmp_path / "env") == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seed"] == 17
    assert run("synth", "--n", 1, "--length", 8, "--seed", 17, "--out", tmp_path / "flag") == 0
    assert digest(tmp_path / "env" / "clip_000.bvh") == digest(tmp_path / "flag" / "clip_000.bvh")


def test_fixed_seed_runs_are_byte_identical(tmp_path):
    def once(tag):
        out = tmp_path / tag
        assert run("train", "--iters", 20, "--synth-n", 3, "--synth-length", 16, "--seed", 5, "--threads", 1,
                   "--out", out / "hm") == 0
        assert run("synth", "--n", 1, "--length", 16, "--seed", 5, "--out", out / "s") == 0
        assert run("interpolate", "--checkpoint", out / "hm" / "model.ckpt", "--input", out / "s" / "clip_000.bvh",
                   "--lead", 4, "--gap", 8, "--trail", 4, "--phase1-iters", 4, "--phase2-iters", 4,
                   "--seed", 5, "--threads", 1, "--out", out / "i") == 0
        return out
    a, b = once("a"), once("b")
    for rel in ["hm/model.ckpt", "hm/loss_log.json", "s/clip_000.bvh", "i/optimized.csv", "i/slerp.csv",
                "i/diagnostics.jsonl", "i/metrics.json"]:
        assert digest(a / rel) == digest(b / rel), rel


def test_refine_and_complete(workspace, tmp_path):
    assert run("train", "--window", 8, "--strides", "2,2,1,1", "--iters", 10, "--synth-n", 2,
               "--synth-length", 12, "--out", tmp_path / "r") == 0
    clip = workspace / "synth" / "clip_001.bvh"
    assert run("refine", "--checkpoint", tmp_path / "r" / "model.ckpt", "--input", clip, "--gt", clip,
               "--out", tmp_path / "ref") == 0
    refined = (tmp_path / "ref" / "refined.csv").read_text().splitlines()
    assert len(refined) == 1 + 24
    assert set(json.loads((tmp_path / "ref" / "metrics.json").read_text())) == {"input", "refined"}
    assert run("complete", "--checkpoint", workspace / "hm" / "model.ckpt", "--input", clip,
               "--phase1-iters", 2, "--phase2-iters", 2, "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "completed.csv").exists()


def test_gradcheck_command(tmp_path, capsys):
    assert run("gradcheck", "--seeds", 1, "--out", tmp_path) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
    results = json.loads((tmp_path / "gradcheck.json").read_text())
    assert all(r["passed"] for r in results)
