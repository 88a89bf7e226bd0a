import json
import subprocess
import sys

import pytest

from onbody_auth.cli import main

TINY = {"seed": 7, "dataset": {"per_cell": 2, "uncontrolled_per_cell": 1, "duration_s": 10},
        "train_fraction": 0.5,
        "train": {"batch": 16, "outer_iters": 3, "inner_loops": 1,
                  "lr_e": 0.1, "lr_p": 0.1, "lr_d": 0.1, "lr_c": 0.1}}

STAGES = [
    ["simulate"],
    ["featurize"],
    ["train"],
    ["train", "--baseline"],
    ["evaluate"],
    ["evaluate", "--baseline"],
    ["protocol", "--scenario", "deadlock"],
    ["theory-check", "--skip-gradient"],
]


def run_pipeline(out, cfg_path, seed=None):
    extra = ["--seed", str(seed)] if seed is not None else []
    for stage in STAGES:
        assert main(stage + ["--config", str(cfg_path), "--out", str(out)] + extra) == 0, stage


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    for name in ("a", "b"):
        run_pipeline(base / name, cfg)
    run_pipeline(base / "c", cfg, seed=8)
    return base


def test_pipeline_outputs(runs):
    a = runs / "a"
    manifest = json.loads((a / "traces" / "manifest.json").read_text())
    # 2 per controlled cell x 50 cells + 1 per uncontrolled cell x 10
    assert len(manifest) == 110
    assert (a / "profiles" / "normalizer.json").exists()
    for sub in ("model", "model-baseline"):
        assert (a / sub / "checkpoint.json").exists() and (a / sub / "history.json").exists()
    metrics = json.loads((a / "eval" / "metrics.json").read_text())
    assert {"overall", "by_motion", "by_environment", "auroc"} <= set(metrics)
    for name in ("roc.csv", "roc.svg", "by_motion.svg", "by_environment.svg"):
        assert (a / "eval" / name).exists()
    lines = (a / "protocol" / "transcript.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["state_after"] == "DataTransfer"
    report = json.loads((a / "theory" / "report.json").read_text())
    assert all(j["pass"] for j in report["joints"])


def test_uncontrolled_profiles_only_in_test(runs):
    for split, allowed in (("train", set(range(5))), ("test", set(range(6)))):
        zs = {json.loads(line)["z"] for line in (runs / "a" / "profiles" / f"{split}.jsonl").open()}
        assert zs <= allowed
    test_z = {json.loads(line)["z"] for line in (runs / "a" / "profiles" / "test.jsonl").open()}
    assert 5 in test_z


def test_reruns_are_byte_identical(runs):
    a, b = snapshot(runs / "a"), snapshot(runs / "b")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_other_seed_gives_other_checkpoint(runs):
    a = (runs / "a" / "model" / "checkpoint.json").read_bytes()
    c = (runs / "c" / "model" / "checkpoint.json").read_bytes()
    assert a != c


def test_baseline_history_has_zero_weights(runs):
    hist = json.loads((runs / "a" / "model-baseline" / "history.json").read_text())
    cfg = json.loads((runs / "a" / "model-baseline" / "checkpoint.json").read_text())["extra"]["train_config"]
    assert cfg["alpha"] == 0 and cfg["beta"] == 0
    assert len(hist) == TINY["train"]["outer_iters"]


def test_out_is_a_file(tmp_path, capsys):
    (tmp_path / "f").write_text("")
    assert main(["simulate", "--seed", "1", "--out", str(tmp_path / "f")]) != 0
    assert "error" in capsys.readouterr().err


def test_seed_is_mandatory(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) != 0
    assert "seed" in capsys.readouterr().err


def test_bad_seed_and_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "colour": "red"}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) != 0
    assert main(["simulate", "--seed", "-1", "--out", str(tmp_path / "o")]) != 0


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["evaluate", "--seed", "1", "--out", str(tmp_path),
                 "--checkpoint", str(tmp_path / "nope.json")]) != 0
    assert "error" in capsys.readouterr().err


def test_learned_verifier_needs_checkpoint(tmp_path, capsys):
    assert main(["protocol", "--seed", "1", "--out", str(tmp_path), "--verifier", "learned"]) != 0
    assert "checkpoint" in capsys.readouterr().err


def test_empty_manifest(tmp_path):
    (tmp_path / "m.json").write_text("[]")
    assert main(["featurize", "--seed", "1", "--out", str(tmp_path), "--manifest",
                 str(tmp_path / "m.json")]) != 0


def test_malformed_joint(tmp_path):
    (tmp_path / "j.json").write_text(json.dumps({"name": "bad", "p": [[0.5, 0.6]]}))
    assert main(["theory-check", "--out", str(tmp_path), "--joints", str(tmp_path / "j.json")]) != 0


def test_protocol_oracle_spoof_and_script_file(tmp_path, capsys):
    assert main(["protocol", "--seed", "3", "--out", str(tmp_path / "o"), "--scenario", "spoofing"]) == 0
    assert "AssocDeny" in capsys.readouterr().out
    (tmp_path / "s.json").write_text("[]")
    assert main(["protocol", "--seed", "3", "--out", str(tmp_path / "o"),
                 "--scenario", str(tmp_path / "s.json")]) == 0
    (tmp_path / "bad.json").write_text('[{"t": 0}]')
    assert main(["protocol", "--seed", "3", "--out", str(tmp_path / "o"),
                 "--scenario", str(tmp_path / "bad.json")]) != 0


def test_threshold_verifier_from_cli(tmp_path, capsys):
    assert main(["protocol", "--seed", "5", "--out", str(tmp_path), "--verifier", "threshold",
                 "--scenario", "legitimate"]) == 0
    assert "final state" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "onbody_auth.cli", "protocol", "--seed", "0",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    bad = subprocess.run([sys.executable, "-m", "onbody_auth.cli", "nonsense"], capture_output=True, text=True)
    assert bad.returncode != 0
