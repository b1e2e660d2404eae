import json
from pathlib import Path

import numpy as np
import pytest

from improv import envs, fileio
from improv.cli import dispatch

TINY_TOML = """\
env_name = "fork_reach"
n_demos = 3
seeds = [0]
n_scenarios_eval = 2
attempts = 2
n_scenarios_collect = 2
attempts_collect = 2
rounds = 1
train_iters = 30
batch_size = 8

[exploration]
kind = "modal"
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_missing_config_is_usage_error(tmp_path, capsys):
    code = dispatch(["run", "--config", str(tmp_path / "absent.toml"),
                     "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "usage" in err


def test_no_command_is_usage_error(capsys):
    assert dispatch([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_rejected(tiny_cfg, tmp_path, capsys):
    code = dispatch(["run", "--config", str(tiny_cfg), "--out",
                     str(tmp_path / "o"), "--frobnicate"])
    assert code == 1


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0


def test_gen_demos_and_diversity(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "demos.jsonl"
    assert dispatch(["gen-demos", "--config", str(tiny_cfg),
                     "--out", str(out)]) == 0
    recs = fileio.read_jsonl(out)
    assert len(recs) == 3
    # diversity over these demos: scenario ids are unique, so per-scenario=1
    hist_out = tmp_path / "hist.json"
    assert dispatch(["diversity", "--trials", str(out), "--per-scenario", "1",
                     "--out", str(hist_out)]) == 0
    hist = fileio.read_json(hist_out)
    assert sum(hist["bins"]) == 3


def test_run_twice_identical_trees(tiny_cfg, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert dispatch(["run", "--config", str(tiny_cfg), "--out", str(out1)]) == 0
    assert dispatch(["run", "--config", str(tiny_cfg), "--out", str(out2)]) == 0
    t1, t2 = tree_bytes(out1), tree_bytes(out2)
    assert list(t1) == list(t2)
    for rel in t1:
        assert t1[rel] == t2[rel], rel


def test_run_seed_override_and_rounds_override(tiny_cfg, tmp_path):
    out = tmp_path / "r"
    assert dispatch(["run", "--config", str(tiny_cfg), "--out", str(out),
                     "--seed", "7", "--rounds", "0"]) == 0
    assert (out / "seed_7/round_0/report.json").exists()
    assert not (out / "seed_7/round_1").exists()
    resolved = fileio.read_json(out / "config.json")
    assert resolved["config"]["seeds"] == [7]
    assert resolved["config"]["rounds"] == 0


def test_verify_report_roundtrip_and_tamper(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "r"
    assert dispatch(["run", "--config", str(tiny_cfg), "--out", str(out),
                     "--rounds", "0"]) == 0
    report = out / "seed_0/round_0/report.json"
    assert dispatch(["verify-report", str(report)]) == 0

    trials_path = report.parent / "trials.jsonl"
    lines = trials_path.read_text().strip().split("\n")
    rec = json.loads(lines[0])
    rec["success"] = not rec["success"]
    lines[0] = json.dumps(rec)
    trials_path.write_text("\n".join(lines) + "\n")
    assert dispatch(["verify-report", str(report)]) == 2


def test_verify_report_missing_file_usage_error(tmp_path):
    assert dispatch(["verify-report", str(tmp_path / "nope.json")]) == 1


def test_stagewise_train_eval_collect_select_improve(tiny_cfg, tmp_path):
    train_dir = tmp_path / "train"
    assert dispatch(["train", "--config", str(tiny_cfg),
                     "--out", str(train_dir)]) == 0
    ck = train_dir / "checkpoint.json"
    assert ck.exists()

    eval_dir = tmp_path / "eval"
    assert dispatch(["eval", "--config", str(tiny_cfg), "--checkpoint",
                     str(ck), "--out", str(eval_dir)]) == 0
    assert (eval_dir / "report.json").exists()
    assert (eval_dir / "trials.jsonl").exists()

    coll_dir = tmp_path / "coll"
    assert dispatch(["collect", "--config", str(tiny_cfg), "--checkpoint",
                     str(ck), "--out", str(coll_dir)]) == 0
    coll = coll_dir / "collect.jsonl"
    assert coll.exists()

    sel_dir = tmp_path / "sel"
    assert dispatch(["select", "--config", str(tiny_cfg), "--trials",
                     str(coll), "--out", str(sel_dir), "--theta", "0.5"]) == 0
    manifest = fileio.read_json(sel_dir / "manifest.json")
    assert manifest["selection"]["theta"] == 0.5
    assert set(manifest) >= {"n_kept", "kept_traj_ids", "scenario_success_rates"}

    imp_dir = tmp_path / "imp"
    assert dispatch(["improve", "--config", str(tiny_cfg), "--checkpoint",
                     str(ck), "--demos", str(train_dir / "demos.jsonl"),
                     "--trials", str(coll), "--out", str(imp_dir)]) == 0
    assert (imp_dir / "checkpoint.json").exists()
    assert (imp_dir / "manifest.json").exists()


def test_exploration_override_changes_collection(tiny_cfg, tmp_path):
    train_dir = tmp_path / "train"
    assert dispatch(["train", "--config", str(tiny_cfg),
                     "--out", str(train_dir)]) == 0
    ck = str(train_dir / "checkpoint.json")
    outs = {}
    for kind in ("none", "modal"):
        d = tmp_path / f"c_{kind}"
        assert dispatch(["collect", "--config", str(tiny_cfg), "--checkpoint",
                         ck, "--out", str(d), "--exploration", kind]) == 0
        outs[kind] = (d / "collect.jsonl").read_bytes()
    assert outs["none"] != outs["modal"]
