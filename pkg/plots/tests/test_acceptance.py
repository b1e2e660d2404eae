"""Plot-fidelity acceptance: exact sidecar values on synthetic reports, and
figure generation against a real run directory produced by the improv CLI."""

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from improvplots.cli import dispatch
from improvplots.figures import FigureSpec, render

TINY_TOML = """\
env_name = "fork_reach"
n_demos = 3
seeds = [0, 1]
n_scenarios_eval = 2
attempts = 3
n_scenarios_collect = 2
attempts_collect = 3
rounds = 1
train_iters = 30
batch_size = 8

[exploration]
kind = "modal"
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_a11_sidecar_equals_synthetic_report_values(tmp_path):
    scen = [0, 2, 5, 9, 10, 10]
    attempts = 10
    rep = {
        "checkpoint_id": "x", "env_name": "fork_reach", "round": 0, "seed": 0,
        "n_scenarios": len(scen), "attempts": attempts,
        "scenarios": [{"scenario_id": i, "successes": s, "attempts": attempts}
                      for i, s in enumerate(scen)],
        "overall_sr": 0.6, "scenario_sr": 5 / 6,
        "mixed_fraction": 1 / 3, "all_success_fraction": 1 / 3,
        "zero_success_fraction": 1 / 6, "dispersion": 0.0517,
    }
    (tmp_path / "report.json").write_text(json.dumps(rep))
    out = tmp_path / "hist.png"
    assert dispatch(["histogram", str(tmp_path / "report.json"),
                     "-o", str(out), "--label", "pi0"]) == 0
    rows = read_csv(out.with_suffix(".csv"))
    got = {int(r[0]): int(r[1]) for r in rows[1:]}
    for k in range(attempts + 1):
        assert got[k] == sum(1 for s in scen if s == k)

    bars = tmp_path / "bars.png"
    assert dispatch(["ablation_bars", str(tmp_path / "report.json"),
                     "-o", str(bars)]) == 0
    bar_rows = read_csv(bars.with_suffix(".csv"))
    assert float(bar_rows[1][1]) == rep["overall_sr"]
    print("A11a sidecar-exactness: PASS")


@pytest.fixture(scope="module")
def real_run_dir(tmp_path_factory):
    if shutil.which("improv") is None:
        pytest.skip("improv CLI not installed")
    root = tmp_path_factory.mktemp("run")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY_TOML)
    out = root / "run"
    proc = subprocess.run(["improv", "run", "--config", str(cfg),
                           "--out", str(out)],
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return out


def test_a11_real_run_histogram_and_curve(real_run_dir, tmp_path):
    report = real_run_dir / "seed_0/round_0/report.json"
    out = tmp_path / "hist.png"
    assert dispatch(["histogram", str(report), "-o", str(out)]) == 0
    assert out.exists() and out.with_suffix(".csv").exists()

    series = [str(real_run_dir / f"seed_{s}/series.json") for s in (0, 1)]
    curve = tmp_path / "curve.png"
    assert dispatch(["rounds_curve", *series, "-o", str(curve)]) == 0
    assert curve.exists()

    # plotted means must agree with the aggregate file written by the run
    agg = json.loads((real_run_dir / "aggregate.json").read_text())
    rows = read_csv(curve.with_suffix(".csv"))
    for r, agg_row in enumerate(agg["rounds"]):
        assert float(rows[1 + r][1]) == agg_row["overall_sr_mean"]
        assert float(rows[1 + r][2]) == pytest.approx(
            agg_row["overall_sr_std"], abs=1e-15)
    print("A11b real-run figures: PASS")


def test_a11_schema_mismatch_is_hard_error(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"env_name": "x"}))
    code = dispatch(["histogram", str(tmp_path / "bad.json"),
                     "-o", str(tmp_path / "h.png")])
    assert code == 2
