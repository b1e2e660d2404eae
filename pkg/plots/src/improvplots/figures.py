"""Figure builders over the run-report JSON contract.

Every builder returns the rows it plotted; ``render`` writes the image plus
a sidecar CSV of those rows. Plotted values equal the report values exactly;
no smoothing is applied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KINDS = ("histogram", "rounds_curve", "ablation_bars", "dispersion")

REPORT_FIELDS = ("env_name", "round", "attempts", "scenarios", "overall_sr",
                 "scenario_sr", "mixed_fraction", "all_success_fraction",
                 "zero_success_fraction", "dispersion")
SERIES_FIELDS = ("seed", "rounds")


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise ValueError("at least one input report is required")


class SchemaError(ValueError):
    pass


def _load_checked(path, required) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    for key in required:
        if key not in data:
            raise SchemaError(f"{path}: missing required field {key!r}")
    return data


def load_report(path) -> dict:
    report = _load_checked(path, REPORT_FIELDS)
    for i, row in enumerate(report["scenarios"]):
        for key in ("scenario_id", "successes", "attempts"):
            if key not in row:
                raise SchemaError(f"{path}: scenarios[{i}] missing field {key!r}")
    return report


def load_series(path) -> dict:
    series = _load_checked(path, SERIES_FIELDS)
    for i, row in enumerate(series["rounds"]):
        for key in ("round", "overall_sr"):
            if key not in row:
                raise SchemaError(f"{path}: rounds[{i}] missing field {key!r}")
    return series


def _labels(spec: FigureSpec) -> list:
    if spec.labels:
        if len(spec.labels) != len(spec.inputs):
            raise ValueError(
                f"{len(spec.labels)} labels for {len(spec.inputs)} inputs")
        return list(spec.labels)
    return [Path(p).parent.name or Path(p).stem for p in spec.inputs]


def build_histogram(spec: FigureSpec):
    """Success-count histogram rows: one column of counts per input report."""
    labels = _labels(spec)
    reports = [load_report(p) for p in spec.inputs]
    attempts = reports[0]["attempts"]
    for path, rep in zip(spec.inputs, reports):
        if rep["attempts"] != attempts:
            raise SchemaError(
                f"{path}: attempts {rep['attempts']} != {attempts} of first input")
    header = ["successes"] + labels
    rows = []
    for k in range(attempts + 1):
        row = [k]
        for rep in reports:
            row.append(sum(1 for s in rep["scenarios"] if s["successes"] == k))
        rows.append(row)
    return header, rows


def build_rounds_curve(spec: FigureSpec):
    """Mean and std of overall SR per round, recomputed from per-seed series."""
    series = [load_series(p) for p in spec.inputs]
    n_rounds = len(series[0]["rounds"])
    for path, s in zip(spec.inputs, series):
        if len(s["rounds"]) != n_rounds:
            raise SchemaError(f"{path}: {len(s['rounds'])} rounds != {n_rounds}")
    header = (["round", "mean", "std"]
              + [f"seed_{s['seed']}" for s in series])
    rows = []
    for r in range(n_rounds):
        vals = [s["rounds"][r]["overall_sr"] for s in series]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        rows.append([series[0]["rounds"][r]["round"], mean, var ** 0.5] + vals)
    return header, rows


def build_ablation_bars(spec: FigureSpec):
    labels = _labels(spec)
    header = ["label", "overall_sr", "scenario_sr"]
    rows = []
    for label, path in zip(labels, spec.inputs):
        rep = load_report(path)
        rows.append([label, rep["overall_sr"], rep["scenario_sr"]])
    return header, rows


def build_dispersion(spec: FigureSpec):
    labels = _labels(spec)
    header = ["label", "dispersion", "mixed_fraction"]
    rows = []
    for label, path in zip(labels, spec.inputs):
        rep = load_report(path)
        rows.append([label, rep["dispersion"], rep["mixed_fraction"]])
    return header, rows


_BUILDERS = {
    "histogram": build_histogram,
    "rounds_curve": build_rounds_curve,
    "ablation_bars": build_ablation_bars,
    "dispersion": build_dispersion,
}


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_sidecar(header, rows, csv_path) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _draw(kind, header, rows, labels, ax):
    if kind == "histogram":
        ks = [row[0] for row in rows]
        width = 0.8 / (len(header) - 1)
        for j, label in enumerate(header[1:]):
            xs = [k + (j - (len(header) - 2) / 2) * width for k in ks]
            ax.bar(xs, [row[1 + j] for row in rows], width=width, label=label)
        ax.set_xlabel("successful attempts per scenario")
        ax.set_ylabel("scenarios")
        ax.legend()
    elif kind == "rounds_curve":
        xs = [row[0] for row in rows]
        means = [row[1] for row in rows]
        stds = [row[2] for row in rows]
        ax.plot(xs, means, marker="o", label="mean")
        ax.fill_between(xs, [m - s for m, s in zip(means, stds)],
                        [m + s for m, s in zip(means, stds)], alpha=0.25,
                        label="±1 std")
        ax.set_xlabel("round")
        ax.set_ylabel("overall success rate")
        ax.set_xticks(xs)
        ax.legend()
    else:  # ablation_bars, dispersion
        names = [row[0] for row in rows]
        ax.bar(range(len(names)), [row[1] for row in rows])
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylabel(header[1])


def render(spec: FigureSpec) -> Path:
    """Write one image and its sidecar CSV; returns the image path."""
    header, rows = _BUILDERS[spec.kind](spec)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sidecar(header, rows, out.with_suffix(".csv"))
    fig, ax = plt.subplots(figsize=(6, 4))
    _draw(spec.kind, header, rows, _labels(spec), ax)
    ax.set_title(spec.kind.replace("_", " "))
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
