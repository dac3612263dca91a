"""SVG figures drawn from the CSV outputs of a run directory."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(cell: str) -> float:
    return float("nan") if cell == "" else float(cell)


def render_trace(clean_csv: Path, events_csv: Optional[Path], out: Path) -> Path:
    rows = _rows(clean_csv)
    t = [_num(r["t_s"]) / 60 for r in rows]
    fhr = [_num(r["fhr_bpm"]) if r.get("valid", "1") == "1" else float("nan") for r in rows]
    uc = [_num(r["uc"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(10, 5))
    ax1.plot(t, fhr, lw=0.6, color="k")
    ax1.set_ylabel("FHR (bpm)")
    ax2.plot(t, uc, lw=0.6, color="k")
    ax2.set_ylabel("UC")
    ax2.set_xlabel("time (min)")
    colours = {"accel": "tab:green", "decel": "tab:red", "contraction": "tab:blue"}
    if events_csv is not None and events_csv.exists():
        for ev in _rows(events_csv):
            ax = ax2 if ev["kind"] == "contraction" else ax1
            ax.axvspan(_num(ev["start_s"]) / 60, _num(ev["end_s"]) / 60,
                       color=colours.get(ev["kind"], "grey"), alpha=0.25, lw=0)
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def render_delta_r(summary_csv: Path, labels_csv: Path, out: Path) -> Path:
    labels = {r["patient_id"]: r["class"] for r in _rows(labels_csv)}
    fig, ax = plt.subplots(figsize=(5, 5))
    for cls, colour in (("normal", "tab:blue"), ("at_risk", "tab:red")):
        pts = [(_num(r["delta_r1"]), _num(r["delta_r2"])) for r in _rows(summary_csv)
               if labels.get(r["patient_id"]) == cls and r["delta_r1"] != ""]
        if pts:
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=12, color=colour, label=cls)
    ax.set_xlabel("pole spread, dominant")
    ax.set_ylabel("pole spread, second")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def render_roc(roc_csv: Path, out: Path) -> Path:
    rows = _rows(roc_csv)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([_num(r["fpr"]) for r in rows], [_num(r["tpr"]) for r in rows], color="k")
    ax.plot([0, 1], [0, 1], ls=":", color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    fig.tight_layout()
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def render_run(run_dir: Path, out_dir: Path, patient: Optional[str] = None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    clean = sorted((run_dir / "clean").glob("*.csv")) if (run_dir / "clean").is_dir() else []
    if patient is not None:
        clean = [p for p in clean if p.stem == patient]
    if clean:
        src = clean[0]
        written.append(render_trace(src, run_dir / "events" / src.name,
                                    out_dir / f"trace_{src.stem}.svg"))
    if (run_dir / "arma_summary.csv").exists() and (run_dir / "labels.csv").exists():
        written.append(render_delta_r(run_dir / "arma_summary.csv", run_dir / "labels.csv",
                                      out_dir / "delta_r.svg"))
    if (run_dir / "roc.csv").exists():
        written.append(render_roc(run_dir / "roc.csv", out_dir / "roc.svg"))
    return written
