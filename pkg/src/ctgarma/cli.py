"""Command-line entry point.

Every subcommand reads a dataset directory (``--data``) and writes into
``--out``. Settings come from built-in defaults, then an optional flat
``key = value`` file given by ``--config``, then explicit flags.

Exit status is 0 on success, 1 on an internal failure and 2 on a user or
configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from . import pipeline as pl
from .ingest import IngestError, load_dataset, synth_cohort, write_dataset

log = logging.getLogger("ctgarma")


class UsageError(Exception):
    """Bad input from the user; reported with exit status 2."""


# -- configuration resolution --------------------------------------------------

_DEFAULTS = pl.RunConfig().to_flat()
_OPTIONAL_FLOAT = {"gamma"}
_OPTIONAL_STR = {"data"}


def _coerce(key: str, raw: str):
    if key not in _DEFAULTS:
        raise UsageError(f"unknown configuration key {key!r}")
    text = raw.strip()
    if key in _OPTIONAL_FLOAT or key in _OPTIONAL_STR:
        if text.lower() in ("", "none"):
            return None
        return float(text) if key in _OPTIONAL_FLOAT else text
    default = _DEFAULTS[key]
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r}") from None
    return text


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = _coerce(key.replace("-", "_"), value)
    return out


def write_config_file(cfg: pl.RunConfig, path) -> Path:
    lines = []
    for key, value in sorted(cfg.to_flat().items()):
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def resolve_config(args: argparse.Namespace) -> pl.RunConfig:
    flat = dict(_DEFAULTS)
    if getattr(args, "config", None):
        flat.update(read_config_file(args.config))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            flat[key] = value
    try:
        return pl.RunConfig.from_flat(flat)
    except pl.ConfigError as exc:
        raise UsageError(str(exc)) from exc


# -- argument parser -----------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--data", default=S, help="dataset directory (clinical.csv + <id>.csv)")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--jobs", type=int, default=S, help="worker processes for per-patient work")
    g = p.add_argument_group("preprocessing")
    g.add_argument("--spike-window-s", dest="spike_window_s", type=float, default=S)
    g.add_argument("--max-interp-s", dest="max_interp_s", type=float, default=S)
    g.add_argument("--mhr-step-bpm", dest="mhr_step_bpm", type=float, default=S)
    g.add_argument("--mhr-drop-bpm", dest="mhr_drop_bpm", type=float, default=S)
    g = p.add_argument_group("ARMA")
    g.add_argument("--arma-n", dest="arma_n", type=int, default=S)
    g.add_argument("--arma-m", dest="arma_m", type=int, default=S)
    g.add_argument("--window-len", dest="window_len", type=int, default=S)
    g.add_argument("--ridge", type=float, default=S)
    g.add_argument("--literal-sign", dest="literal_sign", action="store_true", default=S)
    g = p.add_argument_group("evaluation")
    g.add_argument("--features", default=S, help="fs1..fs4, arma or file:<path>")
    g.add_argument("--mode", choices=("5fold", "loo"), default=S)
    g.add_argument("--model", choices=("logreg", "svm"), default=S)
    g.add_argument("--ensemble", choices=("avg", "vote"), default=S)
    g.add_argument("--quality-min", dest="quality_min", type=float, default=S)
    g.add_argument("--select", action="store_true", default=S,
                   help="correlation pruning and forward selection inside each training set")
    g.add_argument("--prune-threshold", dest="prune_threshold", type=float, default=S)
    g.add_argument("--l2", type=float, default=S)
    g.add_argument("--C", dest="C", type=float, default=S)
    g.add_argument("--kernel", choices=("rbf", "linear"), default=S)
    g.add_argument("--gamma", type=float, default=S)
    g.add_argument("--no-class-weight", dest="class_weight", action="store_false", default=S)
    g.add_argument("--absence-indicators", dest="absence_indicators", action="store_true",
                   default=S)
    g.add_argument("--svm-train-size", dest="svm_train_size", type=int, default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctgarma",
                                     description="CTG preprocessing, ARMA features and "
                                                 "outcome classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "validate a dataset and summarise its records",
        "preprocess": "clean FHR/UC traces and export them",
        "events": "per-patient accelerations, decelerations and contractions",
        "arma": "per-window ARX fits and the pole-spread summary",
        "features": "feature tables",
        "labels": "outcome classes",
        "eval": "classifier evaluation (report.json, roc.csv)",
        "table-ii": "ARMA-only SVM on quality-filtered hold-out sets",
        "table-iii": "logistic regression across feature sets",
        "run": "every stage end to end, with a manifest",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    sp = sub.add_parser("synth", help="write a synthetic labelled cohort")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=40, help="number of patients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--prevalence", type=float, default=0.15)
    sp.add_argument("--excluded-frac", dest="excluded_frac", type=float, default=0.0)
    sp.add_argument("--pole-gap", dest="pole_gap", type=float, default=0.3)
    sp.add_argument("--duration-s", dest="duration_s", type=float, default=3750.0)
    sp.add_argument("--noise-sd", dest="noise_sd", type=float, default=1.0)
    sp.add_argument("--max-missing-frac", dest="max_missing_frac", type=float, default=0.0)
    rp = sub.add_parser("render", help="SVG figures from a finished run directory")
    rp.add_argument("--run", required=True, help="directory written by `run`")
    rp.add_argument("--out", help="where to put the SVGs (default: the run directory)")
    rp.add_argument("--patient", help="patient whose trace is drawn (default: first)")
    return parser


# -- stage helpers -------------------------------------------------------------

def _load(cfg: pl.RunConfig):
    if cfg.data is None:
        raise UsageError("no dataset given; pass --data DIR")
    path = Path(cfg.data)
    if not path.is_dir():
        raise UsageError(f"dataset directory not found: {path}")
    records, diagnostics = load_dataset(path)
    if not records:
        raise UsageError(f"no usable records in {path}: " + "; ".join(diagnostics))
    return records, diagnostics


class Run:
    """Tracks the files one command writes."""

    def __init__(self, cfg: pl.RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.outputs: list[str] = []
        self._analyses = None
        self.records = None
        self.diagnostics: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def analyses(self):
        if self._analyses is None:
            self.records, self.diagnostics = _load(self.cfg)
            self._analyses = pl.analyze_all(self.records, self.cfg)
        return self._analyses


def stage_ingest(run: Run) -> None:
    records, diags = _load(run.cfg)
    rows = [(r.patient_id, len(r), len(r) / r.fs, r.outcomes.ph, r.outcomes.apgar5)
            for r in records]
    pl.write_csv(run.path("ingest.csv"),
                 ("patient_id", "n_samples", "duration_s", "ph", "apgar5"), rows)
    if diags:
        run.path("ingest_diagnostics.txt").write_text("\n".join(diags) + "\n")


def stage_preprocess(run: Run) -> None:
    analyses = run.analyses()
    pl.write_csv(run.path("clean_summary.csv"), pl.CLEAN_SUMMARY_HEADER,
                 pl.clean_summary_rows(analyses))
    for a in analyses:
        p = run.path(f"clean/{a.patient_id}.csv")
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(pl.cleaned_signal_csv(a))


def stage_events(run: Run) -> None:
    for a in run.analyses():
        pl.write_csv(run.path(f"events/{a.patient_id}.csv"), pl.EVENT_HEADER, pl.event_rows(a))


def stage_arma(run: Run) -> None:
    analyses = run.analyses()
    n, m = run.cfg.arma.n, run.cfg.arma.m
    pl.write_csv(run.path("arma_windows.csv"), pl.arma_window_header(n, m),
                 pl.arma_window_rows(analyses))
    header = ("patient_id", "windows") + tuple(f"delta_r{i + 1}" for i in range(n))
    pl.write_csv(run.path("arma_summary.csv"), header, pl.arma_summary_rows(analyses, n))


def stage_features(run: Run) -> None:
    analyses = run.analyses()
    names = list(pl.feature_names(run.cfg.features))
    everything = pl.all_feature_names(analyses)
    missing = [n for n in names if n not in everything]
    if missing:
        raise UsageError(f"features never computed: {missing}")
    pl.write_csv(run.path("features.csv"), ["patient_id", *names],
                 pl.feature_rows(analyses, names))
    pl.write_csv(run.path("features_all.csv"), ["patient_id", *everything],
                 pl.feature_rows(analyses, everything))


def stage_labels(run: Run) -> None:
    pl.write_csv(run.path("labels.csv"), ("patient_id", "class"), pl.label_rows(run.analyses()))


def stage_eval(run: Run) -> None:
    report = pl.evaluate(run.analyses(), run.cfg)
    pl.write_json(run.path("report.json"), report)
    pl.write_csv(run.path("roc.csv"), ("threshold", "fpr", "tpr"), pl.roc_rows(report["roc"]))
    m = report["metrics"]
    print(f"{report['mode']} {report['model']} n={report['n_patients']} "
          f"auc={_fmt(m['auc'])} tpr={_fmt(m['tpr'])} fpr={_fmt(m['fpr'])} "
          f"mcc={_fmt(m['mcc'])}")


def stage_table_ii(run: Run) -> None:
    rows = pl.table_ii(run.analyses(), run.cfg)
    cols = ("tier", "n", "n_at_risk", "available", "auc", "tpr", "fpr")
    pl.write_json(run.path("table_ii.json"), rows)
    text = pl.format_table(rows, cols)
    run.path("table_ii.csv").write_text(text)
    print(text, end="")


def stage_table_iii(run: Run) -> None:
    rows = pl.table_iii(run.analyses(), run.cfg)
    cols = ("features", "n_features", "n_patients", "cv_auc", "cv_tpr", "cv_fpr",
            "loo_auc", "loo_tpr", "loo_fpr")
    pl.write_json(run.path("table_iii.json"), rows)
    text = pl.format_table(rows, cols)
    run.path("table_iii.csv").write_text(text)
    print(text, end="")


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.3f}"


STAGES: dict[str, Callable[[Run], None]] = {
    "ingest": stage_ingest,
    "preprocess": stage_preprocess,
    "events": stage_events,
    "arma": stage_arma,
    "features": stage_features,
    "labels": stage_labels,
    "eval": stage_eval,
    "table-ii": stage_table_ii,
    "table-iii": stage_table_iii,
}
RUN_ORDER = ("preprocess", "events", "arma", "features", "labels", "eval")


def cmd_run(run: Run) -> int:
    """All stages in sequence; a failure still leaves a manifest marked partial."""
    write_config_file(run.cfg, run.path("config.txt"))
    failure: Optional[BaseException] = None
    stage = None
    try:
        for stage in RUN_ORDER:
            STAGES[stage](run)
    except BaseException as exc:  # noqa: BLE001 - recorded, then re-raised
        failure = exc
    cohort = pl.summary(run._analyses) if run._analyses is not None else None
    diagnostics = list(run.diagnostics)
    if failure is not None:
        diagnostics.append(f"stage {stage}: {type(failure).__module__}."
                           f"{type(failure).__name__}: {failure}")
    run.outputs.append("manifest.json")
    pl.write_json(run.out / "manifest.json",
                  pl.manifest(run.cfg, run.outputs, diagnostics, failure is not None, cohort))
    if failure is not None:
        raise failure
    return 0


def cmd_synth(args) -> int:
    records = synth_cohort(args.n, seed=args.seed, prevalence=args.prevalence,
                           excluded_frac=args.excluded_frac, pole_gap=args.pole_gap,
                           duration_s=args.duration_s, noise_sd=args.noise_sd,
                           max_missing_frac=args.max_missing_frac)
    write_dataset(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_render(args) -> int:
    from .render import render_run  # matplotlib is only needed here

    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise UsageError(f"run directory not found: {run_dir}")
    for path in render_run(run_dir, Path(args.out) if args.out else run_dir, args.patient):
        print(path)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "render":
            return cmd_render(args)
        cfg = resolve_config(args)
        run = Run(cfg)
        if args.command == "run":
            return cmd_run(run)
        STAGES[args.command](run)
        return 0
    except (UsageError, pl.ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"ctgarma: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        module = getattr(type(exc), "__module__", "ctgarma")
        print(f"ctgarma: {module}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
