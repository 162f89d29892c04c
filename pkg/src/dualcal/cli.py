"""Command-line front end: synth, stratify, calibrate, evaluate, sweep, compare, ablate.

Every subcommand writes ``manifest.json`` into its output directory with the
resolved configuration, library versions, warnings and wall time. Settings
come from built-in defaults, then an optional ``--config`` JSON file, then
explicit flags, each overriding the previous.

Exit status: 0 success, 2 usage error, 3 invalid input or configuration,
1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__, dual, experiment, isotonic, stats
from .conformal import ConformalConfig, build_index, quantile_rank, stratification_report, stratify
from .data_model import (
    SPLIT_NAMES,
    SplitSpec,
    entropies,
    mean_over_passes,
    predicted_labels,
    read_csv,
    read_stack,
    write_csv,
)
from .errors import ConfigError, DualcalError, ParseError
from .metrics import DEFAULT_BINS, DEFAULT_TAUS, SWEEP_COLUMNS, evaluate, reliability_bins, threshold_sweep
from .synth import SplitData, SynthConfig, make_benchmark

log = logging.getLogger("dualcal")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_INVALID = 0, 1, 2, 3

# fractions reported as percentages in CLI output
_PERCENT_KEYS = {"accuracy", "macro_f1", "ece", "mce", "brier", "uacc", "utpr", "ufpr", "ug_mean"}


@dataclass
class RunConfig:
    in_path: str | None = None
    out_path: str | None = None
    k: int = 20
    alpha: float = 0.01
    beta: float = 0.9
    bins: int = DEFAULT_BINS
    taus: list = field(default_factory=lambda: list(DEFAULT_TAUS))
    mode: str = "dual"
    tag: str | None = None
    seed: int = 0

    def conformal(self) -> ConformalConfig:
        return ConformalConfig(k=self.k, alpha=self.alpha)

    def validate(self, command: str) -> None:
        if command != "synth" and not self.in_path:
            raise ConfigError(f"{command}: --in is required")
        if not self.out_path and command not in ("evaluate", "sweep"):
            raise ConfigError(f"{command}: --out is required")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta: must lie in [0, 1], got {self.beta}")
        if self.bins < 1:
            raise ConfigError(f"bins: must be >= 1, got {self.bins}")
        if self.mode not in experiment.MODES:
            raise ConfigError(f"mode: must be one of {experiment.MODES}, got {self.mode!r}")
        if any(not 0.0 <= t <= 1.0 for t in self.taus):
            raise ConfigError(f"taus: every tau must lie in [0, 1], got {self.taus}")
        if self.seed < 0:
            raise ConfigError(f"seed: must be unsigned, got {self.seed}")
        self.taus = sorted(float(t) for t in self.taus)
        self.conformal()


# --- helpers ---------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_table(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _percent(record: dict) -> dict:
    return {k: (100.0 * v if k in _PERCENT_KEYS and isinstance(v, float) else v) for k, v in record.items()}


def _percent_report(report: dict) -> dict:
    out = _percent(report)
    if "uncertainty" in out:
        out["uncertainty"] = [_percent(r) for r in out["uncertainty"]]
    return out


def _versions() -> dict:
    return {"dualcal": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _manifest(out: Path, command: str, cfg: RunConfig, started: float, warnings=(), extra=None) -> None:
    doc = {
        "command": command,
        "config": asdict(cfg),
        "versions": _versions(),
        "warnings": list(warnings),
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        doc.update(extra)
    write_json(out / manifest_name(command), doc)


def manifest_name(command: str) -> str:
    # evaluate and sweep usually write into a calibrate run directory; keep its manifest intact
    return f"manifest_{command}.json" if command in ("evaluate", "sweep") else "manifest.json"


def load_split(bundle: Path, name: str, with_labels: bool = True) -> SplitData:
    d = bundle / name
    if not d.is_dir():
        raise ParseError(f"{d}: split directory not found")
    stack = read_stack(d)
    features = read_csv(d / "features.csv", "features")
    labels = read_csv(d / "labels.csv", "labels", stack.shape[2]) if with_labels else None
    if features.shape[0] != stack.shape[1] or (labels is not None and labels.shape[0] != stack.shape[1]):
        raise ParseError(f"{d}: features, labels and probability files disagree in row count")
    return SplitData(features, labels, stack)


def _flags_rows(flags):
    return [{"flag": int(f), "set_size": int(s), "quantile": float(q)}
            for f, s, q in zip(flags.flags, flags.set_sizes, flags.quantiles)]


def _degeneracy(cfg: RunConfig) -> dict:
    m = quantile_rank(cfg.k, cfg.alpha)
    return {"quantile_rank": m, "quantile_is_neighbourhood_max": m == cfg.k}


# --- subcommands -----------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> list[str]:
    synth_cfg = SynthConfig(
        n_classes=args.classes, per_class=args.per_class, dim=args.dim,
        separation=args.separation, spread=args.spread, passes=args.passes,
        sharpness=args.sharpness, pass_noise=args.noise, seed=cfg.seed,
    )
    fractions = [float(x) for x in args.fractions.split(",")]
    if len(fractions) != 4:
        raise ConfigError(f"fractions: expected 4 comma-separated values, got {args.fractions!r}")
    make_benchmark(synth_cfg, SplitSpec(*fractions, seed=cfg.seed), Path(cfg.out_path))
    return []


def cmd_stratify(cfg: RunConfig, args) -> list[str]:
    bundle, out = Path(cfg.in_path), Path(cfg.out_path)
    conf = load_split(bundle, "conformal")
    target = load_split(bundle, args.split)
    index = build_index(conf.features, conf.labels, mean_over_passes(conf.stack))
    mean = mean_over_passes(target.stack)
    flags = stratify(index, target.features, mean, None, cfg.conformal())
    write_table(out / "flags.csv", ("flag", "set_size", "quantile"), _flags_rows(flags))
    correct = predicted_labels(mean) == target.labels
    report = {"split": args.split, "n": int(correct.size), **stratification_report(flags, correct).to_dict(),
              **_degeneracy(cfg)}
    write_json(out / "stratification.json", report)
    return []


def cmd_calibrate(cfg: RunConfig, args) -> list[str]:
    bundle, out = Path(cfg.in_path), Path(cfg.out_path)
    calib = load_split(bundle, "calibration")
    # inference never sees test labels
    test = load_split(bundle, "test", with_labels=False)
    warnings: list[str] = []
    test_mean = mean_over_passes(test.stack)
    cal_mean = mean_over_passes(calib.stack)
    if cfg.mode == "none":
        probs, model = test_mean, {"method": "none"}
        flags = None
    elif cfg.mode == "isotonic":
        cal = isotonic.fit_standard(cal_mean, calib.labels)
        probs, model, flags = isotonic.apply(cal, test_mean), {"method": "isotonic", **cal.to_dict()}, None
    else:
        conf = load_split(bundle, "conformal")
        index = build_index(conf.features, conf.labels, mean_over_passes(conf.stack))
        cal_flags = stratify(index, calib.features, cal_mean, None, cfg.conformal())
        cal = dual.fit(cal_mean, calib.labels, cal_flags, cfg.beta, cfg.conformal())
        result = dual.infer(cal, index, test.features, test.stack)
        probs, model, flags = result.calibrated, cal.to_dict(), result.flags
        warnings.extend(cal.warnings)
    write_json(out / "calibrator.json", model)
    write_csv(out / "probs.csv", probs, "probs")
    write_table(out / "entropy.csv", ("entropy",), [{"entropy": h} for h in entropies(probs)])
    if flags is not None:
        write_table(out / "flags.csv", ("flag", "set_size", "quantile"), _flags_rows(flags))
    return warnings


def _run_inputs(cfg: RunConfig, args):
    run = Path(cfg.in_path)
    probs = read_csv(run / "probs.csv", "probs")
    if args.labels:
        labels_path = Path(args.labels)
    else:
        manifest = run / "manifest.json"
        if not manifest.is_file():
            raise ConfigError(f"{run}: no manifest.json; pass --labels explicitly")
        doc = json.loads(manifest.read_text())
        if doc.get("command") != "calibrate":
            raise ConfigError(f"{manifest}: not a calibrate run; pass --labels explicitly")
        bundle = doc["config"]["in_path"]
        labels_path = Path(bundle) / "test" / "labels.csv"
    labels = read_csv(labels_path, "labels", probs.shape[1])
    if labels.shape[0] != probs.shape[0]:
        raise ParseError(f"{labels_path}: {labels.shape[0]} labels for {probs.shape[0]} probability rows")
    h = entropies(probs)
    return run, probs, labels, h


def cmd_evaluate(cfg: RunConfig, args) -> list[str]:
    run, probs, labels, h = _run_inputs(cfg, args)
    out = Path(cfg.out_path) if cfg.out_path else run
    report = evaluate(probs, labels, h, cfg.bins, cfg.taus)
    report["tag"] = cfg.tag
    write_json(out / "report.json", _percent_report(report))
    bins = reliability_bins(probs, labels, cfg.bins)
    write_table(out / "reliability.csv", ("lo", "hi", "conf", "acc", "count"),
                [dict(zip(("lo", "hi", "conf", "acc", "count"), r)) for r in bins.rows()])
    return []


def cmd_sweep(cfg: RunConfig, args) -> list[str]:
    run, probs, labels, h = _run_inputs(cfg, args)
    out = Path(cfg.out_path) if cfg.out_path else run
    correct = predicted_labels(probs) == labels
    rows = [_percent(r) for r in threshold_sweep(correct, h, cfg.taus)]
    write_table(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return []


def read_run_matrix(path: Path) -> stats.RunMatrix:
    if not path.is_file():
        raise ParseError(f"{path}: file not found")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ParseError(f"{path}: need a header row and at least one run")
    header = rows[0]
    values = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i}: expected {len(header)} values, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            raise ParseError(f"{path}: row {i}: non-numeric cell") from None
    return stats.RunMatrix(np.array(values), tuple(header))


def cmd_compare(cfg: RunConfig, args) -> list[str]:
    out = Path(cfg.out_path)
    report = {"wilcoxon_conventions": "zero differences dropped; tied magnitudes get average ranks; "
                                      "alternative: reference < other"}
    groups = {}
    for p in [Path(x) for x in cfg.in_path.split(",")]:
        rm = read_run_matrix(p)
        ref = args.reference or rm.methods[0]
        fr = stats.friedman(rm)
        groups[p.stem] = {
            "runs": rm.values.shape[0],
            "friedman": {"statistic": fr.statistic, "p": fr.pvalue, "average_ranks": fr.average_ranks},
            "pairwise": stats.pairwise_vs_reference(rm, ref),
        }
    report["groups"] = groups
    write_json(out / "compare.json", report)
    return []


ABLATION_COLUMNS = ("param", "value", "ece", "fc_pct", "tc_pct", "correct_size", "correct_accuracy",
                    "incorrect_size", "incorrect_accuracy")


def cmd_ablate(cfg: RunConfig, args) -> list[str]:
    bundle, out = Path(cfg.in_path), Path(cfg.out_path)
    splits = {name: load_split(bundle, name) for name in SPLIT_NAMES[1:]}
    grid = [float(x) for x in args.grid.split(",")]
    rows, warnings = [], []
    for value in grid:
        k, beta = (int(value), cfg.beta) if args.param == "k" else (cfg.k, value)
        if args.param == "k" and k != value:
            raise ConfigError(f"grid: k values must be integers, got {value}")
        conformal = ConformalConfig(k=k, alpha=cfg.alpha)
        res = experiment.run_mode("dual", splits["conformal"], splits["calibration"], splits["test"],
                                  conformal, beta)
        warnings.extend(res.warnings)
        rep = experiment.summarize(res, splits["test"].labels, cfg.bins, [0.5])
        u = rep["uncertainty"][0]
        rows.append({"param": args.param, "value": value, "ece": 100.0 * rep["ece"],
                     "fc_pct": u["fc_pct"], "tc_pct": u["tc_pct"], **{
                         key: (math.nan if v is None else v) for key, v in rep["stratification"].items()}})
    write_table(out / "ablation.csv", ABLATION_COLUMNS, rows)
    return warnings


COMMANDS = {
    "synth": cmd_synth,
    "stratify": cmd_stratify,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
}


# --- argument parsing ------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--in", dest="in_path", help="input bundle, run directory or CSV list")
    common.add_argument("--out", dest="out_path", help="output directory")
    common.add_argument("--k", type=int, help="neighbourhood size (default 20)")
    common.add_argument("--alpha", type=float, help="miscoverage rate (default 0.01)")
    common.add_argument("--beta", type=float, help="underconfidence factor (default 0.9)")
    common.add_argument("--bins", type=int, help=f"reliability bins (default {DEFAULT_BINS})")
    common.add_argument("--taus", type=_floats, help="entropy thresholds, comma-separated")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--mode", choices=experiment.MODES, help="calibration mode (default dual)")
    common.add_argument("--tag", help="method name recorded in reports")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dualcal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark bundle")
    d = SynthConfig()
    p.add_argument("--classes", type=int, default=d.n_classes)
    p.add_argument("--per-class", type=int, default=d.per_class)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--separation", type=float, default=d.separation)
    p.add_argument("--spread", type=float, default=d.spread)
    p.add_argument("--passes", type=int, default=d.passes)
    p.add_argument("--sharpness", type=float, default=d.sharpness)
    p.add_argument("--noise", type=float, default=d.pass_noise)
    p.add_argument("--fractions", default="0.55,0.15,0.15,0.15",
                   help="train,conformal,calibration,test")

    p = sub.add_parser("stratify", parents=[common], help="conformal stratification of one split")
    p.add_argument("--split", choices=("calibration", "test"), default="test")

    sub.add_parser("calibrate", parents=[common], help="fit on the calibration split, apply to test")

    for name, text in (("evaluate", "metrics for a calibrate run"), ("sweep", "uncertainty metrics per tau")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--labels", help="labels.csv (default: test labels of the run's bundle)")

    p = sub.add_parser("compare", parents=[common], help="Friedman + pairwise Wilcoxon over runs")
    p.add_argument("--reference", help="method compared against all others (default: first column)")

    p = sub.add_parser("ablate", parents=[common], help="grid over k or beta for dual calibration")
    p.add_argument("--param", choices=("k", "beta"), required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"{path}: config file not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        for key, value in data.items():
            setattr(cfg, key, value)
    for name in known:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        cfg = resolve_config(args)
        cfg.validate(args.command)
        warnings = COMMANDS[args.command](cfg, args)
        out = Path(cfg.out_path) if cfg.out_path else Path(cfg.in_path)
        _manifest(out, args.command, cfg, started, warnings)
    except DualcalError as exc:
        print(f"dualcal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled failure", exc_info=True)
        print(f"dualcal {args.command}: failed: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
