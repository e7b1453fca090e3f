"""Command-line interface.

Subcommands::

    ingest PATH              parse an ARFF file and print its statistics as JSON
    run                      full experiment: scores, correlations, regressions,
                             calibration intervals, reliability and top-k curves
    analyze-relative         Kendall tau correlations, fixed-effects regressions, top-k curves
    analyze-absolute         Pearson correlations and fixed-effects regressions
    calibrate                calibration interval tables and reliability curves
    score                    confidence scores and metric-optimal predictions for one
                             model + feature rows, or for a stored distribution
    report                   summarise a results directory and verify its manifest

Output tables (``--format csv`` or ``json``), written under ``--out``:

``instances``
    dataset, classifier, metric, instance, truth, prediction,
    realized_accuracy, expected_accuracy, then one column per candidate
``correlations``
    dataset, classifier, metric, method, candidate, n, correlation, z,
    p_value, diff_p_value, marker ("+"/"-" x1-3 versus HP at p < 0.1/0.05/0.01)
``regression``
    model, term, estimate, std_error, t_value, p_value, stars
``calibration_intervals``
    metric, model, lower_bin, upper_bin, lower, upper, n_points, n_replicates, match
``reliability``
    metric, model, bin_center, mean_predicted, mean_realized, band_lower, band_upper, n_points
``topk``
    dataset, classifier, metric, candidate, k, mean_accuracy

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .candidates import ALL_CANDIDATES, CandidateKind, score_all
from .classifiers import load_model
from .data import dataset_stats, load_arff, parse_label_spec, read_table
from .exceptions import ConfigError, DataError, NumericalError
from .labelsets import LabelsetDistribution, index_to_labelset, marginals, mode
from .metrics import ALL_METRICS, Metric, best_prediction, expected_accuracy_all
from .pipeline import DatasetSpec, RunConfig, StageError, load_config, run_pipeline, verify_manifest

logger = logging.getLogger("mlconf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _add_run_flags(p):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--data", action="append", default=[], help="ARFF dataset (repeatable; adds to config)")
    p.add_argument("--labels", help="label spec for --data files: count (+first/-last) or comma-separated names")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--classifier", action="append", choices=("independent", "chain", "ecc"))
    p.add_argument("--metric", action="append", choices=("hs", "em", "js"))
    p.add_argument("--candidate", action="append", choices=[str(c) for c in ALL_CANDIDATES])
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates for significance (default 1000)")


def build_parser():
    parser = argparse.ArgumentParser(prog="mlconf", description="Confidence estimation for multi-label predictions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an ARFF file and print dataset statistics")
    p.add_argument("path")
    p.add_argument("--labels")

    for name, help_ in (
        ("run", "run every stage"),
        ("analyze-relative", "Kendall tau association, regressions and top-k curves"),
        ("analyze-absolute", "Pearson association and regressions"),
        ("calibrate", "calibration interval tables and reliability curves"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_))

    p = sub.add_parser("score", help="confidence and expected accuracy for model predictions")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model JSON written by a fitted classifier's save()")
    src.add_argument("--distribution", help='JSON file {"L": ..., "probs": [...]}')
    p.add_argument("--features", help="comma-separated feature values (one instance)")
    p.add_argument("--features-file", help="CSV of feature rows (no header)")
    p.add_argument("--metric", action="append", choices=("hs", "em", "js"))
    p.add_argument("--candidate", action="append", choices=[str(c) for c in ALL_CANDIDATES])

    p = sub.add_parser("report", help="summarise a results directory")
    p.add_argument("--out", required=True)
    return parser


def _effective_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    labels = parse_label_spec(args.labels) if args.labels else None
    for path in args.data:
        cfg.datasets.append(DatasetSpec(Path(path).stem, path=path, labels=labels))
    if args.labels and not args.data:
        for d in cfg.datasets:
            if d.path is not None:
                d.labels = labels
    for flag, key in (
        ("seed", "seed"),
        ("out", "out"),
        ("format", "format"),
        ("replicates", "replicates"),
        ("bootstrap", "bootstrap"),
        ("classifier", "classifiers"),
        ("metric", "metrics"),
        ("candidate", "candidates"),
    ):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


_STAGES = {
    "run": ("relative", "absolute", "calibration"),
    "analyze-relative": ("relative",),
    "analyze-absolute": ("absolute",),
    "calibrate": ("calibration",),
}


def cmd_ingest(args):
    labels = parse_label_spec(args.labels) if args.labels else None
    try:
        ds = load_arff(args.path, labels=labels)
    except FileNotFoundError:
        raise DataError(f"file not found: {args.path}") from None
    print(json.dumps(dataset_stats(ds).to_dict(), indent=1))
    return EXIT_OK


def cmd_run(args):
    cfg = _effective_config(args)
    manifest = run_pipeline(cfg, _STAGES[args.command])
    print(json.dumps({"out": cfg.out, "files": manifest["files"]}, indent=1))
    return EXIT_OK


def _bits(k, L):
    return "".join(str(b) for b in index_to_labelset(int(k), L))


def describe_distribution(d, metrics=ALL_METRICS, candidates=ALL_CANDIDATES):
    """JSON-ready summary: mode, marginals, candidate scores, per-metric predictions."""
    out = {
        "L": d.L,
        "mode": list(mode(d)),
        "marginals": [float(v) for v in marginals(d)],
        "candidates": {str(k): float(v) for k, v in score_all(d, candidates).items()},
        "predictions": {},
        "expected_accuracy": {},
    }
    for m in metrics:
        m = Metric.parse(m)
        label, value = best_prediction(d, m)
        out["predictions"][str(m)] = {"labelset": list(label), "expected_accuracy": float(value)}
        table = expected_accuracy_all(d.probs, m)
        out["expected_accuracy"][str(m)] = {_bits(k, d.L): float(v) for k, v in enumerate(table)}
    return out


def _read_features(args):
    if args.features:
        try:
            return np.array([[float(v) for v in args.features.split(",")]])
        except ValueError:
            raise DataError("--features must be comma-separated numbers") from None
    if args.features_file:
        try:
            X = np.loadtxt(args.features_file, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read features: {exc}") from None
        return X
    raise ConfigError("score --model needs --features or --features-file")


def cmd_score(args):
    metrics = [Metric.parse(m) for m in (args.metric or ALL_METRICS)]
    cands = [CandidateKind.parse(c) for c in (args.candidate or ALL_CANDIDATES)]
    if args.distribution:
        try:
            with open(args.distribution, encoding="utf-8") as fh:
                d = LabelsetDistribution.from_json(json.load(fh))
        except OSError as exc:
            raise DataError(f"cannot read distribution: {exc}") from None
        except ValueError as exc:
            raise DataError(f"bad distribution: {exc}") from None
        print(json.dumps(describe_distribution(d, metrics, cands), indent=1))
        return EXIT_OK
    try:
        model = load_model(args.model)
    except OSError as exc:
        raise DataError(f"cannot read model: {exc}") from None
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad model file: {exc}") from None
    X = _read_features(args)
    if X.shape[1] != model.n_features_in_:
        raise DataError(f"model expects {model.n_features_in_} features, got {X.shape[1]}")
    results = [describe_distribution(d, metrics, cands) for d in model.predict_distribution(X)]
    print(json.dumps(results[0] if len(results) == 1 else results, indent=1))
    return EXIT_OK


def cmd_report(args):
    out = Path(args.out)
    if not (out / "manifest.json").exists():
        raise DataError(f"no manifest.json in {out}")
    manifest, status = verify_manifest(out)
    print(f"results: {out}  seed={manifest['seed']}  stages={','.join(manifest['stages'])}")
    for d in manifest["datasets"]:
        print(
            f"  dataset {d['name']}: N={d['n_instances']} L={d['n_labels']} M={d['n_features']} "
            f"LC={d['label_cardinality']:.3f} distinct={d['distinct_combinations']}"
        )
    for name, ok in status.items():
        print(f"  {'ok  ' if ok else 'BAD '} {name}")
    for s in manifest.get("skipped", []):
        print(f"  skipped {s['model']}: {s['reason']}")
    corr = out / "correlations.json"
    if corr.exists():
        rows = read_table(corr)
        best = {}
        for r in rows:
            key = (r["method"], r["metric"])
            if key not in best or r["correlation"] > best[key]["correlation"]:
                best[key] = r
        for (method, metric), r in sorted(best.items()):
            print(f"  strongest {method} association for {metric}: {r['candidate']} r={r['correlation']:.3f}")
    return EXIT_OK if all(status.values()) else EXIT_DATA


_COMMANDS = {
    "ingest": cmd_ingest,
    "run": cmd_run,
    "analyze-relative": cmd_run,
    "analyze-absolute": cmd_run,
    "calibrate": cmd_run,
    "score": cmd_score,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc.error)
    except (ConfigError, DataError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError) or isinstance(exc, np.linalg.LinAlgError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ValueError)):
        return EXIT_DATA
    return 1


if __name__ == "__main__":
    sys.exit(main())
