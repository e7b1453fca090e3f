"""Experiment pipeline: datasets x classifiers x metrics x candidates.

Every stage draws its randomness from ``SeedSequence([seed, stage, index])``
so outputs depend only on the configuration, never on run order or wall time.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .association import (
    MIN_GROUP_SIZE,
    correlation_table,
    ols_fixed_effects,
    robustness_regression,
    topk_accuracy_curve,
)
from .calibration import (
    calibration_targets,
    interval_table,
    reliability_curve,
    replicate_experiment,
)
from .candidates import ALL_CANDIDATES, CandidateKind, score_matrix
from .classifiers import make_classifier
from .data import dataset_stats, export_table, load_arff, parse_label_spec, split_indices, synth_generate
from .exceptions import ConfigError, DataError, NumericalError
from .labelsets import MAX_LABELS, labelsets_to_indices
from .metrics import ALL_METRICS, Metric, _similarity_from_indices, best_prediction_indices, expected_accuracy_all

logger = logging.getLogger(__name__)

CLASSIFIER_KINDS = ("independent", "chain", "ecc")
CALIBRATION_MODELS = ("HP", "SE", "CE", "MIX")
FORMATS = ("csv", "json")
OUTPUT_TABLES = ("instances", "correlations", "regression", "calibration_intervals", "reliability", "topk")

# stage ids for seed derivation
_SPLIT, _CLASSIFIER, _BOOT, _CALIB = 1, 2, 3, 4


@dataclass
class DatasetSpec:
    name: str
    path: str | None = None
    labels: object = None
    synthetic: dict | None = None


@dataclass
class RunConfig:
    datasets: list = field(default_factory=list)
    classifiers: list = field(default_factory=lambda: list(CLASSIFIER_KINDS))
    metrics: list = field(default_factory=lambda: [str(m) for m in ALL_METRICS])
    candidates: list = field(default_factory=lambda: [str(c) for c in ALL_CANDIDATES])
    seed: int = 0
    replicates: int = 20
    out: str = "results"
    format: str = "csv"
    train_fraction: float = 0.5
    n_chains: int = 10
    ridge_lambda: float = 1e-2
    bootstrap: int = 1000
    cv_folds: int = 10

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.n_chains < 1 or self.bootstrap < 0 or self.cv_folds < 2:
            raise ConfigError("n_chains >= 1, bootstrap >= 0 and cv_folds >= 2 are required")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be non-negative")
        if not self.datasets:
            raise ConfigError("no datasets configured")
        try:
            self.classifiers = _unique([str(c).lower() for c in self.classifiers])
            for c in self.classifiers:
                if c not in CLASSIFIER_KINDS:
                    raise ValueError(f"unknown classifier {c!r}")
            self.metrics = _unique([str(Metric.parse(m)) for m in self.metrics])
            self.candidates = _unique([str(CandidateKind.parse(c)) for c in self.candidates])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not (self.classifiers and self.metrics and self.candidates):
            raise ConfigError("classifier, metric and candidate lists must be non-empty")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        for d in self.datasets:
            if d.synthetic is not None:
                L = int(d.synthetic.get("L", 3))
                if L > MAX_LABELS:
                    raise ConfigError(f"dataset {d.name!r}: {L} labels exceeds the cap of {MAX_LABELS}")
                if not 1 <= L <= 10:
                    raise ConfigError(f"dataset {d.name!r}: synthetic data supports 1 <= L <= 10")
            elif d.path is None:
                raise ConfigError(f"dataset {d.name!r} needs a path or synthetic spec")
            elif not os.path.exists(d.path):
                raise ConfigError(f"dataset {d.name!r}: file not found: {d.path}")
            if isinstance(d.labels, int) and abs(d.labels) > MAX_LABELS:
                raise ConfigError(f"dataset {d.name!r}: {abs(d.labels)} labels exceeds the cap of {MAX_LABELS}")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["datasets"] = [dataclasses.asdict(s) for s in self.datasets]
        return d


def _unique(items):
    out = []
    for x in items:
        if x not in out:
            out.append(x)
    return out


def _split_list(value):
    return [v.strip() for v in str(value).replace(";", ",").split(",") if v.strip()]


def parse_synthetic_spec(text):
    """``"L=3, N=2000, dependence=chain, seed=1"`` -> dict with typed values."""
    spec = {}
    for part in _split_list(text):
        if "=" not in part:
            raise ConfigError(f"bad synthetic spec entry {part!r}; expected key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        if k in ("L", "N", "seed", "n_features"):
            try:
                spec[k] = int(v)
            except ValueError:
                raise ConfigError(f"synthetic {k} must be an integer, got {v!r}") from None
        elif k == "dependence":
            spec[k] = v
        else:
            raise ConfigError(f"unknown synthetic key {k!r}")
    return spec


_INT_KEYS = ("seed", "replicates", "n_chains", "bootstrap", "cv_folds")
_FLOAT_KEYS = ("train_fraction", "ridge_lambda")
_LIST_KEYS = ("classifiers", "metrics", "candidates")


def load_config(path):
    """Read an INI run configuration.

    ``[run]`` holds scalar and list settings; each ``[dataset:NAME]`` section
    gives either ``path`` (+ optional ``labels``) or ``synthetic``.
    Relative dataset paths resolve against the config file's directory; ``out``
    is taken relative to the working directory.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    base = Path(path).resolve().parent
    cfg = RunConfig()
    if parser.has_section("run"):
        for key, value in parser.items("run"):
            try:
                if key in _INT_KEYS:
                    setattr(cfg, key, int(value))
                elif key in _FLOAT_KEYS:
                    setattr(cfg, key, float(value))
                elif key in _LIST_KEYS:
                    setattr(cfg, key, _split_list(value))
                elif key in ("out", "format"):
                    setattr(cfg, key, value.strip())
                else:
                    raise ConfigError(f"unknown [run] key {key!r}")
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"[run] {key}: cannot parse {value!r}") from None
    for section in parser.sections():
        if section == "run":
            continue
        if not section.startswith("dataset:"):
            raise ConfigError(f"unknown section [{section}]")
        name = section.split(":", 1)[1].strip()
        items = dict(parser.items(section))
        unknown = set(items) - {"path", "labels", "synthetic"}
        if unknown:
            raise ConfigError(f"[{section}] unknown keys {sorted(unknown)}")
        spec = DatasetSpec(name)
        if "synthetic" in items:
            spec.synthetic = parse_synthetic_spec(items["synthetic"])
        if "path" in items:
            p = Path(items["path"])
            spec.path = str(p if p.is_absolute() else base / p)
        if "labels" in items:
            spec.labels = parse_label_spec(items["labels"])
        cfg.datasets.append(spec)
    return cfg


# ---------------------------------------------------------------------------
# stages


def _rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _seed_int(seed, *keys):
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def load_datasets(cfg):
    out = []
    for d in cfg.datasets:
        if d.synthetic is not None:
            spec = dict(d.synthetic)
            spec.setdefault("seed", cfg.seed)
            ds, _ = synth_generate(**spec)
            ds.name = d.name
        else:
            ds = load_arff(d.path, labels=d.labels, name=d.name)
        out.append(ds)
    return out


@dataclass
class InstanceTable:
    """Per-instance test-set results, one row per (dataset, classifier, metric, instance)."""

    dataset: np.ndarray
    classifier: np.ndarray
    metric: np.ndarray
    instance: np.ndarray
    n_labels: np.ndarray
    truth: np.ndarray
    prediction: np.ndarray
    realized: np.ndarray
    expected: np.ndarray
    scores: np.ndarray
    candidates: list

    def rows(self):
        for i in range(self.instance.size):
            L = int(self.n_labels[i])
            row = {
                "dataset": self.dataset[i],
                "classifier": self.classifier[i],
                "metric": self.metric[i],
                "instance": int(self.instance[i]),
                "truth": format(int(self.truth[i]), f"0{L}b"),
                "prediction": format(int(self.prediction[i]), f"0{L}b"),
                "realized_accuracy": float(self.realized[i]),
                "expected_accuracy": float(self.expected[i]),
            }
            for j, c in enumerate(self.candidates):
                row[c] = float(self.scores[i, j])
            yield row

    def groups(self):
        """Ordered mapping ``(dataset, classifier, metric) -> row mask``."""
        keys = []
        for k in zip(self.dataset, self.classifier, self.metric):
            if k not in keys:
                keys.append(k)
        return {k: (self.dataset == k[0]) & (self.classifier == k[1]) & (self.metric == k[2]) for k in keys}


def score_instances(cfg, datasets):
    """Train each classifier on a split of each dataset and score the test side."""
    parts = []
    for di, ds in enumerate(datasets):
        train, test = split_indices(ds.n_instances, cfg.train_fraction, _rng(cfg.seed, _SPLIT, di))
        if test.size < MIN_GROUP_SIZE:
            raise DataError(f"dataset {ds.name!r}: test split has {test.size} instances; need {MIN_GROUP_SIZE}")
        truth = labelsets_to_indices(ds.Y[test])
        for ci, kind in enumerate(cfg.classifiers):
            params = {"ridge_lambda": cfg.ridge_lambda}
            if kind == "ecc":
                params.update(n_chains=cfg.n_chains, random_state=_seed_int(cfg.seed, _CLASSIFIER, di, ci))
            model = make_classifier(kind, **params).fit(ds.X[train], ds.Y[train])
            P = model.predict_joint(ds.X[test])
            S = score_matrix(P, cfg.candidates)
            for m in cfg.metrics:
                metric = Metric.parse(m)
                pred, exp = best_prediction_indices(P, metric)
                realized = _similarity_from_indices(metric, truth, pred, ds.n_labels)
                n = test.size
                parts.append(
                    dict(
                        dataset=np.array([ds.name] * n, dtype=object),
                        classifier=np.array([kind] * n, dtype=object),
                        metric=np.array([str(metric)] * n, dtype=object),
                        instance=test.copy(),
                        n_labels=np.full(n, ds.n_labels),
                        truth=truth,
                        prediction=pred,
                        realized=realized,
                        expected=exp,
                        scores=S,
                    )
                )
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return InstanceTable(candidates=list(cfg.candidates), **cat)


def _group_payload(table, mask):
    return {
        "scores": {c: table.scores[mask, j] for j, c in enumerate(table.candidates)},
        "accuracy": table.realized[mask],
    }


def association_rows(cfg, table, method):
    groups = {k: _group_payload(table, mask) for k, mask in table.groups().items()}
    seed = _seed_int(cfg.seed, _BOOT, 0 if method == "kendall" else 1)
    records = correlation_table(groups, method=method, n_boot=cfg.bootstrap, seed=seed)
    rows = []
    for r in records:
        rows.append(
            {
                "dataset": r.dataset,
                "classifier": r.classifier,
                "metric": r.metric,
                "method": method,
                "candidate": r.candidate,
                "n": r.n,
                "correlation": r.r,
                "z": r.z,
                "p_value": r.p_value,
                "diff_p_value": r.diff_p_value,
                "marker": r.marker,
            }
        )
    return records, rows


def regression_rows(cfg, records, datasets, method):
    """Fixed-effects model per metric, plus per-candidate robustness models when estimable."""
    rows, skipped = [], []
    stats = {ds.name: dataset_stats(ds) for ds in datasets}
    for metric in cfg.metrics:
        sub = [r for r in records if r.metric == metric]
        factors = [f for f in ("candidate", "dataset", "classifier") if len({getattr(r, f) for r in sub}) >= 2]
        label = f"{method}:fixed_effects:{metric}"
        if "candidate" not in factors or len(sub) <= 1 + sum(len({getattr(r, f) for r in sub}) - 1 for f in factors):
            skipped.append({"model": label, "reason": "too few factor levels or observations"})
            continue
        rows.extend(ols_fixed_effects(sub, factors=tuple(factors)).to_rows(label))
    if len(datasets) >= 6:
        for cand, res in robustness_regression(records, stats).items():
            rows.extend(res.to_rows(f"{method}:robustness:{cand}"))
    else:
        skipped.append({"model": f"{method}:robustness", "reason": "needs at least 6 datasets"})
    return rows, skipped


def topk_rows(table):
    rows = []
    for (ds, clf, metric), mask in table.groups().items():
        acc = table.realized[mask]
        for j, c in enumerate(table.candidates):
            for k, mean in topk_accuracy_curve(table.scores[mask, j], acc):
                rows.append(
                    {"dataset": ds, "classifier": clf, "metric": metric, "candidate": c, "k": k, "mean_accuracy": mean}
                )
    return rows


def calibration_rows(cfg, table):
    """Interval tables and reliability curves for HP, SE, CE and MIX calibrators."""
    interval, reliability = [], []
    models = [m for m in CALIBRATION_MODELS if m == "MIX" or m in table.candidates]
    for mi, metric in enumerate(cfg.metrics):
        sel = table.metric == metric
        width = 0.05 if metric == "hs" else 0.1
        L = int(table.n_labels[sel][0]) if sel.any() else 1
        if np.any(table.n_labels[sel] != L) and metric != "em":
            targets = _mixed_targets(metric, table, sel)
        else:
            targets = calibration_targets(metric, table.truth[sel], table.prediction[sel], L)
        for gi, model in enumerate(models):
            cols = list(range(len(table.candidates))) if model == "MIX" else [table.candidates.index(model)]
            reps = replicate_experiment(
                metric,
                table.scores[sel][:, cols],
                targets,
                table.dataset[sel],
                table.classifier[sel],
                n_replicates=cfg.replicates,
                seed=_seed_int(cfg.seed, _CALIB, mi, gi),
                fraction=cfg.train_fraction,
                k=cfg.cv_folds,
            )
            for row in interval_table(reps, width):
                d = dataclasses.asdict(row)
                interval.append({"metric": metric, "model": model, **d})
            for pt in reliability_curve(reps, width):
                reliability.append({"metric": metric, "model": model, **dataclasses.asdict(pt)})
    return interval, reliability


def _mixed_targets(metric, table, sel):
    # datasets with different label counts: compute per row, then stack
    idx = np.flatnonzero(sel)
    if metric == "js":
        out = np.zeros((idx.size, 4))
    else:
        out = (np.zeros(idx.size), np.zeros(idx.size))
    for L in np.unique(table.n_labels[idx]):
        m = table.n_labels[idx] == L
        t = calibration_targets(metric, table.truth[idx][m], table.prediction[idx][m], int(L))
        if metric == "js":
            out[m] = t
        else:
            out[0][m], out[1][m] = t
    return out


# ---------------------------------------------------------------------------
# orchestration


class StageError(Exception):
    """A pipeline stage failed; wraps the original error with the stage name."""

    def __init__(self, stage, error):
        super().__init__(f"stage {stage!r} failed: {error}")
        self.stage = stage
        self.error = error


def _stage(name, fn, *args):
    logger.info("stage %s", name)
    try:
        return fn(*args)
    except (ConfigError, DataError, NumericalError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(cfg, name, rows, columns=None):
    path = Path(cfg.out) / f"{name}.{cfg.format}"
    export_table(rows, cfg.format, path, columns=columns)
    return path


_COLUMNS = {
    "correlations": [
        "dataset", "classifier", "metric", "method", "candidate", "n",
        "correlation", "z", "p_value", "diff_p_value", "marker",
    ],
    "regression": ["model", "term", "estimate", "std_error", "t_value", "p_value", "stars"],
    "calibration_intervals": [
        "metric", "model", "lower_bin", "upper_bin", "lower", "upper", "n_points", "n_replicates", "match",
    ],
    "reliability": [
        "metric", "model", "bin_center", "mean_predicted", "mean_realized", "band_lower", "band_upper", "n_points",
    ],
    "topk": ["dataset", "classifier", "metric", "candidate", "k", "mean_accuracy"],
}  # fmt: skip


def run_pipeline(cfg, stages=("relative", "absolute", "calibration")):
    """Execute the requested stages and write their tables plus ``manifest.json``.

    Returns the manifest dictionary.
    """
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    datasets = _stage("ingest", load_datasets, cfg)
    table = _stage("score", score_instances, cfg, datasets)
    written = {}
    skipped = []
    inst_cols = list(next(table.rows()).keys())
    written["instances"] = _write(cfg, "instances", list(table.rows()), inst_cols)

    corr_rows, reg_rows = [], []
    if "relative" in stages:
        records, rows = _stage("relative-association", association_rows, cfg, table, "kendall")
        corr_rows += rows
        r, s = _stage("regression", regression_rows, cfg, records, datasets, "kendall")
        reg_rows += r
        skipped += s
        written["topk"] = _write(cfg, "topk", _stage("topk", topk_rows, table), _COLUMNS["topk"])
    if "absolute" in stages:
        records, rows = _stage("absolute-association", association_rows, cfg, table, "pearson")
        corr_rows += rows
        r, s = _stage("regression", regression_rows, cfg, records, datasets, "pearson")
        reg_rows += r
        skipped += s
    if "relative" in stages or "absolute" in stages:
        written["correlations"] = _write(cfg, "correlations", corr_rows, _COLUMNS["correlations"])
        written["regression"] = _write(cfg, "regression", reg_rows, _COLUMNS["regression"])
    if "calibration" in stages:
        interval, reliability = _stage("calibration", calibration_rows, cfg, table)
        written["calibration_intervals"] = _write(
            cfg, "calibration_intervals", interval, _COLUMNS["calibration_intervals"]
        )
        written["reliability"] = _write(cfg, "reliability", reliability, _COLUMNS["reliability"])

    manifest = {
        "format": "mlconf.run-manifest",
        "version": 1,
        "package_version": __version__,
        "stages": list(stages),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "datasets": [dataset_stats(ds).to_dict() for ds in datasets],
        "skipped": skipped,
        "files": {p.name: sha256_file(p) for p in sorted(written.values())},
    }
    with open(Path(cfg.out) / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def verify_manifest(out_dir):
    """Recompute file hashes; returns ``{name: ok}``."""
    with open(Path(out_dir) / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    result = {}
    for name, digest in manifest["files"].items():
        p = Path(out_dir) / name
        result[name] = p.exists() and sha256_file(p) == digest
    return manifest, result


def expected_accuracy_table(P, metric):
    """Convenience for scoring: expected accuracy of every labelset."""
    return expected_accuracy_all(P, Metric.parse(metric))
