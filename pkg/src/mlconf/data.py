"""Multi-label datasets: ARFF ingestion, statistics, splitting, synthesis and export."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import re
import shlex
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArffError, DataError
from .labelsets import MAX_LABELS, labelset_matrix, labelsets_to_indices

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class MLDataset:
    """Feature matrix ``X`` (n, m) with binary label matrix ``Y`` (n, L)."""

    name: str
    X: np.ndarray
    Y: np.ndarray
    label_names: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.uint8)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise DataError("X and Y must be two-dimensional")
        if self.X.shape[0] != self.Y.shape[0]:
            raise DataError(f"{self.X.shape[0]} feature rows but {self.Y.shape[0]} label rows")
        if self.X.shape[0] < 1:
            raise DataError("dataset has no instances")
        if not 1 <= self.Y.shape[1] <= MAX_LABELS:
            raise DataError(f"label count {self.Y.shape[1]} outside [1, {MAX_LABELS}]")
        if not self.label_names:
            self.label_names = [f"y{j}" for j in range(self.Y.shape[1])]
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.X.shape[1])]

    @property
    def n_instances(self):
        return self.X.shape[0]

    @property
    def n_labels(self):
        return self.Y.shape[1]

    @property
    def n_features(self):
        return self.X.shape[1]

    def labelsets(self):
        return [tuple(int(v) for v in row) for row in self.Y]

    def subset(self, rows, name=None):
        return MLDataset(name or self.name, self.X[rows], self.Y[rows], list(self.label_names), list(self.feature_names))


@dataclass(frozen=True)
class DatasetStats:
    name: str
    n_instances: int
    n_labels: int
    n_features: int
    label_cardinality: float
    distinct_combinations: int

    def to_dict(self):
        return dataclasses.asdict(self)


def dataset_stats(ds):
    """Counts, label cardinality and number of distinct labelsets."""
    return DatasetStats(
        name=ds.name,
        n_instances=ds.n_instances,
        n_labels=ds.n_labels,
        n_features=ds.n_features,
        label_cardinality=float(ds.Y.sum(axis=1).mean()),
        distinct_combinations=int(np.unique(labelsets_to_indices(ds.Y)).size),
    )


# ---------------------------------------------------------------------------
# ARFF


_MEKA_C = re.compile(r"-C\s+(-?\d+)")


@dataclass
class _Attribute:
    name: str
    kind: str  # "numeric" or "nominal"
    values: tuple = ()


def _split_csv_line(line, lineno):
    try:
        return next(csv.reader([line], skipinitialspace=True, quotechar="'", escapechar="\\"))
    except (csv.Error, StopIteration) as exc:
        raise ArffError(f"cannot split data row: {exc}", lineno) from None


def _parse_attribute(rest, lineno):
    rest = rest.strip()
    if rest.startswith(("'", '"')):
        q = rest[0]
        end = rest.find(q, 1)
        if end < 0:
            raise ArffError("unterminated attribute name", lineno)
        name, spec = rest[1:end], rest[end + 1 :].strip()
    else:
        parts = rest.split(None, 1)
        if len(parts) != 2:
            raise ArffError(f"malformed @attribute declaration: {rest!r}", lineno)
        name, spec = parts
    if spec.startswith("{"):
        if not spec.endswith("}"):
            raise ArffError("unterminated nominal value list", lineno)
        body = spec[1:-1]
        values = tuple(v.strip().strip("'\"") for v in _split_csv_line(body, lineno)) if body.strip() else ()
        return _Attribute(name, "nominal", values)
    kind = spec.split()[0].lower()
    if kind in ("numeric", "real", "integer"):
        return _Attribute(name, "numeric")
    raise ArffError(f"unsupported attribute type {spec!r} for {name!r}", lineno)


def _relation_label_count(relation):
    m = _MEKA_C.search(relation)
    return int(m.group(1)) if m else None


def parse_arff(text, labels=None, name=None):
    """Parse dense or sparse ARFF text into an :class:`MLDataset`.

    Parameters
    ----------
    text : str
    labels : int or sequence of str, optional
        Label location. An int ``k`` follows the MEKA ``-C`` convention: the
        first ``k`` attributes when positive, the last ``|k|`` when negative.
        A sequence names the label attributes explicitly. When omitted, the
        ``-C`` option in the ``@relation`` line is used.
    name : str, optional
        Dataset name; defaults to the relation name.

    Nominal label attributes must take values in {0, 1}. Missing values are
    rejected in labels and mean-imputed in numeric features; nominal features
    are one-hot expanded in declaration order.
    """
    relation = None
    attrs = []
    rows = []
    in_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if not in_data:
            head = line.split(None, 1)
            key = head[0].lower()
            rest = head[1] if len(head) > 1 else ""
            if key == "@relation":
                relation = rest.strip().strip("'\"")
            elif key == "@attribute":
                attrs.append(_parse_attribute(rest, lineno))
            elif key == "@data":
                in_data = True
            else:
                raise ArffError(f"unexpected header line {line!r}", lineno)
            continue
        rows.append((lineno, line))
    if relation is None:
        raise ArffError("missing @relation line")
    if not attrs:
        raise ArffError("no @attribute declarations")
    if not in_data:
        raise ArffError("missing @data section")

    label_idx = _resolve_labels(attrs, relation, labels)
    values = [_parse_row(line, lineno, attrs) for lineno, line in rows]
    if not values:
        raise DataError("ARFF file has no data rows")
    return _build_dataset(name or relation.split(":")[0].strip(), attrs, label_idx, values, rows)


def _resolve_labels(attrs, relation, labels):
    n_attr = len(attrs)
    if labels is None:
        labels = _relation_label_count(relation)
        if labels is None:
            raise ArffError("no '-C k' option in @relation and no label list given")
    if isinstance(labels, (int, np.integer)):
        k = int(labels)
        if k == 0 or abs(k) > n_attr:
            raise ArffError(f"label count {k} invalid for {n_attr} attributes")
        idx = list(range(k)) if k > 0 else list(range(n_attr + k, n_attr))
    else:
        names = [a.name for a in attrs]
        missing = [lab for lab in labels if lab not in names]
        if missing:
            raise ArffError(f"label attributes not found: {missing}")
        idx = [names.index(lab) for lab in labels]
    if len(idx) > MAX_LABELS:
        raise ArffError(f"{len(idx)} labels exceeds the cap of {MAX_LABELS}")
    for i in idx:
        a = attrs[i]
        if a.kind != "nominal" or set(a.values) - {"0", "1"} or not a.values:
            if a.kind == "numeric":
                # numeric 0/1 label columns are checked row by row
                continue
            raise ArffError(f"label attribute {a.name!r} is not binary: {a.values}")
    return idx


def _parse_row(line, lineno, attrs):
    n_attr = len(attrs)
    if line.startswith("{"):
        if not line.endswith("}"):
            raise ArffError("unterminated sparse row", lineno)
        out = [0] * n_attr
        # omitted sparse entries mean 0 (numeric) or the first declared value (nominal)
        for i, a in enumerate(attrs):
            if a.kind == "nominal":
                out[i] = a.values[0] if a.values else None
        body = line[1:-1].strip()
        if body:
            for item in _split_csv_line(body, lineno):
                parts = item.strip().split(None, 1)
                if len(parts) != 2:
                    raise ArffError(f"malformed sparse entry {item!r}", lineno)
                try:
                    j = int(parts[0])
                except ValueError:
                    raise ArffError(f"bad sparse index {parts[0]!r}", lineno) from None
                if not 0 <= j < n_attr:
                    raise ArffError(f"sparse index {j} out of range", lineno)
                out[j] = parts[1].strip().strip("'\"")
        return out
    fields = [f.strip().strip("'\"") for f in _split_csv_line(line, lineno)]
    if len(fields) != n_attr:
        raise ArffError(f"expected {n_attr} values, found {len(fields)}", lineno)
    return fields


def _build_dataset(name, attrs, label_idx, values, rows):
    n = len(values)
    label_set = set(label_idx)
    Y = np.zeros((n, len(label_idx)), dtype=np.uint8)
    for col, i in enumerate(label_idx):
        for r, row in enumerate(values):
            v = str(row[i])
            if v == "?":
                raise ArffError(f"missing value in label {attrs[i].name!r}", rows[r][0])
            try:
                fv = float(v)
            except ValueError:
                raise ArffError(f"non-binary label value {v!r} in {attrs[i].name!r}", rows[r][0]) from None
            if fv not in (0.0, 1.0):
                raise ArffError(f"non-binary label value {v!r} in {attrs[i].name!r}", rows[r][0])
            Y[r, col] = int(fv)

    columns = []
    feature_names = []
    for i, a in enumerate(attrs):
        if i in label_set:
            continue
        raw = [row[i] for row in values]
        if a.kind == "numeric":
            col = np.empty(n)
            missing = np.zeros(n, dtype=bool)
            for r, v in enumerate(raw):
                if v == "?":
                    missing[r] = True
                    continue
                try:
                    col[r] = float(v)
                except (TypeError, ValueError):
                    raise ArffError(f"non-numeric value {v!r} in {a.name!r}", rows[r][0]) from None
            if missing.any():
                fill = col[~missing].mean() if (~missing).any() else 0.0
                col[missing] = fill
                logger.info("imputed %d missing values in feature %r with mean %.6g", missing.sum(), a.name, fill)
            columns.append(col)
            feature_names.append(a.name)
        else:
            for val in a.values:
                columns.append(np.array([1.0 if str(v) == val else 0.0 for v in raw]))
                feature_names.append(f"{a.name}={val}")
    X = np.column_stack(columns) if columns else np.zeros((n, 0))
    return MLDataset(name, X, Y, [attrs[i].name for i in label_idx], feature_names)


def load_arff(path, labels=None, name=None):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_arff(text, labels=labels, name=name)


def _quote(name):
    return f"'{name}'" if re.search(r"[\s,{}'%]", name) else name


def write_arff(ds, path):
    """Write a dense ARFF with labels first and a MEKA ``-C L`` relation tag."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"@relation '{ds.name}: -C {ds.n_labels}'\n\n")
        for lab in ds.label_names:
            fh.write(f"@attribute {_quote(lab)} {{0,1}}\n")
        for feat in ds.feature_names:
            fh.write(f"@attribute {_quote(feat)} numeric\n")
        fh.write("\n@data\n")
        for y, x in zip(ds.Y, ds.X):
            fh.write(",".join([str(int(v)) for v in y] + [format(float(v), ".17g") for v in x]) + "\n")


def parse_label_spec(spec):
    """CLI label spec: an integer (MEKA ``-C`` style) or comma-separated names."""
    if spec is None:
        return None
    spec = str(spec).strip()
    if re.fullmatch(r"-?\d+", spec):
        return int(spec)
    return [s for s in (p.strip() for p in shlex.split(spec.replace(",", " "))) if s]


# ---------------------------------------------------------------------------
# splitting and synthesis


def split(ds, fraction=0.5, seed=0):
    """Shuffled train/test split; the train side gets ``ceil(fraction * n)`` rows."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = ds.n_instances
    n_train = math.ceil(fraction * n)
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at fraction {fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def split_indices(n, fraction, rng):
    n_train = math.ceil(fraction * n)
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at fraction {fraction} leaves one side empty")
    perm = rng.permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass(frozen=True)
class SyntheticParams:
    """Parameters of the generating model: logit_j = b_j + x.W_j + prefix.V_j."""

    intercepts: np.ndarray
    weights: np.ndarray  # (L, m)
    dependence: np.ndarray  # (L, L), strictly lower triangular


def synth_generate(L=3, N=1000, dependence="chain", seed=0, n_features=4, weight_scale=1.5):
    """Sample a dataset from a known feature-conditional labelset distribution.

    Features are standard Gaussian. Label ``j`` has logit
    ``b_j + x . w_j + sum_{k<j} v_jk y_k``; with ``dependence="independent"``
    every ``v`` is zero. Returns the dataset and the exact ``(N, 2**L)`` joints
    the labels were drawn from.
    """
    if not 1 <= L <= 10:
        raise ValueError("synthetic generation supports 1 <= L <= 10")
    if dependence not in ("independent", "chain"):
        raise ValueError("dependence must be 'independent' or 'chain'")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, n_features))
    b = rng.normal(-0.3, 0.7, size=L)
    W = rng.normal(0.0, weight_scale / np.sqrt(n_features), size=(L, n_features))
    V = np.tril(rng.normal(0.0, 2.0, size=(L, L)), k=-1)
    if dependence == "independent":
        V = np.zeros((L, L))
    joints = true_joints(X, SyntheticParams(b, W, V))
    cdf = np.cumsum(joints, axis=1)
    u = rng.random(N)
    idx = np.minimum((cdf < u[:, None]).sum(axis=1), (1 << L) - 1)
    Y = labelset_matrix(L)[idx]
    ds = MLDataset(f"synthetic-L{L}-{dependence}", X, Y)
    return ds, joints


def true_joints(X, params):
    """Exact joints of the synthetic generating model for feature rows ``X``."""
    L = params.intercepts.size
    n = X.shape[0]
    probs = np.ones((n, 1))
    for j in range(L):
        a = params.intercepts[j] + X @ params.weights[j]
        prefixes = labelset_matrix(j).astype(np.float64) if j else np.zeros((1, 0))
        logit = a[:, None] + (prefixes @ params.dependence[j, :j])[None, :]
        p1 = 1.0 / (1.0 + np.exp(-logit))
        probs = np.stack([probs * (1.0 - p1), probs * p1], axis=2).reshape(n, -1)
    return probs / probs.sum(axis=1, keepdims=True)


def dump_synthetic(ds, joints, arff_path, joints_path):
    """Write a synthetic dataset as ARFF plus a sidecar JSON of true joints."""
    write_arff(ds, arff_path)
    L = ds.n_labels
    with open(joints_path, "w", encoding="utf-8") as fh:
        json.dump({"L": L, "joints": [[float(p) for p in row] for row in joints]}, fh)


# ---------------------------------------------------------------------------
# result tables


def _row_dict(row):
    if dataclasses.is_dataclass(row):
        return {f.name: getattr(row, f.name) for f in dataclasses.fields(row)}
    return dict(row)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value  # enums
    return v


def export_table(rows, fmt, path, columns=None):
    """Write records as CSV (floats at 6 decimals) or JSON (full precision).

    Column order follows ``columns`` when given, else the first record.
    """
    dicts = [{k: _plain(v) for k, v in _row_dict(r).items()} for r in rows]
    if columns is None:
        columns = list(dicts[0]) if dicts else []
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for d in dicts:
                w.writerow([_csv_cell(d.get(c)) for c in columns])
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([{c: d.get(c) for c in columns} for d in dicts], fh, indent=1, allow_nan=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or json")


def _csv_cell(v):
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "NA" if math.isnan(v) else f"{v:.6f}"
    if isinstance(v, (list, tuple)):
        return "".join(str(int(b)) for b in v)
    return str(v)


def read_table(path):
    """Read back a JSON table written by :func:`export_table`."""
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
