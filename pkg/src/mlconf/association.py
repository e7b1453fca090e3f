"""Relative and absolute association between confidence scores and accuracy.

Rank (Kendall tau-b) and linear (Pearson) correlations, Fisher z
stabilisation, dummy-coded fixed-effects OLS with t-test significance, paired
bootstrap comparison against the HP baseline, and top-k accuracy curves.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betainc

from .candidates import CandidateKind
from .exceptions import NumericalError

_Z_CLAMP = 1e-12


@dataclass
class AnalysisRecord:
    """One correlation cell: (dataset, classifier, metric, candidate) -> r."""

    dataset: str
    classifier: str
    metric: str
    candidate: str
    r: float
    n: int
    z: float = float("nan")
    p_value: float = float("nan")
    diff_p_value: float = float("nan")
    marker: str = ""

    def __post_init__(self):
        if not abs(self.r) <= 1 + _Z_CLAMP:
            raise ValueError(f"correlation {self.r} outside [-1, 1]")


# ---------------------------------------------------------------------------
# correlations


def _count_inversions(values):
    """Pairs ``i < j`` with ``values[i] > values[j]`` (ties excluded).

    Bottom-up merge sort, vectorised across blocks: at each width the left
    blocks are searched with keys offset by their pair id.
    """
    _, arr = np.unique(np.asarray(values), return_inverse=True)
    arr = arr.astype(np.int64).ravel()
    n = arr.size
    pos = np.arange(n)
    inversions = 0
    width = 1
    while width < n:
        block = pos // width
        pair = block // 2
        right = (block % 2) == 1
        key = pair * n + arr
        left_keys = key[~right]
        right_keys = key[right]
        right_pair = pair[right]
        not_greater = np.searchsorted(left_keys, right_keys, side="right")
        pair_end = np.searchsorted(left_keys, (right_pair + 1) * n, side="left")
        inversions += int((pair_end - not_greater).sum())
        arr = np.sort(key) - pair * n
        width *= 2
    return inversions


def _tie_pairs(*cols):
    if len(cols) == 1:
        _, counts = np.unique(cols[0], return_counts=True)
    else:
        _, counts = np.unique(np.column_stack(cols), axis=0, return_counts=True)
    counts = counts.astype(np.int64)
    return int((counts * (counts - 1) // 2).sum())


def kendall_tau(a, b):
    """Kendall tau-b with tie correction in O(n log n).

    Raises ``ValueError`` when either input is constant (tau undefined).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs must be finite")
    n = a.size
    n0 = n * (n - 1) // 2
    ties_a = _tie_pairs(a)
    ties_b = _tie_pairs(b)
    ties_ab = _tie_pairs(a, b)
    if ties_a == n0 or ties_b == n0:
        raise ValueError("Kendall tau is undefined for a constant input")
    order = np.lexsort((b, a))
    discordant = _count_inversions(b[order])
    concordant = n0 - ties_a - ties_b + ties_ab - discordant
    tau = (concordant - discordant) / math.sqrt((n0 - ties_a) * (n0 - ties_b))
    return float(min(1.0, max(-1.0, tau)))


def pearson(a, b):
    """Product-moment correlation via the two-pass centred formula."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two observations")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise ValueError("Pearson correlation is undefined for zero variance")
    return float(min(1.0, max(-1.0, float(da @ db) / (sa * sb))))


def fisher_z(r, return_flag=False):
    """``atanh(r)``; values within 1e-12 of +/-1 are clamped and flagged."""
    arr = np.asarray(r, dtype=np.float64)
    if np.any(np.abs(arr) > 1 + _Z_CLAMP) or np.any(np.isnan(arr)):
        raise ValueError("correlation must lie in [-1, 1]")
    flag = np.abs(arr) >= 1 - _Z_CLAMP
    z = np.arctanh(np.clip(arr, -(1 - _Z_CLAMP), 1 - _Z_CLAMP))
    if np.any(flag):
        warnings.warn("correlation at +/-1 clamped before Fisher z", RuntimeWarning, stacklevel=2)
    if arr.ndim == 0:
        z, flag = float(z), bool(flag)
    return (z, flag) if return_flag else z


CORRELATIONS = {"kendall": kendall_tau, "pearson": pearson}


# ---------------------------------------------------------------------------
# regression


def t_cdf(t, df):
    """Student t CDF through the regularised incomplete beta function."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    t = np.asarray(t, dtype=np.float64)
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    out = np.where(t >= 0, 1.0 - tail, tail)
    return float(out) if out.ndim == 0 else out


def significance_stars(p):
    if not p < 0.1:
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*"


@dataclass
class RegressionResult:
    names: list
    estimates: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    stars: list
    r2: float
    adj_r2: float
    rmse: float
    n_obs: int
    df_resid: int
    residuals: np.ndarray = field(repr=False, default=None)

    def coef(self, name):
        return float(self.estimates[self.names.index(name)])

    def to_rows(self, label=None):
        rows = []
        for i, name in enumerate(self.names):
            rows.append(
                {
                    "model": label or "",
                    "term": name,
                    "estimate": float(self.estimates[i]),
                    "std_error": float(self.std_errors[i]),
                    "t_value": float(self.t_values[i]),
                    "p_value": float(self.p_values[i]),
                    "stars": self.stars[i],
                }
            )
        for stat in ("r2", "adj_r2", "rmse", "n_obs"):
            rows.append(
                {
                    "model": label or "",
                    "term": stat,
                    "estimate": float(getattr(self, stat)),
                    "std_error": float("nan"),
                    "t_value": float("nan"),
                    "p_value": float("nan"),
                    "stars": "",
                }
            )
        return rows

    def to_dict(self):
        d = asdict(self)
        d.pop("residuals")
        for k in ("estimates", "std_errors", "t_values", "p_values"):
            d[k] = [float(v) for v in d[k]]
        return d


def ols(X, y, names=None):
    """Least squares with classical standard errors and two-sided t-test p-values.

    ``X`` must already contain any intercept column. Rank deficiency and
    ``n <= p`` raise :class:`NumericalError`.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if n <= p:
        raise NumericalError(f"{n} observations cannot identify {p} parameters")
    if np.linalg.matrix_rank(X) < p:
        raise NumericalError("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    df = n - p
    sigma2 = rss / df
    XtX_inv = np.linalg.inv(X.T @ X)
    se = np.sqrt(np.clip(np.diag(XtX_inv) * sigma2, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / np.where(se > 0, se, 1.0), np.where(beta == 0, 0.0, np.inf * np.sign(beta)))
    pvals = 2.0 * (1.0 - t_cdf(np.abs(t), df))
    pvals = np.where(np.isinf(t), 0.0, pvals)
    tss = float(((y - y.mean()) ** 2).sum())
    has_intercept = np.any(np.all(X == 1.0, axis=0))
    if not has_intercept:
        tss = float((y**2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    k = p - 1 if has_intercept else p
    adj = 1.0 - (1.0 - r2) * (n - (1 if has_intercept else 0)) / df if tss > 0 else 0.0
    del k
    return RegressionResult(
        names=names,
        estimates=beta,
        std_errors=se,
        t_values=t,
        p_values=pvals,
        stars=[significance_stars(pv) for pv in pvals],
        r2=float(r2),
        adj_r2=float(adj),
        rmse=math.sqrt(sigma2),
        n_obs=n,
        df_resid=df,
        residuals=resid,
    )


def _levels(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def dummy_design(columns, baselines, numeric=None):
    """Intercept + treatment-coded factors (+ numeric covariates).

    Parameters
    ----------
    columns : dict of name -> sequence
        Categorical factors; levels ordered by first appearance.
    baselines : dict of name -> level
        Reference level per factor (defaults to the first level seen).
    numeric : dict of name -> sequence, optional

    Returns
    -------
    X : ndarray, names : list of str
    """
    n = len(next(iter(columns.values()))) if columns else len(next(iter(numeric.values())))
    X = [np.ones(n)]
    names = ["(Intercept)"]
    for name, vals in (numeric or {}).items():
        X.append(np.asarray(vals, dtype=np.float64))
        names.append(name)
    for factor, vals in columns.items():
        vals = [str(v) for v in vals]
        levels = _levels(vals)
        base = str(baselines.get(factor, levels[0])) if baselines else levels[0]
        if base not in levels:
            raise ValueError(f"baseline {base!r} not present for factor {factor!r}")
        for lev in levels:
            if lev == base:
                continue
            X.append(np.array([1.0 if v == lev else 0.0 for v in vals]))
            names.append(f"{factor}[{lev}]")
    return np.column_stack(X), names


DEFAULT_BASELINES = {"candidate": "HP", "classifier": "ecc", "metric": "em"}


def _record_field(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


def ols_fixed_effects(records, baselines=None, factors=("candidate", "dataset", "classifier")):
    """Fixed-effects model of Fisher-z correlations on dummy-coded factors.

    The dataset baseline defaults to the first dataset seen; candidate and
    classifier default to HP and ECC. Every listed factor needs at least two
    levels.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    base = dict(DEFAULT_BASELINES)
    base.update(baselines or {})
    cols = {f: [str(_record_field(r, f)) for r in records] for f in factors}
    for f, vals in cols.items():
        if len(set(vals)) < 2:
            raise ValueError(f"factor {f!r} has fewer than two levels")
        if f in base and str(base[f]) not in vals:
            base.pop(f)
    y = fisher_z(np.array([_record_field(r, "r") for r in records], dtype=np.float64))
    X, names = dummy_design(cols, base)
    return ols(X, y, names)


DATA_FEATURES = {
    "label_count": "n_labels",
    "label_comb": "distinct_combinations",
    "label_card": "label_cardinality",
    "feature_count": "n_features",
}


def robustness_regression(records, data_features, factors=("classifier", "metric"), baselines=None):
    """Per-candidate OLS of Fisher-z correlations on dataset features and factors.

    Parameters
    ----------
    records : iterable of AnalysisRecord
    data_features : dict of dataset name -> DatasetStats (or a dict with the same keys)

    Returns
    -------
    dict of candidate tag -> RegressionResult
    """
    records = list(records)
    base = dict(DEFAULT_BASELINES)
    base.update(baselines or {})
    out = {}
    for cand in _levels([str(_record_field(r, "candidate")) for r in records]):
        rows = [r for r in records if str(_record_field(r, "candidate")) == cand]
        numeric = {}
        for label, attr in DATA_FEATURES.items():
            vals = []
            for r in rows:
                stats = data_features[_record_field(r, "dataset")]
                vals.append(float(stats[attr] if isinstance(stats, dict) else getattr(stats, attr)))
            numeric[label] = vals
        cols = {}
        for f in factors:
            vals = [str(_record_field(r, f)) for r in rows]
            if len(set(vals)) >= 2:
                cols[f] = vals
        b = {f: v for f, v in base.items() if f in cols and str(v) in cols[f]}
        y = fisher_z(np.array([_record_field(r, "r") for r in rows], dtype=np.float64))
        X, names = dummy_design(cols, b, numeric=numeric)
        out[cand] = ols(X, y, names)
    return out


# ---------------------------------------------------------------------------
# bootstrap comparisons and correlation tables


def bootstrap_correlations(score_columns, accuracy, method="kendall", n_boot=1000, seed=0):
    """Paired bootstrap distribution of correlations for several score columns.

    All columns share each resample of instances. Returns an array of shape
    ``(n_boot, n_columns)``; degenerate resamples (a constant vector) are NaN.
    """
    corr = CORRELATIONS[method]
    acc = np.asarray(accuracy, dtype=np.float64)
    cols = [np.asarray(c, dtype=np.float64) for c in score_columns]
    rng = np.random.default_rng(seed)
    n = acc.size
    out = np.full((n_boot, len(cols)), np.nan)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        for j, c in enumerate(cols):
            try:
                out[b, j] = corr(c[idx], acc[idx])
            except ValueError:
                pass
    return out


def bootstrap_p_value(samples, null=0.0):
    """Two-sided percentile bootstrap p-value for ``H0: statistic = null``."""
    s = np.asarray(samples, dtype=np.float64)
    s = s[~np.isnan(s)]
    if s.size == 0:
        return float("nan")
    below = np.count_nonzero(s <= null)
    above = np.count_nonzero(s >= null)
    return float(min(1.0, 2.0 * min(below, above) / s.size))


def significance_marker(diff, p):
    """Three-level marker: '+'/'-' repeated 1-3 times for p < 0.1/0.05/0.01."""
    n = len(significance_stars(p)) if p == p else 0
    if n == 0 or diff == 0:
        return ""
    return ("+" if diff > 0 else "-") * n


MIN_GROUP_SIZE = 10


def correlation_table(groups, method="kendall", candidates=None, baseline="HP", n_boot=1000, seed=0):
    """Correlation of each candidate with accuracy per group, with HP comparisons.

    Parameters
    ----------
    groups : dict
        ``(dataset, classifier, metric) -> {"scores": {kind: array}, "accuracy": array}``
        with arrays aligned over test instances.
    method : {"kendall", "pearson"}
    candidates : sequence, optional
        Defaults to the kinds present in each group.
    baseline : str
        Candidate used as reference for the significance markers.
    n_boot : int
        Paired bootstrap replicates; 0 skips significance testing.

    Returns
    -------
    list of AnalysisRecord
        ``p_value`` tests r = 0; ``diff_p_value`` and ``marker`` compare
        against the baseline candidate.
    """
    if method not in CORRELATIONS:
        raise ValueError(f"unknown correlation {method!r}")
    corr = CORRELATIONS[method]
    base_kind = str(CandidateKind.parse(baseline))
    seeds = np.random.SeedSequence(seed).spawn(len(groups))
    records = []
    for (key, group), ss in zip(groups.items(), seeds):
        dataset, classifier, metric = (str(k) for k in key)
        acc = np.asarray(group["accuracy"], dtype=np.float64)
        if acc.size < MIN_GROUP_SIZE:
            raise ValueError(f"group {key} has {acc.size} instances; need at least {MIN_GROUP_SIZE}")
        scores = {str(CandidateKind.parse(k)): np.asarray(v, dtype=np.float64) for k, v in group["scores"].items()}
        kinds = [str(CandidateKind.parse(k)) for k in candidates] if candidates else list(scores)
        ordered = ([base_kind] if base_kind in scores else []) + [k for k in kinds if k != base_kind]
        observed = {k: corr(scores[k], acc) for k in ordered}
        boot = None
        if n_boot:
            boot = bootstrap_correlations([scores[k] for k in ordered], acc, method, n_boot, ss.generate_state(1)[0])
        for j, k in enumerate(ordered):
            if k not in kinds:
                continue
            r = observed[k]
            rec = AnalysisRecord(dataset, classifier, metric, k, r, int(acc.size), z=fisher_z(r))
            if boot is not None:
                rec.p_value = bootstrap_p_value(boot[:, j])
                if k != base_kind and base_kind in observed:
                    diff = boot[:, j] - boot[:, 0]
                    rec.diff_p_value = bootstrap_p_value(diff)
                    rec.marker = significance_marker(r - observed[base_kind], rec.diff_p_value)
            records.append(rec)
    return records


def topk_accuracy_curve(scores, accuracies):
    """Mean accuracy of the ``k`` highest-scoring instances for ``k = 1..n``.

    Ties in score keep instance order.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    a = np.asarray(accuracies, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty input")
    if s.size != a.size:
        raise ValueError(f"length mismatch: {s.size} vs {a.size}")
    order = np.lexsort((np.arange(s.size), -s))
    means = np.cumsum(a[order]) / np.arange(1, s.size + 1)
    return [(k + 1, float(m)) for k, m in enumerate(means)]
