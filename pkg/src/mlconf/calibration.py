"""Calibrating confidence scores into predicted expected accuracy.

EM and HS accuracies are modelled with ridge binomial regression (one trial
for EM, ``L`` trials for HS). JS is reconstructed from a four-class ridge
multinomial regression over per-instance TP/TN/FP/FN counts. The linear
predictor is

    sum_c beta_{c,d} * score_c  +  dataset_d  +  classifier_k

where the slopes are per candidate and per dataset (penalised) and the
dataset and classifier biases are unpenalised. The baseline classifier
(ECC when present) has no bias column.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import _glm
from .candidates import CandidateKind
from .data import split_indices
from .exceptions import DataError, NumericalError
from .labelsets import as_labelset
from .metrics import Metric, _popcount

logger = logging.getLogger(__name__)

CLASSES = ("TP", "TN", "FP", "FN")
_REF_CLASS = CLASSES.index("TN")
DEFAULT_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
BASELINE_CLASSIFIER = "ecc"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def jaccard(self):
        denom = self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else self.tp / denom

    def as_tuple(self):
        return (self.tp, self.tn, self.fp, self.fn)


def confusion_counts(y, y_hat):
    y = as_labelset(y)
    y_hat = as_labelset(y_hat, len(y))
    tp = sum(a & b for a, b in zip(y, y_hat))
    fp = sum((1 - a) & b for a, b in zip(y, y_hat))
    fn = sum(a & (1 - b) for a, b in zip(y, y_hat))
    return ConfusionCounts(tp, len(y) - tp - fp - fn, fp, fn)


def confusion_matrix_from_indices(truth, pred, L):
    """``(n, 4)`` TP/TN/FP/FN counts from labelset index arrays."""
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    tp = _popcount(t & p)
    fp = _popcount(p) - tp
    fn = _popcount(t) - tp
    return np.column_stack([tp, L - tp - fp - fn, fp, fn])


def jaccard_from_class_proba(P):
    """JS reconstruction ``p_TP / (p_TP + p_FP + p_FN)`` row-wise."""
    P = np.asarray(P, dtype=np.float64)
    return P[..., 0] / (P[..., 0] + P[..., 2] + P[..., 3])


def calibration_targets(metric, truth, pred, L):
    """Response for a metric's calibrator from labelset index arrays.

    Returns ``(successes, trials)`` for EM/HS and the ``(n, 4)`` count matrix
    for JS.
    """
    metric = Metric.parse(metric)
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if metric is Metric.EXACT_MATCH:
        return (t == p).astype(np.float64), np.ones(t.size)
    if metric is Metric.HAMMING:
        return (L - _popcount(t ^ p)).astype(np.float64), np.full(t.size, float(L))
    return confusion_matrix_from_indices(t, p, L).astype(np.float64)


def realized_from_targets(metric, targets):
    metric = Metric.parse(metric)
    if metric is Metric.JACCARD:
        C = np.asarray(targets, dtype=np.float64)
        denom = C[:, 0] + C[:, 2] + C[:, 3]
        return np.where(denom == 0, 1.0, C[:, 0] / np.maximum(denom, 1))
    s, t = targets
    return np.asarray(s, dtype=np.float64) / np.asarray(t, dtype=np.float64)


# ---------------------------------------------------------------------------
# calibrators


def _as_ids(ids, n, what):
    if ids is None:
        return np.array(["_"] * n, dtype=object)
    if isinstance(ids, str):
        return np.array([ids] * n, dtype=object)
    arr = np.asarray([str(v) for v in ids], dtype=object)
    if arr.size != n:
        raise ValueError(f"{what} ids have length {arr.size}, expected {n}")
    return arr


class _Calibrator(BaseEstimator):
    def __init__(self, lam=0.0, max_iter=100, tol=1e-8):
        self.lam = lam
        self.max_iter = max_iter
        self.tol = tol

    def _check_X(self, X):
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        if X.ndim == 1:
            X = X[:, None]
        return X

    def _learn_levels(self, X, datasets, classifiers):
        n = X.shape[0]
        ds = _as_ids(datasets, n, "dataset")
        cl = _as_ids(classifiers, n, "classifier")
        self.datasets_ = sorted(set(ds))
        levels = sorted(set(cl))
        self.baseline_classifier_ = BASELINE_CLASSIFIER if BASELINE_CLASSIFIER in levels else levels[0]
        self.classifiers_ = levels
        self.n_features_in_ = X.shape[1]
        return ds, cl

    def _design(self, X, datasets, classifiers):
        """Design matrix and penalty mask; unseen factor levels raise."""
        n, k = X.shape
        if k != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} score columns, got {k}")
        ds = _as_ids(datasets, n, "dataset")
        cl = _as_ids(classifiers, n, "classifier")
        for ids, known, what in ((ds, self.datasets_, "dataset"), (cl, self.classifiers_, "classifier")):
            unseen = sorted(set(ids) - set(known))
            if unseen:
                raise DataError(f"{what} level(s) {unseen} were not seen when fitting")
        d_ind = np.column_stack([(ds == d).astype(np.float64) for d in self.datasets_])
        slopes = (X[:, :, None] * d_ind[:, None, :]).reshape(n, k * len(self.datasets_))
        others = [c for c in self.classifiers_ if c != self.baseline_classifier_]
        c_ind = [(cl == c).astype(np.float64) for c in others]
        design = np.column_stack([slopes, d_ind, *c_ind]) if c_ind else np.column_stack([slopes, d_ind])
        penalized = np.r_[np.ones(slopes.shape[1]), np.zeros(d_ind.shape[1] + len(c_ind))]
        return design, penalized

    def _check_lam(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lam must be a finite non-negative number")

    def _record(self, res):
        if not np.all(np.isfinite(res.coef)):
            raise NumericalError("calibrator fit produced non-finite coefficients")
        self.coef_ = res.coef
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        self.objective_ = res.objective
        self.objective_path_ = res.objective_path
        if not res.converged:
            logger.debug("calibrator stopped after %d iterations, |grad|=%.3g", res.n_iter, res.grad_norm)


class BinomialCalibrator(_Calibrator):
    """Ridge binomial calibrator for EM (trials = 1) and HS (trials = L).

    ``X`` holds one column per candidate score. ``datasets`` and
    ``classifiers`` give the factor level of every row.
    """

    def fit(self, X, successes, trials=1, datasets=None, classifiers=None):
        self._check_lam()
        X = self._check_X(X)
        s = np.asarray(successes, dtype=np.float64).ravel()
        t = np.broadcast_to(np.asarray(trials, dtype=np.float64), s.shape).copy()
        if s.size != X.shape[0]:
            raise ValueError("successes and X have different lengths")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite targets")
        if np.any(s < 0) or np.any(s > t) or np.any(t <= 0):
            raise ValueError("need 0 <= successes <= trials and trials > 0")
        self._learn_levels(X, datasets, classifiers)
        D, pen = self._design(X, datasets, classifiers)
        self.penalized_ = pen
        self._record(_glm.fit_binomial(D, s, t, self.lam, pen, self.max_iter, self.tol))
        return self

    def decision_function(self, X, datasets=None, classifiers=None):
        check_is_fitted(self, "coef_")
        D, _ = self._design(self._check_X(X), datasets, classifiers)
        return D @ self.coef_

    def predict(self, X, datasets=None, classifiers=None):
        """Predicted expected accuracy (success probability)."""
        eta = self.decision_function(X, datasets, classifiers)
        return 1.0 / (1.0 + np.exp(-eta))

    def loss(self, X, successes, trials=1, datasets=None, classifiers=None):
        """Mean unpenalised negative log-likelihood per row (binomial constant dropped)."""
        eta = self.decision_function(X, datasets, classifiers)
        s = np.asarray(successes, dtype=np.float64).ravel()
        t = np.broadcast_to(np.asarray(trials, dtype=np.float64), s.shape)
        return float((t * np.logaddexp(0.0, eta) - s * eta).mean())


class MultinomialCalibrator(_Calibrator):
    """Ridge four-class multinomial calibrator over TP/TN/FP/FN counts (TN is reference)."""

    def fit(self, X, counts, datasets=None, classifiers=None):
        self._check_lam()
        X = self._check_X(X)
        C = np.asarray(counts, dtype=np.float64)
        if C.ndim != 2 or C.shape != (X.shape[0], len(CLASSES)):
            raise ValueError(f"counts must have shape ({X.shape[0]}, 4)")
        if not np.all(np.isfinite(C)) or np.any(C < 0):
            raise ValueError("counts must be finite and non-negative")
        self._learn_levels(X, datasets, classifiers)
        D, pen = self._design(X, datasets, classifiers)
        self.penalized_ = pen
        self._record(_glm.fit_multinomial(D, C, self.lam, pen, _REF_CLASS, self.max_iter, self.tol))
        return self

    def predict_class_proba(self, X, datasets=None, classifiers=None):
        """``(n, 4)`` class probabilities in TP, TN, FP, FN order."""
        check_is_fitted(self, "coef_")
        D, _ = self._design(self._check_X(X), datasets, classifiers)
        return _glm.multinomial_proba(D, self.coef_, _REF_CLASS)

    def predict(self, X, datasets=None, classifiers=None):
        """Predicted expected Jaccard similarity."""
        return jaccard_from_class_proba(self.predict_class_proba(X, datasets, classifiers))

    def loss(self, X, counts, datasets=None, classifiers=None):
        P = self.predict_class_proba(X, datasets, classifiers)
        C = np.asarray(counts, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logP = np.log(P)
        return float(-(np.where(C > 0, C * logP, 0.0)).sum(axis=1).mean())


def make_calibrator(metric, lam=0.0, **kw):
    if Metric.parse(metric) is Metric.JACCARD:
        return MultinomialCalibrator(lam=lam, **kw)
    return BinomialCalibrator(lam=lam, **kw)


def _fit(model, X, targets, datasets, classifiers):
    if isinstance(model, MultinomialCalibrator):
        return model.fit(X, targets, datasets, classifiers)
    s, t = targets
    return model.fit(X, s, t, datasets, classifiers)


def _loss(model, X, targets, datasets, classifiers):
    if isinstance(model, MultinomialCalibrator):
        return model.loss(X, targets, datasets, classifiers)
    s, t = targets
    return model.loss(X, s, t, datasets, classifiers)


def _take(targets, idx):
    if isinstance(targets, tuple):
        return tuple(np.asarray(t)[idx] for t in targets)
    return np.asarray(targets)[idx]


def fit_binomial_calibrator(features, successes, trials, lam, datasets=None, classifiers=None):
    return BinomialCalibrator(lam=lam).fit(features, successes, trials, datasets, classifiers)


def fit_multinomial_calibrator(features, counts, lam, datasets=None, classifiers=None):
    return MultinomialCalibrator(lam=lam).fit(features, counts, datasets, classifiers)


def predict_expected_accuracy(model, scores, dataset=None, classifier=None):
    """Expected accuracy for one instance (1-D scores) or a batch (2-D)."""
    X = np.asarray(scores, dtype=np.float64)
    single = X.ndim <= 1 and (X.ndim == 0 or model.n_features_in_ == X.size)
    X2 = X.reshape(1, -1) if single else X
    out = model.predict(X2, dataset, classifier)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# cross-validation and replicates


def stratified_folds(groups, k, rng):
    """Fold id per row, balancing each group across folds."""
    groups = np.asarray([str(g) for g in groups], dtype=object)
    n = groups.size
    if n < k:
        raise ValueError(f"cannot form {k} folds from {n} rows")
    perm = rng.permutation(n)
    fold = np.empty(n, dtype=np.int64)
    offset = 0
    for g in sorted(set(groups)):
        members = perm[groups[perm] == g]
        fold[members] = (np.arange(members.size) + offset) % k
        offset += members.size
    return fold


def cross_validate_lambda(metric, X, targets, datasets=None, classifiers=None, k=10, grid=DEFAULT_GRID, seed=0):
    """Ridge penalty with the lowest mean held-out NLL over ``k`` folds.

    Folds are stratified by (dataset, classifier). Ties, up to a relative
    1e-12, go to the smaller penalty.

    Returns
    -------
    best : float
    losses : dict of lam -> mean held-out loss
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty lambda grid")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    ds = _as_ids(datasets, n, "dataset")
    cl = _as_ids(classifiers, n, "classifier")
    if len(grid) == 1:
        return grid[0], {grid[0]: float("nan")}
    rng = np.random.default_rng(seed)
    fold = stratified_folds([f"{a}|{b}" for a, b in zip(ds, cl)], k, rng)
    losses = {}
    for lam in grid:
        total = 0.0
        for f in range(k):
            test = fold == f
            train = ~test
            if not test.any() or not train.any():
                raise ValueError("degenerate fold")
            model = make_calibrator(metric, lam)
            try:
                _fit(model, X[train], _take(targets, train), ds[train], cl[train])
                total += _loss(model, X[test], _take(targets, test), ds[test], cl[test]) * test.sum()
            except DataError as exc:
                raise ValueError(f"degenerate fold: {exc}") from None
        losses[lam] = total / n
    finite = {lam: v for lam, v in losses.items() if math.isfinite(v)}
    if not finite:
        raise NumericalError("every lambda produced a non-finite held-out loss")
    best_value = min(finite.values())
    for lam in grid:
        if lam in finite and finite[lam] <= best_value + 1e-12 * max(1.0, abs(best_value)):
            return lam, losses
    raise AssertionError("unreachable")


@dataclass
class ReplicateResult:
    replicate: int
    lam: float
    test_index: np.ndarray
    predicted: np.ndarray
    realized: np.ndarray


def replicate_experiment(
    metric,
    X,
    targets,
    datasets=None,
    classifiers=None,
    n_replicates=20,
    seed=0,
    fraction=0.5,
    grid=DEFAULT_GRID,
    k=10,
):
    """Repeated split / cross-validate / fit / predict runs of one calibrator.

    Each replicate draws a fresh ``fraction`` train split and its own CV folds
    from seeds spawned off ``seed``, so results depend only on the master seed.
    """
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    ds = _as_ids(datasets, n, "dataset")
    cl = _as_ids(classifiers, n, "classifier")
    realized_all = realized_from_targets(metric, targets)
    out = []
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(n_replicates)):
        split_seed, cv_seed = ss.generate_state(2)
        train, test = split_indices(n, fraction, np.random.default_rng(split_seed))
        lam, _ = cross_validate_lambda(
            metric, X[train], _take(targets, train), ds[train], cl[train], k=k, grid=grid, seed=int(cv_seed)
        )
        model = _fit(make_calibrator(metric, lam), X[train], _take(targets, train), ds[train], cl[train])
        pred = model.predict(X[test], ds[test], cl[test])
        out.append(ReplicateResult(r, lam, test, pred, realized_all[test]))
    return out


# ---------------------------------------------------------------------------
# interval tables and reliability curves


@dataclass
class IntervalRow:
    lower_bin: float
    upper_bin: float
    lower: float | None
    upper: float | None
    n_points: int
    n_replicates: int
    match: bool | None

    @property
    def populated(self):
        return self.n_points > 0


def bin_index(p, width):
    """Bin of half-open intervals ``(a, a + width]``; 0 falls in the first bin."""
    n_bins = int(round(1.0 / width))
    idx = np.ceil(np.round(np.asarray(p, dtype=np.float64) / width, 9)).astype(np.int64) - 1
    return np.clip(idx, 0, n_bins - 1)


def _check_width(width):
    n_bins = round(1.0 / width)
    if width <= 0 or abs(n_bins * width - 1.0) > 1e-9:
        raise ValueError("bin width must divide 1")
    return int(n_bins)


def _as_pairs(pairs):
    out = []
    for item in pairs:
        if isinstance(item, ReplicateResult):
            out.append((np.asarray(item.predicted, float), np.asarray(item.realized, float)))
        else:
            p, a = item
            out.append((np.asarray(p, float).ravel(), np.asarray(a, float).ravel()))
    return out


def interval_table(pairs, width=0.1):
    """95% interval across replicates of the per-bin realized accuracy mean.

    ``pairs`` holds one ``(predicted, realized)`` pair of arrays per
    replicate (or :class:`ReplicateResult` objects). Each bin row carries the
    2.5th and 97.5th percentiles (linear interpolation) of the replicate
    means and whether that interval lies inside the bin. Bins without points
    keep ``None`` values.
    """
    n_bins = _check_width(width)
    pairs = _as_pairs(pairs)
    per_bin = [[] for _ in range(n_bins)]
    counts = np.zeros(n_bins, dtype=np.int64)
    for pred, real in pairs:
        b = bin_index(pred, width)
        for j in np.unique(b):
            sel = b == j
            per_bin[j].append(float(real[sel].mean()))
            counts[j] += int(sel.sum())
    rows = []
    for j in range(n_bins):
        a, b = round(j * width, 10), round((j + 1) * width, 10)
        means = per_bin[j]
        if not means:
            rows.append(IntervalRow(a, b, None, None, 0, 0, None))
            continue
        lo, hi = np.percentile(means, [2.5, 97.5])
        match = bool(lo >= a - 1e-12 and hi <= b + 1e-12)
        rows.append(IntervalRow(a, b, float(lo), float(hi), int(counts[j]), len(means), match))
    return rows


@dataclass
class ReliabilityPoint:
    bin_center: float
    mean_predicted: float | None
    mean_realized: float | None
    band_lower: float | None
    band_upper: float | None
    n_points: int


def reliability_curve(pairs, width=0.1):
    """Pooled mean realized accuracy per predicted-accuracy bin with a 95% band.

    The band is the interval from :func:`interval_table`; a perfectly
    calibrated predictor sits on the diagonal.
    """
    pairs = _as_pairs(pairs)
    n_bins = _check_width(width)
    pred = np.concatenate([p for p, _ in pairs]) if pairs else np.empty(0)
    real = np.concatenate([a for _, a in pairs]) if pairs else np.empty(0)
    b = bin_index(pred, width)
    intervals = interval_table(pairs, width)
    out = []
    for j in range(n_bins):
        sel = b == j
        center = round((j + 0.5) * width, 10)
        if not sel.any():
            out.append(ReliabilityPoint(center, None, None, None, None, 0))
            continue
        row = intervals[j]
        out.append(
            ReliabilityPoint(
                center, float(pred[sel].mean()), float(real[sel].mean()), row.lower, row.upper, int(sel.sum())
            )
        )
    return out


def candidate_columns(kinds):
    return [str(CandidateKind.parse(k)) for k in kinds]
