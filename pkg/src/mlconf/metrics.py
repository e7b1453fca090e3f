"""Labelset similarity metrics and expected accuracy under a joint distribution."""

from __future__ import annotations

import enum

import numpy as np

from .labelsets import (
    as_distribution,
    as_labelset,
    batch_marginals,
    check_label_count,
    index_to_labelset,
    label_count_of,
    labelset_to_index,
)

# cap on the number of similarity-matrix cells materialised at once
_CHUNK_CELLS = 1 << 22
# brute-force cross-check of fast paths is skipped above this size
_ASSERT_MAX_L = 10


class Metric(str, enum.Enum):
    HAMMING = "hs"
    EXACT_MATCH = "em"
    JACCARD = "js"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "hamming": cls.HAMMING,
            "exact": cls.EXACT_MATCH,
            "exact_match": cls.EXACT_MATCH,
            "jaccard": cls.JACCARD,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown metric {value!r}; expected one of hs, em, js") from None

    def __str__(self):
        return self.value


ALL_METRICS = (Metric.HAMMING, Metric.EXACT_MATCH, Metric.JACCARD)


def _popcount(x):
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros(x.shape, dtype=np.int64)
    while np.any(x):
        out += x & 1
        x = x >> 1
    return out


def _similarity_from_indices(metric, a, b, L):
    """Similarity for broadcastable integer index arrays ``a`` and ``b``."""
    if metric is Metric.EXACT_MATCH:
        return np.asarray(a == b, dtype=np.float64)
    if metric is Metric.HAMMING:
        return (L - _popcount(a ^ b)) / L
    inter = _popcount(a & b)
    union = _popcount(a | b)
    # 0/0 (both labelsets empty) counts as a perfect match
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


def similarity(metric, a, b):
    """Similarity of two labelsets: HS, EM or JS (with JS(0, 0) = 1)."""
    metric = Metric.parse(metric)
    a = as_labelset(a)
    b = as_labelset(b, len(a))
    val = _similarity_from_indices(metric, labelset_to_index(a), labelset_to_index(b), len(a))
    return float(val)


def similarity_matrix(metric, L):
    """``S[i, j] = similarity(index i, index j)`` for all labelset pairs."""
    metric = Metric.parse(metric)
    L = check_label_count(L)
    idx = np.arange(1 << L, dtype=np.int64)
    return _similarity_from_indices(metric, idx[:, None], idx[None, :], L)


def expected_accuracy_all(P, metric):
    """Expected accuracy of every candidate labelset.

    Parameters
    ----------
    P : array-like, shape (2**L,) or (n, 2**L)
        Joint distribution(s).
    metric : Metric or str

    Returns
    -------
    ndarray of the same shape as ``P``; entry ``k`` is ``E_S`` of labelset ``k``.
    """
    metric = Metric.parse(metric)
    P = np.asarray(P, dtype=np.float64)
    squeeze = P.ndim == 1
    P = np.atleast_2d(P)
    K = P.shape[1]
    L = label_count_of(K)
    if metric is Metric.EXACT_MATCH:
        out = P.copy()
    else:
        out = np.empty_like(P)
        idx = np.arange(K, dtype=np.int64)
        step = max(1, _CHUNK_CELLS // K)
        for start in range(0, K, step):
            cand = idx[start : start + step]
            S = _similarity_from_indices(metric, cand[:, None], idx[None, :], L)
            out[:, start : start + step] = P @ S.T
    return out[0] if squeeze else out


def expected_accuracy(d, candidate, metric):
    """``sum_j P(y_j) * S(candidate, y_j)`` over the whole powerset."""
    metric = Metric.parse(metric)
    d = as_distribution(d)
    candidate = as_labelset(candidate, d.L)
    idx = np.arange(1 << d.L, dtype=np.int64)
    S = _similarity_from_indices(metric, labelset_to_index(candidate), idx, d.L)
    return float(np.clip(S @ d.probs, 0.0, 1.0))


def _fast_prediction_indices(P, metric):
    L = label_count_of(P.shape[1])
    if metric is Metric.EXACT_MATCH:
        return np.argmax(P, axis=1)
    # marginal mode; a marginal of exactly 0.5 resolves to 0 (lower index)
    bits = (batch_marginals(P) > 0.5).astype(np.int64)
    return bits @ (1 << np.arange(L - 1, -1, -1, dtype=np.int64))


def best_prediction_indices(P, metric, method="auto"):
    """Metric-optimal labelset index and its expected accuracy for each row of ``P``.

    ``method="auto"`` uses the mode for EM and the per-label marginal mode for
    HS, and brute force for JS. ``method="brute"`` always enumerates all
    candidates. Ties resolve to the lowest index.
    """
    metric = Metric.parse(metric)
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if method not in ("auto", "brute"):
        raise ValueError(f"method must be 'auto' or 'brute', got {method!r}")
    rows = np.arange(P.shape[0])
    if method == "brute" or metric is Metric.JACCARD:
        E = expected_accuracy_all(P, metric)
        best = np.argmax(E, axis=1)
        return best, E[rows, best]
    best = _fast_prediction_indices(P, metric)
    if metric is Metric.EXACT_MATCH:
        value = P[rows, best]
    else:
        M = batch_marginals(P)
        L = M.shape[1]
        shifts = np.arange(L - 1, -1, -1, dtype=np.int64)
        bits = (best[:, None] >> shifts) & 1
        value = np.where(bits == 1, M, 1.0 - M).mean(axis=1)
    if __debug__ and P.shape[1] <= (1 << _ASSERT_MAX_L):
        E = expected_accuracy_all(P, metric)
        assert np.allclose(E.max(axis=1), value, rtol=0, atol=1e-9), "fast path disagrees with brute force"
    return best, np.clip(value, 0.0, 1.0)


def best_prediction(d, metric, method="auto"):
    """Labelset maximising expected accuracy under ``metric``, with that accuracy."""
    d = as_distribution(d)
    best, value = best_prediction_indices(d.probs[None, :], metric, method=method)
    return index_to_labelset(int(best[0]), d.L), float(value[0])


def realized_accuracy(metric, truths, preds):
    """Per-instance similarity for aligned ``(n, L)`` 0/1 arrays."""
    metric = Metric.parse(metric)
    truths = np.asarray(truths)
    preds = np.asarray(preds)
    if truths.ndim != 2 or truths.shape != preds.shape:
        raise ValueError(f"shape mismatch: {truths.shape} vs {preds.shape}")
    L = truths.shape[1]
    t = truths.astype(bool)
    p = preds.astype(bool)
    if metric is Metric.EXACT_MATCH:
        return np.all(t == p, axis=1).astype(np.float64)
    if metric is Metric.HAMMING:
        return (t == p).sum(axis=1) / L
    inter = (t & p).sum(axis=1)
    union = (t | p).sum(axis=1)
    return np.where(union == 0, 1.0, inter / np.maximum(union, 1))


def dataset_accuracy(metric, truths, preds):
    """Mean similarity over aligned lists of labelsets."""
    truths = list(truths)
    preds = list(preds)
    if not truths:
        raise ValueError("need at least one labelset pair")
    if len(truths) != len(preds):
        raise ValueError(f"length mismatch: {len(truths)} truths vs {len(preds)} predictions")
    L = len(as_labelset(truths[0]))
    T = np.array([as_labelset(y, L) for y in truths])
    Q = np.array([as_labelset(y, L) for y in preds])
    return float(realized_accuracy(metric, T, Q).mean())
