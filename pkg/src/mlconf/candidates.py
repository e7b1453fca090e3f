"""Candidate confidence functions of a labelset distribution.

Each candidate maps a categorical distribution over ``K`` states (``K = 2**L``
for labelsets) to a score in ``[0, 1]`` that is 0 on the uniform distribution
and 1 on any point mass. All functions are vectorised over the last axis, so a
``(n, K)`` stack of distributions yields ``n`` scores. The formulas only use
``K``, which makes them usable on arbitrary categorical distributions too.
"""

from __future__ import annotations

import enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import NumericalError
from .labelsets import LabelsetDistribution

_CLAMP_TOL = 1e-12


class CandidateKind(str, enum.Enum):
    HP = "HP"  # high probability
    TG = "TG"  # top gap
    SE = "SE"  # Shannon entropy
    CE = "CE"  # collision entropy
    ME = "ME"  # min entropy
    GI = "GI"  # Gini impurity
    CS = "CS"  # chi-squared statistic

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"unknown candidate {value!r}") from None

    def __str__(self):
        return self.value


ALL_CANDIDATES = tuple(CandidateKind)


def _probs(d):
    if isinstance(d, LabelsetDistribution):
        return d.probs
    P = np.asarray(d, dtype=np.float64)
    if P.ndim == 0 or P.shape[-1] < 2:
        raise ValueError("a distribution needs at least two states")
    return P


def _finish(value):
    """Clamp scores within tolerance of [0, 1]; anything further is an error."""
    value = np.asarray(value, dtype=np.float64)
    if np.any(value < -_CLAMP_TOL) or np.any(value > 1 + _CLAMP_TOL) or not np.all(np.isfinite(value)):
        raise NumericalError("candidate score outside [0, 1]; the distribution is probably not normalised")
    value = np.clip(value, 0.0, 1.0)
    return float(value) if value.ndim == 0 else value


def _plogp(P):
    # 0 log 0 := 0 by skipping zero entries
    out = np.zeros_like(P)
    nz = P > 0
    out[nz] = P[nz] * np.log(P[nz])
    return out


def raw_statistic(d, kind):
    """Unnormalised statistic behind a candidate (natural log for entropies).

    ``TG`` has no separate raw form and returns the top gap itself.
    """
    kind = CandidateKind.parse(kind)
    P = _probs(d)
    K = P.shape[-1]
    if kind in (CandidateKind.HP, CandidateKind.TG):
        value = P.max(axis=-1) if kind is CandidateKind.HP else _top_gap(P)
    elif kind is CandidateKind.SE:
        value = -_plogp(P).sum(axis=-1)
    elif kind is CandidateKind.CE:
        value = -np.log((P**2).sum(axis=-1))
    elif kind is CandidateKind.ME:
        value = -np.log(P.max(axis=-1))
    elif kind is CandidateKind.GI:
        value = (P * (1.0 - P)).sum(axis=-1)
    else:
        value = (((P - 1.0 / K) ** 2) / (1.0 / K)).sum(axis=-1)
    value = np.asarray(value, dtype=np.float64)
    return float(value) if value.ndim == 0 else value


def _top_gap(P):
    # multiset reading: a duplicated maximum gives a gap of zero
    top2 = -np.partition(-P, 1, axis=-1)[..., :2]
    return top2[..., 0] - top2[..., 1]


def c_hp(d):
    P = _probs(d)
    K = P.shape[-1]
    return _finish((K * P.max(axis=-1) - 1.0) / (K - 1.0))


def c_tg(d):
    return _finish(_top_gap(_probs(d)))


def c_se(d):
    P = _probs(d)
    return _finish(1.0 + _plogp(P).sum(axis=-1) / np.log(P.shape[-1]))


def c_ce(d):
    P = _probs(d)
    return _finish(1.0 + np.log((P**2).sum(axis=-1)) / np.log(P.shape[-1]))


def c_me(d):
    P = _probs(d)
    return _finish(1.0 + np.log(P.max(axis=-1)) / np.log(P.shape[-1]))


def c_gi(d):
    P = _probs(d)
    q = 1.0 / P.shape[-1]
    return _finish(1.0 - (P * (1.0 - P)).sum(axis=-1) / (1.0 - q))


def c_cs(d):
    P = _probs(d)
    q = 1.0 / P.shape[-1]
    return _finish(((P - q) ** 2).sum(axis=-1) / (1.0 - q))


CANDIDATE_FUNCTIONS = {
    CandidateKind.HP: c_hp,
    CandidateKind.TG: c_tg,
    CandidateKind.SE: c_se,
    CandidateKind.CE: c_ce,
    CandidateKind.ME: c_me,
    CandidateKind.GI: c_gi,
    CandidateKind.CS: c_cs,
}


def score(d, kind):
    return CANDIDATE_FUNCTIONS[CandidateKind.parse(kind)](d)


def score_all(d, kinds=ALL_CANDIDATES):
    """Map each requested candidate kind to its score (or score vector)."""
    return {CandidateKind.parse(k): score(d, k) for k in kinds}


def score_matrix(P, kinds=ALL_CANDIDATES):
    """Scores for a ``(n, K)`` stack as an ``(n, len(kinds))`` array."""
    P = np.atleast_2d(_probs(P))
    return np.column_stack([np.atleast_1d(score(P, k)) for k in kinds])


class CandidateScorer(TransformerMixin, BaseEstimator):
    """Transform joint distributions into candidate confidence scores.

    Stateless: ``fit`` only records the input width. Rows of ``X`` are
    probability vectors over the labelset powerset.

    Parameters
    ----------
    kinds : sequence of CandidateKind or str, default all seven
    """

    def __init__(self, kinds=ALL_CANDIDATES):
        self.kinds = kinds

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.kinds_ = tuple(CandidateKind.parse(k) for k in self.kinds)
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        kinds = getattr(self, "kinds_", None) or tuple(CandidateKind.parse(k) for k in self.kinds)
        return score_matrix(X, kinds)

    def get_feature_names_out(self, input_features=None):
        return np.array([str(CandidateKind.parse(k)) for k in self.kinds], dtype=object)
