"""Labelsets and exact joint distributions over the label powerset.

Index convention: label 1 is the most significant bit, so for ``L = 3`` the
labelset ``(0, 0, 1)`` has index 1 and ``(1, 1, 0)`` has index 6. Every file
format in the package uses this ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MAX_LABELS = 25

_NEG_TOL = 1e-12
_SUM_TOL = 1e-9


def check_label_count(L):
    """Validate a label count against the enumeration cap and return it as int."""
    if isinstance(L, (bool, np.bool_)) or int(L) != L:
        raise ValueError(f"label count must be an integer, got {L!r}")
    L = int(L)
    if not 1 <= L <= MAX_LABELS:
        raise ValueError(f"label count must be in [1, {MAX_LABELS}], got {L}")
    return L


def as_labelset(y, L=None):
    """Coerce a 0/1 sequence to a labelset tuple.

    Parameters
    ----------
    y : sequence of {0, 1} or bool
    L : int, optional
        Expected length; a mismatch raises ``ValueError``.

    Returns
    -------
    tuple of int
    """
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError("labelset must be one-dimensional")
    if arr.dtype == bool:
        arr = arr.astype(np.int64)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"labelset entries must be 0 or 1, got {y!r}")
    check_label_count(arr.size)
    if L is not None and arr.size != L:
        raise ValueError(f"labelset has {arr.size} labels, expected {L}")
    return tuple(int(v) for v in arr)


def labelset_to_index(y):
    """Return ``sum_j y_j * 2**(L - j)`` for the 1-based label position ``j``."""
    y = as_labelset(y)
    k = 0
    for bit in y:
        k = (k << 1) | bit
    return k


def index_to_labelset(k, L):
    """Inverse of :func:`labelset_to_index`."""
    L = check_label_count(L)
    k = int(k)
    if not 0 <= k < (1 << L):
        raise ValueError(f"index {k} out of range for L={L}")
    return tuple((k >> (L - 1 - j)) & 1 for j in range(L))


def labelset_matrix(L):
    """All ``2**L`` labelsets as a ``(2**L, L)`` uint8 array in index order."""
    L = check_label_count(L)
    idx = np.arange(1 << L, dtype=np.int64)
    shifts = np.arange(L - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def labelsets_to_indices(Y):
    """Vectorised :func:`labelset_to_index` for an ``(n, L)`` 0/1 array."""
    Y = np.asarray(Y)
    L = check_label_count(Y.shape[1])
    weights = 1 << np.arange(L - 1, -1, -1, dtype=np.int64)
    return (Y.astype(np.int64) * weights).sum(axis=1)


def label_count_of(n_states):
    """Recover ``L`` from a probability vector length ``2**L``."""
    n_states = int(n_states)
    L = n_states.bit_length() - 1
    if n_states < 2 or (1 << L) != n_states:
        raise ValueError(f"length {n_states} is not a power of two >= 2")
    return check_label_count(L)


@dataclass(frozen=True, eq=False)
class LabelsetDistribution:
    """Exact categorical distribution over the ``2**L`` labelsets of one instance.

    Build instances with :func:`make_distribution`, :func:`uniform`,
    :func:`point_mass` or :func:`joint_from_marginals`; the constructor
    itself does not validate. ``probs`` is a read-only array.
    """

    L: int
    probs: np.ndarray

    def __len__(self):
        return self.probs.size

    def __repr__(self):
        return f"LabelsetDistribution(L={self.L}, probs={np.array2string(self.probs, precision=4)})"

    def __eq__(self, other):
        if not isinstance(other, LabelsetDistribution):
            return NotImplemented
        return self.L == other.L and np.array_equal(self.probs, other.probs)

    __hash__ = None

    def prob(self, y):
        return float(self.probs[labelset_to_index(as_labelset(y, self.L))])

    def to_json(self):
        """Serialise as ``{"L": int, "probs": [...]}`` with 17 significant digits."""
        body = ", ".join(format(float(p), ".17g") for p in self.probs)
        return f'{{"L": {self.L}, "probs": [{body}]}}'

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text) if isinstance(text, str) else text
        try:
            L, probs = obj["L"], obj["probs"]
        except (KeyError, TypeError) as exc:
            raise ValueError("distribution JSON needs 'L' and 'probs' keys") from exc
        return make_distribution(probs, L)


def _freeze(probs):
    probs = np.array(probs, dtype=np.float64)
    probs.setflags(write=False)
    return probs


def normalize_probs(probs, axis=-1):
    """Validate and renormalise probability vectors along ``axis``.

    Entries down to ``-1e-12`` are clamped to zero, and sums within ``1e-9``
    of one are rescaled. Anything further off raises ``ValueError``.
    """
    probs = np.array(probs, dtype=np.float64)
    if not np.all(np.isfinite(probs)):
        raise ValueError("probabilities must be finite")
    if np.any(probs < -_NEG_TOL):
        raise ValueError(f"negative probability {probs.min():.3g} beyond tolerance")
    probs = np.clip(probs, 0.0, None)
    total = probs.sum(axis=axis, keepdims=True)
    if np.any(np.abs(total - 1.0) > _SUM_TOL):
        bad = np.abs(total - 1.0).max()
        raise ValueError(f"probabilities sum to 1 +/- {bad:.3g}, beyond tolerance {_SUM_TOL}")
    # rescale only when needed so that normalisation is idempotent
    return np.where(np.abs(total - 1.0) <= 1e-14, probs, probs / total)


def make_distribution(probs, L):
    """Validate a probability vector of length ``2**L`` and wrap it."""
    L = check_label_count(L)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (1 << L,):
        raise ValueError(f"expected {1 << L} probabilities for L={L}, got shape {probs.shape}")
    return LabelsetDistribution(L, _freeze(normalize_probs(probs)))


def as_distribution(d):
    """Accept a :class:`LabelsetDistribution` or a flat probability vector."""
    if isinstance(d, LabelsetDistribution):
        return d
    probs = np.asarray(d, dtype=np.float64)
    if probs.ndim != 1:
        raise ValueError("expected a single distribution (1-D probability vector)")
    return make_distribution(probs, label_count_of(probs.size))


def uniform(L):
    L = check_label_count(L)
    return LabelsetDistribution(L, _freeze(np.full(1 << L, 2.0**-L)))


def point_mass(y):
    y = as_labelset(y)
    probs = np.zeros(1 << len(y))
    probs[labelset_to_index(y)] = 1.0
    return LabelsetDistribution(len(y), _freeze(probs))


def marginals(d):
    """Per-label relevance probabilities ``P(y_j = 1)``."""
    d = as_distribution(d)
    return labelset_matrix(d.L).T.astype(np.float64) @ d.probs


def batch_marginals(P):
    """Marginals for an ``(n, 2**L)`` stack of distributions, shape ``(n, L)``."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    L = label_count_of(P.shape[1])
    return P @ labelset_matrix(L).astype(np.float64)


def mode(d):
    """Most probable labelset; ties go to the lowest index."""
    d = as_distribution(d)
    return index_to_labelset(int(np.argmax(d.probs)), d.L)


def batch_joint_from_marginals(M):
    """Independent joints for an ``(n, L)`` marginal matrix, shape ``(n, 2**L)``."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if np.any((M < 0) | (M > 1)) or not np.all(np.isfinite(M)):
        raise ValueError("marginal probabilities must lie in [0, 1]")
    check_label_count(M.shape[1])
    joint = np.ones((M.shape[0], 1))
    # label 1 is the most significant bit, so extend on the right
    for j in range(M.shape[1]):
        m = M[:, j : j + 1]
        joint = np.stack([joint * (1.0 - m), joint * m], axis=2).reshape(M.shape[0], -1)
    return joint


def joint_from_marginals(m):
    """``P(y) = prod_j m_j**y_j * (1 - m_j)**(1 - y_j)``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 1:
        raise ValueError("marginal vector must be one-dimensional")
    joint = batch_joint_from_marginals(m[None, :])[0]
    return LabelsetDistribution(m.size, _freeze(joint / joint.sum()))
