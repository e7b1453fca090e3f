"""Probabilistic multi-label classifiers that emit full labelset distributions.

All three models use ridge logistic regression as the per-label learner and
return exact joints over the ``2**L`` labelsets:

* :class:`IndependentClassifier` - product of per-label marginals (binary relevance).
* :class:`ClassifierChain` - chain rule over a label order, enumerated exactly.
* :class:`EnsembleOfChains` - mean of chain joints over random label orders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _glm
from .labelsets import (
    batch_joint_from_marginals,
    check_label_count,
    labelset_matrix,
    make_distribution,
)
from .metrics import Metric, best_prediction_indices

MODEL_FORMAT = "mlconf.multilabel-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class BaseLearnerConfig:
    ridge_lambda: float = 1e-2
    max_iterations: int = 100
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class BinaryModel:
    """Logistic model; ``weights[0]`` is the intercept."""

    weights: np.ndarray
    converged: bool = True
    objective_path: tuple = ()


def _design(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def penalized_logistic_loss(weights, features, targets, ridge_lambda):
    """Mean logistic loss plus ``ridge_lambda / 2 * ||w[1:]||**2``."""
    Xd = _design(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    mask = np.r_[0.0, np.ones(Xd.shape[1] - 1)]
    fun = _glm.binomial_objective(Xd, targets, 1.0, ridge_lambda, mask)
    return fun(np.asarray(weights, dtype=np.float64), need_hess=False)[0]


def train_binary(features, targets, cfg=BaseLearnerConfig()):
    """Fit ridge logistic regression with an unpenalised intercept."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise ValueError("cannot train on empty data")
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} feature rows but {y.size} targets")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("targets must be 0/1")
    Xd = _design(X)
    mask = np.r_[0.0, np.ones(X.shape[1])]
    res = _glm.fit_binomial(Xd, y, 1.0, cfg.ridge_lambda, mask, cfg.max_iterations, cfg.tolerance)
    return BinaryModel(res.coef, res.converged, tuple(res.objective_path))


def predict_binary(model, x):
    """``P(y = 1 | x)`` for one feature vector or a matrix of rows."""
    w = np.asarray(model.weights if isinstance(model, BinaryModel) else model, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.size - 1:
        raise ValueError(f"expected {w.size - 1} features, got {x.shape[-1]}")
    return expit(w[0] + x @ w[1:])


def _validate_Y(Y, n_rows):
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[0] != n_rows:
        raise ValueError(f"Y must have shape ({n_rows}, L), got {Y.shape}")
    if not np.all((Y == 0) | (Y == 1)):
        raise ValueError("labels must be 0/1")
    check_label_count(Y.shape[1])
    return Y.astype(np.uint8)


def _standardize_fit(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _validate_order(order, L):
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (L,) or sorted(order.tolist()) != list(range(L)):
        raise ValueError(f"label order must be a permutation of 0..{L - 1}, got {order.tolist()}")
    return order


class _Chain:
    """One fitted chain: weights[j] predicts label order[j] from [1, x, y_order[:j]]."""

    def __init__(self, order, weights):
        self.order = np.asarray(order, dtype=np.int64)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]

    @classmethod
    def fit(cls, Xs, Y, order, cfg):
        weights = []
        for j, label in enumerate(order):
            feats = np.hstack([Xs, Y[:, order[:j]].astype(np.float64)])
            weights.append(train_binary(feats, Y[:, label], cfg).weights)
        return cls(order, weights)

    def joint(self, Xs):
        n, d = Xs.shape
        L = self.order.size
        probs = np.ones((n, 1))
        for j, w in enumerate(self.weights):
            # logit = intercept + x.w_x + prefix.w_y; the prefix part is shared across rows
            a = w[0] + Xs @ w[1 : d + 1]
            prefixes = labelset_matrix(j).astype(np.float64) if j else np.zeros((1, 0))
            b = prefixes @ w[d + 1 :]
            logit = a[:, None] + b[None, :]
            p1 = expit(logit)
            p0 = expit(-logit)
            probs = np.stack([probs * p0, probs * p1], axis=2).reshape(n, -1)
        # chain-order index -> canonical index (label 0 most significant)
        bits = labelset_matrix(L).astype(np.int64)
        canon = bits @ (1 << (L - 1 - self.order))
        out = np.empty_like(probs)
        out[:, canon] = probs
        return out

    def to_dict(self):
        return {"order": self.order.tolist(), "weights": [w.tolist() for w in self.weights]}


class _JointClassifier(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing for the joint-distribution classifiers."""

    _kind = None

    def _config(self):
        return BaseLearnerConfig(self.ridge_lambda, self.max_iterations, self.tolerance)

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = _validate_Y(Y, X.shape[0])
        self.n_features_in_ = X.shape[1]
        self.n_labels_ = Y.shape[1]
        self.mean_, self.scale_ = _standardize_fit(X)
        self._fit_standardized((X - self.mean_) / self.scale_, Y, self._config())
        return self

    def _transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def predict_joint(self, X):
        """Joint distribution over labelsets, shape ``(n, 2**L)``."""
        P = self._joint_standardized(self._transform(X))
        return P / P.sum(axis=1, keepdims=True)

    def predict_distribution(self, X):
        return [make_distribution(p, self.n_labels_) for p in self.predict_joint(X)]

    def predict_marginals(self, X):
        return self.predict_joint(X) @ labelset_matrix(self.n_labels_).astype(np.float64)

    def predict(self, X, metric="em"):
        """Metric-optimal labelsets as an ``(n, L)`` 0/1 array."""
        best, _ = best_prediction_indices(self.predict_joint(X), Metric.parse(metric))
        return labelset_matrix(self.n_labels_)[best]

    def to_dict(self):
        check_is_fitted(self, "mean_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self._kind,
            "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.get_params().items()},
            "n_labels": self.n_labels_,
            "n_features": self.n_features_in_,
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
            "chains": [c.to_dict() for c in self._chains()],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


class IndependentClassifier(_JointClassifier):
    """Binary relevance: one ridge logistic model per label, joint = product of marginals.

    Parameters
    ----------
    ridge_lambda : float, default 1e-2
        Penalty on standardised feature weights (intercepts are free).
    max_iterations : int, default 100
    tolerance : float, default 1e-8
        Gradient-norm stopping threshold for each Newton solve.
    """

    _kind = "independent"

    def __init__(self, ridge_lambda=1e-2, max_iterations=100, tolerance=1e-8):
        self.ridge_lambda = ridge_lambda
        self.max_iterations = max_iterations
        self.tolerance = tolerance

    def _fit_standardized(self, Xs, Y, cfg):
        self.models_ = [train_binary(Xs, Y[:, j], cfg) for j in range(Y.shape[1])]

    def _marginals_standardized(self, Xs):
        return np.column_stack([predict_binary(m, Xs) for m in self.models_])

    def _joint_standardized(self, Xs):
        return batch_joint_from_marginals(self._marginals_standardized(Xs))

    def _chains(self):
        # each label model is a length-1 chain with no label inputs
        return [_Chain([j], [m.weights]) for j, m in enumerate(self.models_)]


class ClassifierChain(_JointClassifier):
    """Probabilistic classifier chain with exact enumeration of all ``2**L`` paths.

    ``P(y | x) = prod_j P(y_o(j) | x, y_o(1), ..., y_o(j-1))``. Training feeds
    the true preceding labels.

    Parameters
    ----------
    order : sequence of int, optional
        Label order as a permutation of ``0..L-1``; defaults to ``0, 1, ...``.
    ridge_lambda, max_iterations, tolerance
        As for :class:`IndependentClassifier`.
    """

    _kind = "chain"

    def __init__(self, order=None, ridge_lambda=1e-2, max_iterations=100, tolerance=1e-8):
        self.order = order
        self.ridge_lambda = ridge_lambda
        self.max_iterations = max_iterations
        self.tolerance = tolerance

    def _fit_standardized(self, Xs, Y, cfg):
        L = Y.shape[1]
        order = np.arange(L) if self.order is None else _validate_order(self.order, L)
        self.chain_ = _Chain.fit(Xs, Y, order, cfg)
        self.order_ = self.chain_.order

    def _joint_standardized(self, Xs):
        return self.chain_.joint(Xs)

    def _chains(self):
        return [self.chain_]


class EnsembleOfChains(_JointClassifier):
    """Ensemble of classifier chains; the joint is the mean of member joints.

    Members differ only in their label order, drawn from ``random_state``;
    every member trains on the full training set.

    Parameters
    ----------
    n_chains : int, default 10
    random_state : int, default 0
    ridge_lambda, max_iterations, tolerance
        As for :class:`IndependentClassifier`.
    """

    _kind = "ecc"

    def __init__(self, n_chains=10, random_state=0, ridge_lambda=1e-2, max_iterations=100, tolerance=1e-8):
        self.n_chains = n_chains
        self.random_state = random_state
        self.ridge_lambda = ridge_lambda
        self.max_iterations = max_iterations
        self.tolerance = tolerance

    def _fit_standardized(self, Xs, Y, cfg):
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        rng = np.random.default_rng(self.random_state)
        L = Y.shape[1]
        orders = [rng.permutation(L) for _ in range(self.n_chains)]
        self.chains_ = [_Chain.fit(Xs, Y, order, cfg) for order in orders]

    def _joint_standardized(self, Xs):
        return np.mean([c.joint(Xs) for c in self.chains_], axis=0)

    def _chains(self):
        return list(self.chains_)


_KINDS = {cls._kind: cls for cls in (IndependentClassifier, ClassifierChain, EnsembleOfChains)}


def make_classifier(kind, **params):
    """Construct an unfitted classifier by name: independent, chain or ecc."""
    key = str(kind).lower()
    if key not in _KINDS:
        raise ValueError(f"unknown classifier {kind!r}; expected one of {sorted(_KINDS)}")
    return _KINDS[key](**params)


def model_from_dict(obj):
    """Rebuild a fitted classifier from :meth:`to_dict` output."""
    if obj.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialised multi-label model")
    if obj.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {obj.get('version')}")
    model = make_classifier(obj["kind"], **obj["params"])
    model.n_labels_ = int(obj["n_labels"])
    model.n_features_in_ = int(obj["n_features"])
    model.mean_ = np.asarray(obj["mean"], dtype=np.float64)
    model.scale_ = np.asarray(obj["scale"], dtype=np.float64)
    chains = [_Chain(c["order"], c["weights"]) for c in obj["chains"]]
    if isinstance(model, IndependentClassifier):
        model.models_ = [BinaryModel(c.weights[0]) for c in chains]
    elif isinstance(model, ClassifierChain):
        model.chain_ = chains[0]
        model.order_ = chains[0].order
    else:
        model.chains_ = chains
    return model


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


# Functional forms mirroring the estimator API.


def train_independent(X, Y, cfg=BaseLearnerConfig()):
    return IndependentClassifier(cfg.ridge_lambda, cfg.max_iterations, cfg.tolerance).fit(X, Y)


def train_chain(X, Y, order, cfg=BaseLearnerConfig()):
    return ClassifierChain(order, cfg.ridge_lambda, cfg.max_iterations, cfg.tolerance).fit(X, Y)


def train_ensemble(X, Y, M=10, seed=0, cfg=BaseLearnerConfig()):
    return EnsembleOfChains(M, seed, cfg.ridge_lambda, cfg.max_iterations, cfg.tolerance).fit(X, Y)


def _predict_one(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return model.predict_distribution(x[None, :])[0]
    return model.predict_distribution(x)


predict_independent = predict_chain = predict_ensemble = _predict_one


def chain_joint_from_conditionals(conditionals, L):
    """Exact chain-rule joint from a callable ``conditionals(j, prefix) -> P(y_j = 1)``.

    Labels are taken in index order. Used for hand-built chains and tests.
    """
    L = check_label_count(L)
    probs = np.ones(1)
    for j in range(L):
        prefixes = labelset_matrix(j) if j else np.zeros((1, 0), dtype=np.uint8)
        p1 = np.array([conditionals(j, tuple(int(b) for b in pre)) for pre in prefixes], dtype=np.float64)
        probs = np.stack([probs * (1 - p1), probs * p1], axis=1).ravel()
    return make_distribution(probs, L)
