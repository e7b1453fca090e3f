"""Deterministic Newton solvers for ridge-penalised binomial and multinomial GLMs.

Objectives are the mean negative log-likelihood per row plus
``lam / 2 * ||beta[penalized]||**2``. Columns flagged unpenalized (intercepts,
factor-level biases) are left free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit, logsumexp


@dataclass
class NewtonResult:
    coef: np.ndarray
    objective: float
    grad_norm: float
    n_iter: int
    converged: bool
    objective_path: list = field(default_factory=list)


def _newton_step(H, g):
    try:
        return cho_solve(cho_factor(H, check_finite=False), g, check_finite=False)
    except (LinAlgError, ValueError):
        # singular Hessian (duplicated columns, lam = 0): minimum-norm step
        return np.linalg.lstsq(H, g, rcond=None)[0]


def newton_minimize(fun, x0, max_iter=100, tol=1e-8):
    """Minimise a smooth convex ``fun(x) -> (f, grad, hess)`` by damped Newton.

    Steps are accepted only when the objective decreases (Armijo backtracking),
    so the recorded objective path is monotone non-increasing.
    """
    x = np.array(x0, dtype=np.float64)
    f, g, H = fun(x)
    path = [f]
    gnorm = float(np.linalg.norm(g))
    n_iter = 0
    while gnorm >= tol and n_iter < max_iter:
        step = _newton_step(H, g)
        slope = float(g @ step)
        t = 1.0
        accepted = False
        for _ in range(50):
            x_new = x - t * step
            f_new = fun(x_new, need_hess=False)[0]
            if np.isfinite(f_new) and f_new <= f - 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no descent possible at working precision
            break
        x = x_new
        f, g, H = fun(x)
        path.append(f)
        gnorm = float(np.linalg.norm(g))
        n_iter += 1
    return NewtonResult(x, float(f), gnorm, n_iter, gnorm < tol, path)


def binomial_objective(X, successes, trials, lam, penalized):
    """Closure for the ridge binomial objective over coefficient vector ``beta``."""
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(successes, dtype=np.float64)
    t = np.asarray(trials, dtype=np.float64) * np.ones(X.shape[0])
    pen = np.asarray(penalized, dtype=np.float64) * lam
    n = X.shape[0]

    def fun(beta, need_hess=True):
        eta = X @ beta
        nll = (t * np.logaddexp(0.0, eta) - s * eta).sum() / n
        f = nll + 0.5 * float((pen * beta * beta).sum())
        if not need_hess:
            return f, None, None
        p = expit(eta)
        g = X.T @ (t * p - s) / n + pen * beta
        w = t * p * (1.0 - p) / n
        H = (X.T * w) @ X + np.diag(pen)
        return f, g, H

    return fun


def fit_binomial(X, successes, trials, lam, penalized, max_iter=100, tol=1e-8, coef0=None):
    if lam < 0:
        raise ValueError("ridge penalty must be non-negative")
    fun = binomial_objective(X, successes, trials, lam, penalized)
    x0 = np.zeros(np.asarray(X).shape[1]) if coef0 is None else coef0
    return newton_minimize(fun, x0, max_iter=max_iter, tol=tol)


def multinomial_logits(X, coef, ref):
    """Class logits with the reference class pinned at zero; ``coef`` is (p, C-1)."""
    n = X.shape[0]
    C = coef.shape[1] + 1
    eta = np.zeros((n, C))
    others = [c for c in range(C) if c != ref]
    eta[:, others] = X @ coef
    return eta


def multinomial_proba(X, coef, ref):
    eta = multinomial_logits(X, coef, ref)
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def multinomial_objective(X, counts, lam, penalized, ref):
    """Closure for the ridge multinomial objective over flattened ``(p, C-1)`` coefs."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(counts, dtype=np.float64)
    n, p = X.shape
    C = Y.shape[1]
    others = [c for c in range(C) if c != ref]
    trials = Y.sum(axis=1)
    pen = np.tile(np.asarray(penalized, dtype=np.float64)[:, None] * lam, (1, C - 1))

    def fun(flat, need_hess=True):
        B = flat.reshape(p, C - 1)
        eta = multinomial_logits(X, B, ref)
        lse = logsumexp(eta, axis=1)
        nll = (trials * lse - (Y * eta).sum(axis=1)).sum() / n
        f = nll + 0.5 * float((pen * B * B).sum())
        if not need_hess:
            return f, None, None
        P = np.exp(eta - lse[:, None])[:, others]
        G = X.T @ (trials[:, None] * P - Y[:, others]) / n + pen * B
        k = C - 1
        H = np.empty((p, k, p, k))
        for a in range(k):
            for b in range(a, k):
                w = trials * P[:, a] * ((a == b) - P[:, b]) / n
                block = (X.T * w) @ X
                H[:, a, :, b] = block
                H[:, b, :, a] = block
        H = H.reshape(p * k, p * k) + np.diag(pen.ravel())
        return f, G.ravel(), H

    return fun


def fit_multinomial(X, counts, lam, penalized, ref=0, max_iter=100, tol=1e-8):
    if lam < 0:
        raise ValueError("ridge penalty must be non-negative")
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(counts).shape[1]
    fun = multinomial_objective(X, counts, lam, penalized, ref)
    res = newton_minimize(fun, np.zeros(X.shape[1] * (C - 1)), max_iter=max_iter, tol=tol)
    res.coef = res.coef.reshape(X.shape[1], C - 1)
    return res
