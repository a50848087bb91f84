"""Non-rigid Coherent Point Drift with exact Gaussian sums.

The template is the GMM centroid set, the reference is the data. Each EM
iteration evaluates the full M x N posterior, so memory and time are
O(M N) per iteration plus an O(M^3) solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, solve
from scipy.special import logsumexp
import warnings


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CpdParams:
    beta: float = 2.0
    lambda_: float = 3.0
    w_outlier: float = 0.1
    max_iters: int = 150
    tolerance: float = 1e-10
    min_sigma2: float = 1e-12

    def __post_init__(self):
        if not self.beta > 0 or not self.lambda_ > 0 or not self.tolerance > 0:
            raise ValueError("beta, lambda and tolerance must be positive")
        if not 0 <= self.w_outlier < 1:
            raise ValueError(f"w_outlier must lie in [0, 1), got {self.w_outlier}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def sqdist(a, b):
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None] - 2.0 * a @ b.T, 0.0)


def gaussian_gram(y, beta):
    return np.exp(-sqdist(y, y) / (2.0 * beta * beta))


def _log_outlier_term(sigma2, w, m, n, d):
    if w == 0:
        return -np.inf
    return 0.5 * d * np.log(2 * np.pi * sigma2) + np.log(w / (1 - w)) + np.log(m / n)


def posterior(x, t, sigma2, w):
    """E-step: posterior ``P[m, n]`` of centroid m for point n, plus the
    outlier mass per reference point, and the negative log-likelihood."""
    m, d = t.shape
    n = len(x)
    logk = -sqdist(t, x) / (2.0 * sigma2)
    log_c = _log_outlier_term(sigma2, w, m, n, d)
    log_den = np.logaddexp(logsumexp(logk, axis=0), log_c)
    p = np.exp(logk - log_den[None])
    outlier = np.exp(log_c - log_den) if w > 0 else np.zeros(n)
    nll = float((-log_den).sum() + n * (0.5 * d * np.log(2 * np.pi * sigma2) - np.log((1 - w) / m)))
    return p, outlier, nll


def cpd_register(template, reference, params: CpdParams = None):
    """Deform ``template`` onto ``reference`` (both already normalized).

    Returns ``(deformed, trace)`` where ``trace`` lists the negative log
    posterior (likelihood plus coherence penalty) before every M-step and
    after the last one.
    """
    params = CpdParams() if params is None else params
    y = np.asarray(template, dtype=np.float64)
    x = np.asarray(reference, dtype=np.float64)
    m, d = y.shape
    n = len(x)
    g = gaussian_gram(y, params.beta)
    w_coef = np.zeros((m, d))
    t = y.copy()
    sigma2 = float(sqdist(x, y).sum() / (d * m * n))
    trace = []
    if sigma2 <= params.min_sigma2:
        return t, trace
    for _ in range(params.max_iters):
        p, _, nll = posterior(x, t, sigma2, params.w_outlier)
        obj = nll + 0.5 * params.lambda_ * float((w_coef * (g @ w_coef)).sum())
        if trace and abs(trace[-1] - obj) <= params.tolerance * max(1.0, abs(obj)):
            trace.append(obj)
            break
        trace.append(obj)
        p1 = p.sum(axis=1)
        pt1 = p.sum(axis=0)
        px = p @ x
        a = p1[:, None] * g + params.lambda_ * sigma2 * np.eye(m)
        rhs = px - p1[:, None] * y
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", LinAlgWarning)
                w_coef = solve(a, rhs)
        except (LinAlgError, LinAlgWarning):
            cond = np.linalg.cond(a)
            raise SingularSystemError(
                f"CPD M-step system is singular (condition number {cond:.3g}); "
                f"try a larger lambda") from None
        t = y + g @ w_coef
        np_ = p1.sum()
        new_sigma2 = float(((pt1 * (x * x).sum(1)).sum() - 2.0 * (px * t).sum()
                            + (p1 * (t * t).sum(1)).sum()) / (np_ * d))
        if new_sigma2 <= params.min_sigma2:
            break
        sigma2 = new_sigma2
    else:
        p, _, nll = posterior(x, t, sigma2, params.w_outlier)
        trace.append(nll + 0.5 * params.lambda_ * float((w_coef * (g @ w_coef)).sum()))
    return t, trace
