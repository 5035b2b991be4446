"""Logistic regression fit by iteratively reweighted least squares.

Used for the dose-half propensity score, the template-membership
(selection) score and the classification permutation test.  Deliberately
minimal: dense Newton steps, pseudo-inverse fallback on singular
information matrices, probability clamping on separation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_CLAMP = 1e-6
_ETA_CAP = 35.0  # exp overflow guard; sigmoid(35) == 1 to double precision


@dataclass(frozen=True)
class LogitFit:
    coef: np.ndarray
    probs: np.ndarray
    converged: bool
    separated: bool
    n_iter: int

    def predict_proba(self, design: np.ndarray) -> np.ndarray:
        return _sigmoid(design @ self.coef)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -_ETA_CAP, _ETA_CAP)))


def irls_logit(design: np.ndarray, y: np.ndarray, *, add_intercept: bool = True,
               max_iter: int = 100, tol: float = 1e-8) -> LogitFit:
    """Fit P(y=1|x) = expit(x'b); convergence when max |coef change| < tol.

    On (quasi-)separation the fit is still returned but ``separated`` is set
    and the probabilities are clamped to [PROB_CLAMP, 1-PROB_CLAMP]; callers
    decide whether to warn.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if add_intercept:
        x = np.hstack([np.ones((x.shape[0], 1)), x])
    n, p = x.shape
    coef = np.zeros(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(x @ coef, -_ETA_CAP, _ETA_CAP)
        mu = _sigmoid(eta)
        w = mu * (1.0 - mu)
        grad = x.T @ (y - mu)
        info = (x * w[:, None]).T @ x
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.pinv(info) @ grad
        # Damp absurd steps that arise under separation.
        norm = np.max(np.abs(step))
        if norm > 1e4:
            step *= 1e4 / norm
        coef = coef + step
        if norm < tol:
            converged = True
            break
    probs = _sigmoid(x @ coef)
    separated = bool(np.any(probs < PROB_CLAMP) or np.any(probs > 1.0 - PROB_CLAMP))
    probs = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return LogitFit(coef=coef, probs=probs, converged=converged,
                    separated=separated, n_iter=it)
