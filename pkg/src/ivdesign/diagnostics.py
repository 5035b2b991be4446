"""Balance tables and classification permutation tests (CPT).

The plain CPT checks the randomization assumption: a logistic classifier is
fit to predict the far member of each pair from within-pair covariate
differences, its in-sample accuracy is the statistic, and the null
distribution comes from re-randomizing each pair's orientation with
probability 1/2.  The biased variant sample-splits, scores held-out pairs,
and draws its null from the worst-case allocation allowed by a uniform
odds bound Gamma: each held-out label agrees with the trained classifier's
prediction with probability Gamma/(1+Gamma).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .errors import SeparationDetected
from .logit import irls_logit
from .model import MatchedDesign

__all__ = [
    "BalanceRow",
    "CptResult",
    "balance_table",
    "balance_table_text",
    "balance_table_csv",
    "cpt",
    "biased_cpt",
    "calibrate_gamma_cap",
]


@dataclass(frozen=True)
class BalanceRow:
    name: str
    near_mean: float
    far_mean: float
    smd: float
    zero_variance: bool = False


@dataclass(frozen=True)
class CptResult:
    observed_accuracy: float
    null_sample: np.ndarray
    p_value: float
    gamma_cap: float
    n_perm: int

    def to_json(self, path=None) -> str:
        payload = asdict(self)
        payload["null_sample"] = [float(v) for v in self.null_sample]
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def balance_table(design: MatchedDesign, names=None) -> list[BalanceRow]:
    """One row per covariate plus a leading row for the IV dose itself.

    SMD denominators are standard deviations over the pooled pre-match
    sample (all retained units plus eliminated ones).
    """
    if design.n_pairs == 0:
        raise ValueError("design has no pairs")
    p = design.x_far.shape[1]
    if names is None:
        names = [f"x{j}" for j in range(p)]
    if len(names) != p:
        raise ValueError(f"got {len(names)} names for {p} covariates")

    pre_units = [u for pair in design.pairs for u in (pair.near, pair.far)]
    pre_units += list(design.eliminated)
    pre_x = np.vstack([u.x for u in pre_units])
    pre_dose = np.array([u.z_dose for u in pre_units])

    rows = []

    def row(name, near_vals, far_vals, pooled):
        sd = float(np.std(pooled, ddof=1))
        diff = abs(float(np.mean(near_vals)) - float(np.mean(far_vals)))
        if sd == 0.0:
            smd = 0.0 if diff == 0.0 else np.inf
            return BalanceRow(name, float(np.mean(near_vals)), float(np.mean(far_vals)),
                              smd, zero_variance=True)
        return BalanceRow(name, float(np.mean(near_vals)), float(np.mean(far_vals)),
                          diff / sd)

    near_dose = np.array([pr.near.z_dose for pr in design.pairs])
    far_dose = np.array([pr.far.z_dose for pr in design.pairs])
    rows.append(row("z_dose", near_dose, far_dose, pre_dose))
    for j in range(p):
        rows.append(row(names[j], design.x_near[:, j], design.x_far[:, j], pre_x[:, j]))
    return rows


def balance_table_text(rows: list[BalanceRow]) -> str:
    width = max(len(r.name) for r in rows) + 2
    lines = [f"{'':{width}}  Near Mean   Far Mean  Abs. SMD"]
    for r in rows:
        flag = " *" if r.zero_variance else ""
        lines.append(f"{r.name:{width}}  {r.near_mean:9.3f}  {r.far_mean:9.3f}  {r.smd:8.3f}{flag}")
    return "\n".join(lines) + "\n"


def balance_table_csv(rows: list[BalanceRow], path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "near_mean", "far_mean", "abs_smd", "zero_variance"])
        for r in rows:
            writer.writerow([r.name, r.near_mean, r.far_mean, r.smd, int(r.zero_variance)])


# ---------------------------------------------------------------------------
# Classification permutation tests
# ---------------------------------------------------------------------------

def _symmetrized_accuracy(diffs: np.ndarray, warn: bool = False) -> float:
    """Fit the pair classifier and return its in-sample accuracy.

    The training set stacks (+diff, label 1) with (-diff, label 0); pair i
    is classified correctly exactly when the fitted score of +diff_i is
    positive, and a score of zero counts half.
    """
    x = np.vstack([diffs, -diffs])
    y = np.concatenate([np.ones(len(diffs)), np.zeros(len(diffs))])
    fit = irls_logit(x, y)
    if warn and fit.separated:
        warnings.warn("separation detected in the CPT classifier", SeparationDetected,
                      stacklevel=3)
    eta = fit.coef[0] + diffs @ fit.coef[1:]
    return float(np.mean(np.where(eta > 0, 1.0, np.where(eta < 0, 0.0, 0.5))))


def cpt(design: MatchedDesign, n_perm: int = 499, seed: int = 0) -> CptResult:
    """Classification permutation test of the randomization assumption."""
    if design.n_pairs < 2:
        raise ValueError("need at least 2 pairs")
    if n_perm < 99:
        raise ValueError("n_perm must be at least 99")
    diffs = design.x_far - design.x_near
    observed = _symmetrized_accuracy(diffs, warn=True)
    streams = np.random.SeedSequence(seed).spawn(n_perm)
    null = np.empty(n_perm)
    for b in range(n_perm):
        rng = np.random.default_rng(streams[b])
        signs = np.where(rng.random(len(diffs)) < 0.5, 1.0, -1.0)
        null[b] = _symmetrized_accuracy(signs[:, None] * diffs)
    p = (1 + int(np.sum(null >= observed))) / (1 + n_perm)
    return CptResult(observed_accuracy=observed, null_sample=null, p_value=p,
                     gamma_cap=1.0, n_perm=n_perm)


def biased_cpt(design: MatchedDesign, gamma_cap: float, n_perm: int = 499,
               n_splits: int = 5, seed: int = 0) -> CptResult:
    """Sample-splitting CPT of the biased randomization hypothesis H_{0,Gamma}.

    Per split: train on half the pairs, score held-out accuracy, and draw
    the permutation null from the worst-case allocation (held-out labels
    agree with the classifier's prediction with probability
    Gamma/(1+Gamma)).  Split p-values are combined by the doubled-mean
    rule, capped at 1.
    """
    if gamma_cap < 1:
        raise ValueError("Gamma must be >= 1")
    if design.n_pairs < 4:
        raise ValueError("need at least 4 pairs to split")
    diffs = design.x_far - design.x_near
    n = len(diffs)
    agree_p = gamma_cap / (1.0 + gamma_cap)
    split_streams = np.random.SeedSequence(seed).spawn(n_splits)

    p_values = []
    all_null = []
    obs_accs = []
    for k in range(n_splits):
        ss = split_streams[k]
        rng = np.random.default_rng(ss)
        order = rng.permutation(n)
        train, test = order[: n // 2], order[n // 2:]
        x = np.vstack([diffs[train], -diffs[train]])
        y = np.concatenate([np.ones(len(train)), np.zeros(len(train))])
        fit = irls_logit(x, y)
        eta = fit.coef[0] + diffs[test] @ fit.coef[1:]
        observed = float(np.mean(np.where(eta > 0, 1.0, np.where(eta < 0, 0.0, 0.5))))
        obs_accs.append(observed)

        probs = np.where(eta == 0.0, 0.5, agree_p)
        perm_streams = ss.spawn(n_perm)
        null = np.empty(n_perm)
        for b in range(n_perm):
            rng_b = np.random.default_rng(perm_streams[b])
            null[b] = float(np.mean(rng_b.random(len(test)) < probs))
        all_null.append(null)
        p_values.append((1 + int(np.sum(null >= observed))) / (1 + n_perm))

    p_final = min(1.0, 2.0 * float(np.mean(p_values)))
    return CptResult(observed_accuracy=float(np.mean(obs_accs)),
                     null_sample=np.concatenate(all_null), p_value=p_final,
                     gamma_cap=float(gamma_cap), n_perm=n_perm)


def calibrate_gamma_cap(design: MatchedDesign, alpha: float = 0.05,
                        n_perm: int = 499, n_splits: int = 5, seed: int = 0,
                        tol: float = 0.005, max_cap: float = 64.0) -> float:
    """Smallest odds cap Gamma whose biased CPT is no longer rejected.

    The biased-CPT p-value is non-decreasing in Gamma for a fixed seed, so
    a doubling search plus bisection is exact up to ``tol``.
    """
    def p_at(g):
        return biased_cpt(design, g, n_perm=n_perm, n_splits=n_splits, seed=seed).p_value

    if p_at(1.0) > alpha:
        return 1.0
    lo, hi = 1.0, 1.2
    for _ in range(60):
        if p_at(hi) > alpha or hi >= max_cap:
            break
        lo, hi = hi, min(hi * 1.5, max_cap)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if p_at(mid) > alpha:
            hi = mid
        else:
            lo = mid
    return hi
