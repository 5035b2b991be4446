"""Estimands, partial identification bounds, and the four inferential
procedures for matched-pair IV designs.

Conventions.  Within pair i the far member has Z=1 and the near member Z=0,
so the pair statistic for a constant K is

    tau_i(K) = (R_far - K * D_far) - (R_near - K * D_near).

The bound tests use the classical variance S^2(K) = sum((tau_i - taubar)^2)
/ (I (I-1)); the biased-randomization test first applies the dose-dependent
worst-case shrinkage

    tau_{i,G} = (G+1)/(4G) * ((G+1) tau_i - (G-1) |tau_i|),  G = exp(gamma * gap_i),

which leaves positive values multiplied by (G+1)/(2G) and negative values
by (G+1)/2, and reduces to tau_i at gamma = 0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import qr as scipy_qr
from scipy.stats import norm

from .errors import AllZeroGaps, LeverageOne, RankDeficient, ZeroDenominator, ZeroVariance
from .model import MatchedDesign

__all__ = [
    "PairStatistics",
    "SensitivityModel",
    "BoundsReport",
    "TestResult",
    "pair_statistics",
    "compliance_rate_hat",
    "itt_hat",
    "bounds_point",
    "test_bound_randomization",
    "ci_bounds_randomization",
    "regression_assisted_variance",
    "default_q_matrix",
    "biased_test_bound",
    "ci_bounds_biased",
    "effect_ratio_inference",
    "gamma_from_Gamma_cap",
    "write_k1_sweep",
]


@dataclass(frozen=True)
class PairStatistics:
    """Per-pair statistics tau_i for a supplied constant K, plus dose gaps."""

    tau: np.ndarray
    dose_gaps: np.ndarray
    k: float

    @property
    def n_pairs(self) -> int:
        return self.tau.shape[0]


@dataclass(frozen=True)
class SensitivityModel:
    """gamma >= 0 and the induced per-pair assignment odds Gamma_i >= 1."""

    gamma: float
    gammas_i: np.ndarray

    @staticmethod
    def from_design(design: MatchedDesign, gamma: float) -> "SensitivityModel":
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        return SensitivityModel(gamma=float(gamma),
                                gammas_i=np.exp(gamma * design.dose_gaps))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    variance: float
    reject: bool
    p_value: float
    side: str
    alpha: float


@dataclass(frozen=True)
class BoundsReport:
    """Point estimates and confidence limits for [LB, UB]."""

    iota_hat: float
    itt_hat: float
    lb_hat: float
    ub_hat: float
    ci: tuple
    method: str
    k0: float
    k1: float
    alpha: float
    n_pairs: int
    extras: dict = field(default_factory=dict)

    def to_json(self, path=None) -> str:
        payload = asdict(self)
        payload["ci"] = list(self.ci)
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def pair_statistics(design: MatchedDesign, k: float) -> PairStatistics:
    tau = (design.r_far - k * design.d_far) - (design.r_near - k * design.d_near)
    return PairStatistics(tau=tau, dose_gaps=design.dose_gaps, k=float(k))


def compliance_rate_hat(design: MatchedDesign) -> float:
    """Observed analogue of the compliance rate: mean of D_far - D_near."""
    if design.n_pairs < 1:
        raise ValueError("need at least one pair")
    return float(np.mean(design.d_far - design.d_near))


def itt_hat(design: MatchedDesign) -> float:
    return float(np.mean(design.r_far - design.r_near))


def bounds_point(design: MatchedDesign, k0: float, k1: float) -> tuple[float, float]:
    """Plug-in estimates of LB and UB; requires k0 <= k1."""
    if not (np.isfinite(k0) and np.isfinite(k1)) or k0 > k1:
        raise ValueError("need finite K0 <= K1")
    iota = compliance_rate_hat(design)
    itt = itt_hat(design)
    return itt - k0 * iota + k0, itt - k1 * iota + k1


def _variance(tau: np.ndarray) -> float:
    n = tau.shape[0]
    if n < 2:
        raise ValueError("need at least two pairs")
    centered = tau - tau.mean()
    s2 = float(centered @ centered) / (n * (n - 1))
    if s2 <= 0.0:
        raise ZeroVariance("all pair statistics are equal")
    return s2


def test_bound_randomization(design: MatchedDesign, l: float, k: float,
                             alpha: float = 0.05, side: str = "two-sided") -> TestResult:
    """Test of H0: LB = l (or UB with k = K1) under randomization.

    ``side`` is one of "two-sided", "lower" (rejects for large T, used to
    build lower confidence limits) or "upper".
    """
    stats = pair_statistics(design, k)
    t = float(stats.tau.mean()) - (l - k)
    s2 = _variance(stats.tau)
    se = np.sqrt(s2)
    if side == "two-sided":
        z = norm.ppf(1 - alpha / 2)
        reject = abs(t) >= z * se
        p = 2 * (1 - norm.cdf(abs(t) / se))
    elif side == "lower":
        z = norm.ppf(1 - alpha)
        reject = t >= z * se
        p = 1 - norm.cdf(t / se)
    elif side == "upper":
        z = norm.ppf(1 - alpha)
        reject = -t >= z * se
        p = norm.cdf(t / se)
    else:
        raise ValueError(f"unknown side {side!r}")
    return TestResult(statistic=t, variance=s2, reject=bool(reject),
                      p_value=float(p), side=side, alpha=alpha)


def ci_bounds_randomization(design: MatchedDesign, k0: float, k1: float,
                            alpha: float = 0.05) -> BoundsReport:
    """Level-alpha interval for [LB, UB] from two one-sided alpha/2 limits."""
    lb_hat, ub_hat = bounds_point(design, k0, k1)
    z = norm.ppf(1 - alpha / 2)
    s2_lb = _variance(pair_statistics(design, k0).tau)
    s2_ub = _variance(pair_statistics(design, k1).tau)
    ci = (lb_hat - z * np.sqrt(s2_lb), ub_hat + z * np.sqrt(s2_ub))
    return BoundsReport(
        iota_hat=compliance_rate_hat(design), itt_hat=itt_hat(design),
        lb_hat=lb_hat, ub_hat=ub_hat, ci=ci, method="randomization",
        k0=float(k0), k1=float(k1), alpha=alpha, n_pairs=design.n_pairs,
        extras={"s2_lb": s2_lb, "s2_ub": s2_ub},
    )


def lower_limit_randomization(design: MatchedDesign, k0: float, alpha: float = 0.05) -> float:
    """One-sided level-alpha lower confidence limit for LB."""
    tau = pair_statistics(design, k0).tau
    return float(tau.mean() + k0 - norm.ppf(1 - alpha) * np.sqrt(_variance(tau)))


# ---------------------------------------------------------------------------
# Regression-assisted variance
# ---------------------------------------------------------------------------

def default_q_matrix(design: MatchedDesign) -> np.ndarray:
    """[1, centered within-pair covariate means, centered differences]."""
    mean = (design.x_far + design.x_near) / 2.0
    diff = design.x_far - design.x_near
    v = np.hstack([mean, diff])
    v = v - v.mean(axis=0, keepdims=True)
    return np.hstack([np.ones((design.n_pairs, 1)), v])


def regression_assisted_variance(design: MatchedDesign, q: np.ndarray, k: float) -> float:
    """S^2_Q: hat-matrix-adjusted variance, a drop-in replacement for S^2."""
    tau = pair_statistics(design, k).tau
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[0] != design.n_pairs:
        raise ValueError("Q must have one row per pair")
    n, p = q.shape
    if p >= n:
        raise ValueError("Q must have fewer columns than pairs")
    rank = np.linalg.matrix_rank(q)
    if rank < p:
        warnings.warn(f"Q is rank deficient ({rank} < {p}); dropping dependent columns",
                      RankDeficient, stacklevel=2)
        _, _, piv = scipy_qr(q, pivoting=True)
        keep = np.sort(piv[:rank])
        q = q[:, keep]
    qt, _ = np.linalg.qr(q)
    lev = np.einsum("ij,ij->i", qt, qt)
    if np.any(lev >= 1.0 - 1e-8):
        raise LeverageOne("a leverage is numerically 1; cannot rescale tau")
    tau_q = tau / np.sqrt(1.0 - lev)
    resid = tau_q - qt @ (qt.T @ tau_q)
    return float(tau_q @ resid) / (n * n)


# ---------------------------------------------------------------------------
# Biased-randomization inference
# ---------------------------------------------------------------------------

def _shrink(tau: np.ndarray, gammas_i: np.ndarray) -> np.ndarray:
    return (gammas_i + 1.0) / (4.0 * gammas_i) * (
        (gammas_i + 1.0) * tau - (gammas_i - 1.0) * np.abs(tau))


def biased_test_bound(design: MatchedDesign, l: float, k: float, gamma: float,
                      alpha: float = 0.05, side: str = "lower") -> TestResult:
    """One-sided test of H0: LB = l (side="lower") or UB = l (side="upper")
    under the dose-dependent biased assignment model.

    The UB test mirrors the LB test by sign-flipping the pair statistics
    (and the role of K), so both sides reuse the same shrinkage map.
    """
    model = SensitivityModel.from_design(design, gamma)
    tau = pair_statistics(design, k).tau
    if side == "lower":
        shr = _shrink(tau, model.gammas_i)
        t = float(shr.mean()) - (l - k)
    elif side == "upper":
        shr = _shrink(-tau, model.gammas_i)
        t = float(shr.mean()) - (k - l)
    else:
        raise ValueError(f"unknown side {side!r}")
    s2 = _variance(shr)
    se = np.sqrt(s2)
    z = norm.ppf(1 - alpha)
    reject = t >= z * se
    p = 1 - norm.cdf(t / se)
    return TestResult(statistic=t, variance=s2, reject=bool(reject),
                      p_value=float(p), side=side, alpha=alpha)


def lower_limit_biased(design: MatchedDesign, k0: float, gamma: float,
                       alpha: float = 0.05) -> float:
    """One-sided level-alpha lower confidence limit for LB under M_gamma."""
    model = SensitivityModel.from_design(design, gamma)
    shr = _shrink(pair_statistics(design, k0).tau, model.gammas_i)
    return float(shr.mean() + k0 - norm.ppf(1 - alpha) * np.sqrt(_variance(shr)))


def upper_limit_biased(design: MatchedDesign, k1: float, gamma: float,
                       alpha: float = 0.05) -> float:
    """One-sided level-alpha upper confidence limit for UB under M_gamma."""
    model = SensitivityModel.from_design(design, gamma)
    shr = _shrink(-pair_statistics(design, k1).tau, model.gammas_i)
    return float(k1 - shr.mean() + norm.ppf(1 - alpha) * np.sqrt(_variance(shr)))


def ci_bounds_biased(design: MatchedDesign, k0: float, k1: float, gamma: float,
                     alpha: float = 0.05) -> BoundsReport:
    """Level-alpha interval for [LB, UB] under M_gamma (two alpha/2 limits)."""
    lb_hat, ub_hat = bounds_point(design, k0, k1)
    ci = (lower_limit_biased(design, k0, gamma, alpha / 2),
          upper_limit_biased(design, k1, gamma, alpha / 2))
    return BoundsReport(
        iota_hat=compliance_rate_hat(design), itt_hat=itt_hat(design),
        lb_hat=lb_hat, ub_hat=ub_hat, ci=ci, method=f"biased(gamma={gamma:g})",
        k0=float(k0), k1=float(k1), alpha=alpha, n_pairs=design.n_pairs,
    )


# ---------------------------------------------------------------------------
# Effect ratio
# ---------------------------------------------------------------------------

def _effect_ratio_margin(design: MatchedDesign, lam0: float, gammas_i: np.ndarray,
                         z: float, flip: bool) -> float:
    """Rejection margin tau_bar_gamma - z * sqrt(S^2) at lambda0; > 0 rejects."""
    tau = (design.r_far - lam0 * design.d_far) - (design.r_near - lam0 * design.d_near)
    if flip:
        tau = -tau
    shr = _shrink(tau, gammas_i)
    n = shr.shape[0]
    centered = shr - shr.mean()
    s2 = float(centered @ centered) / (n * (n - 1))
    return float(shr.mean()) - z * float(np.sqrt(max(s2, 0.0)))


def _invert_side(design: MatchedDesign, gammas_i: np.ndarray, z: float,
                 flip: bool, kinks: np.ndarray, lam_hat: float) -> float:
    """Boundary of the acceptance region of one one-sided test.

    The rejection margin is piecewise smooth in lambda0 with kinks where
    some tau_i(lambda0) crosses zero.  The point estimate itself is always
    accepted, so we walk outward from it through the kinks (downward for
    the lower limit, upward with the sign-flipped statistic for the upper
    limit) until a kink rejects, then bisect inside the bracket.
    """
    def margin(lam: float) -> float:
        return _effect_ratio_margin(design, lam, gammas_i, z, flip)

    if margin(lam_hat) >= 0:  # degenerate (e.g. zero variance at the estimate)
        return lam_hat
    direction = 1.0 if flip else -1.0
    if flip:
        side_kinks = np.sort(kinks[kinks > lam_hat])
    else:
        side_kinks = np.sort(kinks[kinks < lam_hat])[::-1]
    accepted = lam_hat
    rejected = None
    for g in side_kinks:
        if margin(float(g)) >= 0:
            rejected = float(g)
            break
        accepted = float(g)
    if rejected is None:
        span = max(1.0, float(np.ptp(kinks)) if kinks.size else 1.0)
        probe = accepted
        for _ in range(80):
            probe = probe + direction * span
            span *= 2.0
            if margin(probe) >= 0:
                rejected = probe
                break
            accepted = probe
        if rejected is None:
            return direction * np.inf  # this side never rejects: unbounded CI
    for _ in range(200):
        if abs(rejected - accepted) <= 1e-12 * max(1.0, abs(rejected), abs(accepted)):
            break
        mid = 0.5 * (accepted + rejected)
        if margin(mid) >= 0:
            rejected = mid
        else:
            accepted = mid
    return 0.5 * (accepted + rejected)


def effect_ratio_inference(design: MatchedDesign, gamma: float = 0.0,
                           alpha: float = 0.05) -> dict:
    """Point estimate and CI for the effect ratio under M_gamma.

    The CI inverts the one-sided biased-randomization test of lambda = l0
    over l0 (two level-alpha/2 tests give a two-sided level-alpha interval);
    at gamma = 0 this reproduces the randomization-inference CI.
    """
    num = float(np.sum(design.r_far - design.r_near))
    den = float(np.sum(design.d_far - design.d_near))
    if den == 0:
        raise ZeroDenominator("sum of (2Z-1)D is zero; the effect ratio is undefined")
    lam_hat = num / den

    model = SensitivityModel.from_design(design, gamma)
    z = norm.ppf(1 - alpha / 2)
    a = design.r_far - design.r_near
    b = design.d_far - design.d_near
    nz = b != 0
    kinks = np.unique(a[nz] / b[nz])
    lower = _invert_side(design, model.gammas_i, z, flip=False, kinks=kinks, lam_hat=lam_hat)
    upper = _invert_side(design, model.gammas_i, z, flip=True, kinks=kinks, lam_hat=lam_hat)
    return {"lambda_hat": lam_hat, "ci": (lower, upper), "alpha": alpha,
            "gamma": gamma, "n_pairs": design.n_pairs}


def gamma_from_Gamma_cap(gamma_cap: float, design: MatchedDesign) -> float:
    """Translate a uniform odds cap into the dose-dependent model's gamma."""
    if gamma_cap < 1:
        raise ValueError("Gamma cap must be >= 1")
    max_gap = float(design.dose_gaps.max()) if design.n_pairs else 0.0
    if max_gap <= 0:
        raise AllZeroGaps("all dose gaps are zero; cannot calibrate gamma")
    return float(np.log(gamma_cap) / max_gap)


def write_k1_sweep(design: MatchedDesign, k0: float, k1_grid, gamma: float,
                   alpha: float, path) -> list[dict]:
    """CSV rows (K1, lb_lower, ub_upper) for bound-versus-K1 plots."""
    rows = []
    lb_lower = lower_limit_biased(design, k0, gamma, alpha / 2)
    for k1 in k1_grid:
        rows.append({"K1": float(k1), "lb_lower": lb_lower,
                     "ub_upper": upper_limit_biased(design, float(k1), gamma, alpha / 2)})
    if path is not None:
        import csv as _csv
        with open(path, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=["K1", "lb_lower", "ub_upper"])
            writer.writeheader()
            writer.writerows(rows)
    return rows
