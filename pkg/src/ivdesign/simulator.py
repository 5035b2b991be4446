"""Monte Carlo studies: design-stage bound narrowing and test validity.

Study 1 generates a cohort with per-participant dose-response thresholds,
matches it under increasing dose calipers, derives compliance classes from
the two within-pair doses, and reports the mean width of the partial
identification bounds per factor cell.

Study 2 samples matched pairs directly (two IV doses drawn with
replacement from a dose pool), assigns the within-pair dose order under a
randomized or dose-dependent biased mechanism, and records the coverage of
the randomization-based and biased-randomization-based one-sided 95%
confidence intervals for the lower bound.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from importlib import resources

import numpy as np

from .engine import DesignConfig, build_discrepancy_matrix
from .errors import MissingDosePool
from .inference import lower_limit_biased, lower_limit_randomization
from .matching import extract_design, min_weight_perfect_matching
from .model import (ALWAYS_TAKER, COMPLIER, NEVER_TAKER, MatchedDesign, MatchedPair,
                    PotentialTable, Unit)

__all__ = [
    "Study1Config",
    "Study2Config",
    "Study1Population",
    "gen_study1_population",
    "realize_study1",
    "run_study1",
    "run_study1_grid",
    "gen_study2_pairs",
    "run_study2",
    "run_study2_grid",
    "load_dose_pool",
    "write_manifest",
]

FACTOR1 = ("randomized", "covariate-dependent")
FACTOR3 = ("independent-effect", "compliance-dependent-effect")
K_BY_FACTOR3 = {"independent-effect": (4.0, 6.0), "compliance-dependent-effect": (1.0, 6.0)}
DEFAULT_CALIPERS = (0.0, 7.0, 15.0)
DOSE_PENALTY = 100.0  # distance units per minute of caliper shortfall


@dataclass(frozen=True)
class Study1Config:
    n_participants: int = 1000
    factor1: str = "randomized"
    calipers: tuple = DEFAULT_CALIPERS
    factor3: str = "independent-effect"
    replicates: int = 200
    seed: int = 20240
    workers: int = 1

    def __post_init__(self):
        if self.n_participants % 2:
            raise ValueError("N must be even")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.factor1 not in FACTOR1:
            raise ValueError(f"factor1 must be one of {FACTOR1}")
        if self.factor3 not in FACTOR3:
            raise ValueError(f"factor3 must be one of {FACTOR3}")


@dataclass(frozen=True)
class Study2Config:
    n_pairs: int = 1000
    gamma: float = 0.0
    mechanism: str = "I"
    outcome: str = "continuous"
    scenario: int = 1
    replicates: int = 200
    seed: int = 20240
    never_taker_alpha: float = 0.05
    dose_pool_path: str | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.mechanism not in ("I", "II"):
            raise ValueError("mechanism must be 'I' or 'II'")
        if self.outcome not in ("continuous", "binary"):
            raise ValueError("outcome must be 'continuous' or 'binary'")
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")

    @property
    def k_bounds(self) -> tuple[float, float]:
        return (0.0, 0.0) if self.scenario == 1 else (-1.0, 1.0)


# ---------------------------------------------------------------------------
# Study 1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Study1Population:
    """Pre-match cohort: covariates, observed doses, per-unit thresholds."""

    x: np.ndarray        # (N, 5)
    dose: np.ndarray     # (N,)
    threshold: np.ndarray
    r_d0: np.ndarray
    factor1: str


def gen_study1_population(config: Study1Config, rng: np.random.Generator) -> Study1Population:
    """Draw covariates, doses, treatment thresholds and control outcomes.

    Doses are Unif[5, 50] when randomized, and 4*X2 + 6*X3 + Unif[0, 2]
    when covariate-dependent.  Each participant's treatment uptake is the
    step function 1{dose > T} with T ~ Unif[20, 30].
    """
    n = config.n_participants
    x = np.column_stack([
        rng.normal(0.0, 1.0, n),
        rng.normal(2.0, 5.0, n),
        rng.uniform(1.0, 3.0, n),
        rng.uniform(-2.0, 0.0, n),
        rng.binomial(1, 0.5, n).astype(float),
    ])
    if config.factor1 == "randomized":
        dose = rng.uniform(5.0, 50.0, n)
    else:
        dose = 4.0 * x[:, 1] + 6.0 * x[:, 2] + rng.uniform(0.0, 2.0, n)
    threshold = rng.uniform(20.0, 30.0, n)
    r_d0 = rng.normal(0.0, 1.0, n)
    return Study1Population(x=x, dose=dose, threshold=threshold, r_d0=r_d0,
                            factor1=config.factor1)


def match_study1(pop: Study1Population, caliper: float) -> np.ndarray:
    """Optimal non-bipartite matching of the cohort; returns the partner array."""
    units = [Unit(id=str(i), x=pop.x[i], z_dose=float(pop.dose[i]), d=0, r=0.0)
             for i in range(pop.x.shape[0])]
    cfg = DesignConfig(dose_caliper_c=float(caliper),
                       dose_penalty=DOSE_PENALTY if caliper > 0 else 0.0)
    dm = build_discrepancy_matrix(units, None, cfg)
    return min_weight_perfect_matching(dm.weights).partner


def realize_study1(pop: Study1Population, partner: np.ndarray, factor3: str,
                   rng: np.random.Generator) -> tuple[MatchedDesign, PotentialTable]:
    """Derive compliance classes from the pair doses and draw the effects.

    Treatment effects are Unif[4, 6] regardless of class under
    "independent-effect", and Unif[2, 5] / Unif[4, 6] / Unif[1, 3] for
    compliers / always-takers / never-takers under
    "compliance-dependent-effect".
    """
    n = pop.x.shape[0]
    z_lo = np.minimum(pop.dose, pop.dose[partner])
    z_hi = np.maximum(pop.dose, pop.dose[partner])
    d_t = (z_hi > pop.threshold).astype(int)
    d_c = (z_lo > pop.threshold).astype(int)
    cls = np.where(d_t == 0, NEVER_TAKER, np.where(d_c == 1, ALWAYS_TAKER, COMPLIER))

    if factor3 == "independent-effect":
        effect = rng.uniform(4.0, 6.0, n)
    else:
        draws = np.column_stack([rng.uniform(1.0, 3.0, n),   # never-takers
                                 rng.uniform(2.0, 5.0, n),   # compliers
                                 rng.uniform(4.0, 6.0, n)])  # always-takers
        effect = draws[np.arange(n), cls]
    r_d1 = pop.r_d0 + effect
    r_t = np.where(cls == NEVER_TAKER, pop.r_d0, r_d1)
    r_c = np.where(cls == ALWAYS_TAKER, r_d1, pop.r_d0)

    d_obs = (pop.dose > pop.threshold).astype(int)
    r_obs = np.where(d_obs == 1, r_d1, pop.r_d0)

    pairs = []
    order = []
    for i in range(n):
        j = int(partner[i])
        if i > j:
            continue
        near, far = (i, j) if (pop.dose[i], str(i)) <= (pop.dose[j], str(j)) else (j, i)
        pairs.append(MatchedPair(
            near=Unit(id=str(near), x=pop.x[near], z_dose=float(pop.dose[near]),
                      d=int(d_obs[near]), r=float(r_obs[near])),
            far=Unit(id=str(far), x=pop.x[far], z_dose=float(pop.dose[far]),
                     d=int(d_obs[far]), r=float(r_obs[far]))))
        order.extend([near, far])
    idx = np.array(order)
    table = PotentialTable(d_t=d_t[idx], d_c=d_c[idx], r_t=r_t[idx], r_c=r_c[idx],
                           r_d0=pop.r_d0[idx], r_d1=r_d1[idx], cls=cls[idx])
    design = MatchedDesign(pairs=tuple(pairs),
                           provenance={"n_units": n, "n_sinks": 0, "study": 1})
    return design, table


def _study1_replicate(args) -> dict:
    stream, n, calipers = args
    rng = np.random.default_rng(stream)
    widths: dict[tuple, float] = {}
    for factor1 in FACTOR1:
        cfg = Study1Config(n_participants=n, factor1=factor1, calipers=tuple(calipers),
                           replicates=1)
        pop = gen_study1_population(cfg, rng)
        for caliper in calipers:
            partner = match_study1(pop, caliper)
            for factor3 in FACTOR3:
                _, table = realize_study1(pop, partner, factor3, rng)
                k0, k1 = K_BY_FACTOR3[factor3]
                lb, ub = table.bounds(k0, k1)
                widths[(factor1, factor3, caliper)] = ub - lb
    return widths


def run_study1_grid(n: int = 1000, replicates: int = 200, seed: int = 20240,
                    calipers=DEFAULT_CALIPERS, workers: int = 1) -> dict:
    """Mean bound widths for every (factor1 x factor3) x caliper cell.

    Matchings are shared across factor-3 scenarios (the effect model does
    not feed back into the matching).  Replicates run on independent seed
    substreams, so the result is identical for any worker count.
    """
    streams = np.random.SeedSequence(seed).spawn(replicates)
    jobs = [(s, n, tuple(calipers)) for s in streams]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_study1_replicate, jobs, chunksize=4))
    else:
        results = [_study1_replicate(j) for j in jobs]
    table = {}
    for factor1 in FACTOR1:
        for factor3 in FACTOR3:
            table[(factor1, factor3)] = [
                float(np.mean([r[(factor1, factor3, c)] for r in results]))
                for c in calipers]
    return {"calipers": list(calipers), "cells": table, "replicates": replicates,
            "n": n, "seed": seed}


def run_study1(config: Study1Config) -> dict:
    """Mean widths across the config's calipers for one factor cell."""
    streams = np.random.SeedSequence(config.seed).spawn(config.replicates)
    widths = np.zeros(len(config.calipers))
    k0, k1 = K_BY_FACTOR3[config.factor3]
    for rep, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        pop = gen_study1_population(config, rng)
        for ci, caliper in enumerate(config.calipers):
            partner = match_study1(pop, caliper)
            _, table = realize_study1(pop, partner, config.factor3, rng)
            lb, ub = table.bounds(k0, k1)
            widths[ci] += ub - lb
    widths /= config.replicates
    return {"factor1": config.factor1, "factor3": config.factor3,
            "calipers": list(config.calipers), "mean_widths": widths.tolist()}


# ---------------------------------------------------------------------------
# Study 2
# ---------------------------------------------------------------------------

def load_dose_pool(path=None) -> np.ndarray:
    """Dose pool for study 2; defaults to the bundled synthetic pool."""
    if path is None:
        try:
            ref = resources.files("ivdesign").joinpath("data/dose_pool.csv")
            text = ref.read_text()
        except (FileNotFoundError, ModuleNotFoundError) as exc:
            raise MissingDosePool("bundled dose pool missing") from exc
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except FileNotFoundError as exc:
            raise MissingDosePool(f"dose pool file {path} not found") from exc
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    start = 1 if not _is_float(lines[0]) else 0
    pool = np.array([float(v) for v in lines[start:]])
    if pool.size == 0:
        raise MissingDosePool("dose pool is empty")
    return pool


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def gen_study2_pairs(config: Study2Config, rng: np.random.Generator,
                     pool: np.ndarray | None = None
                     ) -> tuple[MatchedDesign, PotentialTable, float]:
    """One synthetic matched cohort plus its true lower bound LB0.

    Compliance classes follow P{complier} : P{always} : P{never} =
    1 : exp(-0.2 * gap) : exp(-alpha * max dose); within each pair the
    member with the larger control outcome is favored to receive the
    larger dose with probability pi_i (Unif[1/2, Gamma_i/(1+Gamma_i)]
    under Mechanism I, the upper endpoint itself under Mechanism II).
    """
    if pool is None:
        pool = load_dose_pool(config.dose_pool_path)
    n_pairs = config.n_pairs
    doses = rng.choice(pool, size=(n_pairs, 2), replace=True)
    z_lo = doses.min(axis=1)
    z_hi = doses.max(axis=1)
    gap = z_hi - z_lo

    p_com = np.ones(n_pairs)
    p_alw = np.exp(-0.2 * gap)
    p_nev = np.exp(-config.never_taker_alpha * z_hi)
    norm_c = p_com + p_alw + p_nev
    probs = np.column_stack([p_nev, p_com, p_alw]) / norm_c[:, None]

    u = rng.random((n_pairs, 2))
    cum = probs.cumsum(axis=1)
    cls = (u[:, :, None] > cum[:, None, :]).sum(axis=2)  # (n_pairs, 2) in {0,1,2}

    if config.outcome == "continuous":
        r_d0 = rng.normal(0.0, 1.0, (n_pairs, 2))
        if config.scenario == 1:
            r_d1 = r_d0.copy()
        else:
            r_d1 = r_d0 + rng.uniform(-1.0, 1.0, (n_pairs, 2))
    else:
        base_p = 1.0 / (1.0 + np.exp(-0.5))
        r_d0 = (rng.random((n_pairs, 2)) < base_p).astype(float)
        if config.scenario == 1:
            r_d1 = r_d0.copy()
        else:
            tau = rng.uniform(-1.0, 1.0, (n_pairs, 2))
            p1 = 1.0 / (1.0 + np.exp(-(0.5 + tau)))
            r_d1 = (rng.random((n_pairs, 2)) < p1).astype(float)

    d_t = (cls >= COMPLIER).astype(int)
    d_c = (cls == ALWAYS_TAKER).astype(int)
    r_t = np.where(cls == NEVER_TAKER, r_d0, r_d1)
    r_c = np.where(cls == ALWAYS_TAKER, r_d1, r_d0)

    gammas_i = np.exp(config.gamma * gap)
    hi_pi = gammas_i / (1.0 + gammas_i)
    if config.mechanism == "I":
        pi = rng.uniform(0.5, hi_pi)
    else:
        pi = hi_pi

    # The favored member (larger r_d0; ties split by coin) takes the far slot
    # with probability pi_i.
    favored = np.where(r_d0[:, 0] > r_d0[:, 1], 0,
                       np.where(r_d0[:, 0] < r_d0[:, 1], 1,
                                (rng.random(n_pairs) < 0.5).astype(int)))
    fav_far = rng.random(n_pairs) < pi
    far_member = np.where(fav_far, favored, 1 - favored)

    pairs = []
    order_cols = np.empty((n_pairs, 2), dtype=int)
    for i in range(n_pairs):
        f = int(far_member[i])
        near_m, far_m = 1 - f, f
        order_cols[i] = (near_m, far_m)
        pairs.append(MatchedPair(
            near=Unit(id=f"p{i}n", x=np.empty(0), z_dose=float(z_lo[i]),
                      d=int(d_c[i, near_m]), r=float(r_c[i, near_m])),
            far=Unit(id=f"p{i}f", x=np.empty(0), z_dose=float(z_hi[i]),
                     d=int(d_t[i, far_m]), r=float(r_t[i, far_m]))))

    rows = np.arange(n_pairs)[:, None]
    flat = lambda a: a[rows, order_cols].reshape(-1)  # noqa: E731
    table = PotentialTable(d_t=flat(d_t), d_c=flat(d_c), r_t=flat(r_t), r_c=flat(r_c),
                           r_d0=flat(r_d0), r_d1=flat(r_d1), cls=flat(cls))
    design = MatchedDesign(pairs=tuple(pairs),
                           provenance={"n_units": 2 * n_pairs, "n_sinks": 0, "study": 2,
                                       "gamma": config.gamma, "mechanism": config.mechanism})
    lb0 = table.bounds(*config.k_bounds)[0]
    return design, table, float(lb0)


def run_study2(config: Study2Config, alpha: float = 0.05) -> dict:
    """Coverage of the two one-sided 95% lower confidence limits for LB."""
    pool = load_dose_pool(config.dose_pool_path)
    streams = np.random.SeedSequence(config.seed).spawn(config.replicates)
    k0, _ = config.k_bounds
    cover_rand = 0
    cover_bias = 0
    for stream in streams:
        rng = np.random.default_rng(stream)
        design, _, lb0 = gen_study2_pairs(config, rng, pool=pool)
        if lower_limit_randomization(design, k0, alpha) <= lb0:
            cover_rand += 1
        if lower_limit_biased(design, k0, config.gamma, alpha) <= lb0:
            cover_bias += 1
    return {"mechanism": config.mechanism, "n_pairs": config.n_pairs,
            "gamma": config.gamma, "scenario": config.scenario,
            "outcome": config.outcome, "replicates": config.replicates,
            "coverage_randomization": cover_rand / config.replicates,
            "coverage_biased": cover_bias / config.replicates}


def run_study2_grid(n_pairs_list=(100, 500, 1000, 2000), gammas=(0.0, 0.025, 0.05),
                    mechanisms=("I", "II"), scenario: int = 1,
                    outcome: str = "continuous", replicates: int = 200,
                    seed: int = 20240, dose_pool_path=None) -> list[dict]:
    rows = []
    for mech in mechanisms:
        for n_pairs in n_pairs_list:
            for gamma in gammas:
                cfg = Study2Config(n_pairs=n_pairs, gamma=gamma, mechanism=mech,
                                   outcome=outcome, scenario=scenario,
                                   replicates=replicates, seed=seed,
                                   dose_pool_path=dose_pool_path)
                rows.append(run_study2(cfg))
    return rows


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def write_manifest(path, config, seed: int, input_paths=()) -> dict:
    """JSON manifest with the config, seed and content hashes of inputs."""
    if hasattr(config, "__dataclass_fields__"):
        config = asdict(config)
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    manifest = {
        "config": config,
        "seed": seed,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "inputs": {},
    }
    for p in input_paths:
        with open(p, "rb") as fh:
            manifest["inputs"][str(p)] = hashlib.sha256(fh.read()).hexdigest()
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest
