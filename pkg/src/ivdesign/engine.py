"""Discrepancy-matrix construction for sink-augmented non-bipartite matching.

Observational pairs are scored with a rank-based Mahalanobis distance plus
soft propensity and dose calipers; observational-sink pairs use a reversed
distance (a large constant minus the covariate distance) with a
generalizability caliper, so units that least resemble the template are the
cheapest to eliminate.  Sink-sink and diagonal entries carry the structural
constant M.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .errors import ConfigInfeasible, DegenerateCovariance, SeparationDetected
from .logit import irls_logit
from .model import Template, Unit

__all__ = [
    "DesignConfig",
    "DiscrepancyMatrix",
    "RankMahalanobis",
    "rank_mahalanobis",
    "fit_propensity",
    "build_discrepancy_matrix",
    "dump_matrix",
    "load_matrix",
    "MATRIX_MAGIC",
]

MATRIX_MAGIC = b"NBPM"


@dataclass(frozen=True)
class DesignConfig:
    """Caliper widths, penalty rates and big-M constants.

    ``big_const`` (B) and ``inf_const`` (M) default to None, meaning they are
    derived at build time as B = 1.5 x the largest finite observational
    discrepancy and M = 10 x B; explicit values are validated against
    M > B > max finite delta.
    """

    dose_caliper_c: float = 0.0
    dose_penalty: float = 0.0
    ps_caliper_c: float = 0.0
    ps_penalty: float = 0.0
    gen_caliper_c: float = 0.0
    gen_penalty: float = 0.0
    big_const: float | None = None
    inf_const: float | None = None
    exact_match: tuple = ()

    def __post_init__(self):
        for name in ("dose_penalty", "ps_penalty", "gen_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exact_match"] = list(self.exact_match)
        return d


@dataclass(frozen=True)
class DiscrepancyMatrix:
    """Dense symmetric (n+e) x (n+e) matrix of finite non-negative weights."""

    weights: np.ndarray
    ids: tuple
    n_units: int
    n_sinks: int
    b_const: float
    m_const: float
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def is_sink(self, index: int) -> bool:
        return index >= self.n_units


class RankMahalanobis:
    """Pairwise rank-based Mahalanobis distance over a pooled sample.

    Columns are replaced by average ranks over the pooled rows; the rank
    covariance is inverted with a pseudo-inverse when singular.  Distances
    are Euclidean in the whitened rank coordinates.
    """

    def __init__(self, x_pooled: np.ndarray):
        x = np.asarray(x_pooled, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
            raise ValueError("need at least 2 rows and 1 covariate column")
        ranks = rankdata(x, axis=0, method="average").astype(float)
        cov = np.cov(ranks, rowvar=False)
        cov = np.atleast_2d(cov)
        if not np.any(np.diag(cov) > 0):
            raise DegenerateCovariance("all covariate columns are constant")
        eigval, eigvec = np.linalg.eigh(cov)
        tol = max(cov.shape[0], 1) * np.finfo(float).eps * float(np.max(np.abs(eigval)))
        inv_sqrt = np.where(eigval > tol, 1.0 / np.sqrt(np.maximum(eigval, tol)), 0.0)
        self._whitened = ranks @ eigvec * inv_sqrt
        self.ranks = ranks

    def distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self._whitened[i] - self._whitened[j]))

    def pairwise(self, rows_a, rows_b) -> np.ndarray:
        return cdist(self._whitened[rows_a], self._whitened[rows_b])


def rank_mahalanobis(units: list[Unit], template: Template | None = None) -> RankMahalanobis:
    """Distance function over the pooled covariates of units (and sinks)."""
    blocks = [np.vstack([u.x for u in units])]
    if template is not None and template.size:
        blocks.append(template.x)
    return RankMahalanobis(np.vstack(blocks))


def fit_propensity(units: list[Unit], label: str, template: Template | None = None) -> np.ndarray:
    """Logistic score per unit for one of the two caliper labels.

    ``"high-dose-half"`` labels units above the median dose and returns one
    score per unit; ``"template-membership"`` pools units with the template
    sinks, labels sink rows 1, and returns scores for all pooled rows (units
    first, sinks after).
    """
    if len(units) < 2:
        raise ValueError("need at least 2 units")
    x_units = np.vstack([u.x for u in units])
    if label == "high-dose-half":
        dose = np.array([u.z_dose for u in units])
        y = (dose > np.median(dose)).astype(float)
        x = x_units
    elif label == "template-membership":
        if template is None or template.size == 0:
            raise ValueError("template-membership scores need a non-empty template")
        x = np.vstack([x_units, template.x])
        y = np.concatenate([np.zeros(len(units)), np.ones(template.size)])
    else:
        raise ValueError(f"unknown propensity label {label!r}")
    if y.min() == y.max():
        raise ValueError("both label classes must be non-empty")
    fit = irls_logit(x, y)
    if fit.separated:
        warnings.warn(f"separation detected fitting {label} scores; clamping",
                      SeparationDetected, stacklevel=2)
    return fit.probs


def _exact_mismatch(units: list[Unit]) -> np.ndarray:
    keys = [u.exact_keys for u in units]
    n = len(keys)
    out = np.zeros((n, n), dtype=bool)
    codes: dict[tuple, int] = {}
    arr = np.array([codes.setdefault(k, len(codes)) for k in keys])
    out = arr[:, None] != arr[None, :]
    return out


def build_discrepancy_matrix(units: list[Unit], template: Template | None,
                             config: DesignConfig) -> DiscrepancyMatrix:
    """Assemble the full (n+e) x (n+e) matrix fed to the matcher.

    If n+e is odd one extra sink with mean-template covariates (mean-cohort
    when there is no template) is appended so a perfect matching exists; the
    addition is recorded in provenance.
    """
    n = len(units)
    if n < 2:
        raise ValueError("need at least 2 units to match")
    sink_x = template.x.copy() if (template is not None and template.size) else np.empty((0, units[0].x.shape[0]))
    auto_sink = (n + sink_x.shape[0]) % 2 == 1
    if auto_sink:
        fill = sink_x.mean(axis=0) if sink_x.shape[0] else np.vstack([u.x for u in units]).mean(axis=0)
        sink_x = np.vstack([sink_x, fill])
    e = sink_x.shape[0]
    pooled_template = Template(x=sink_x) if e else None

    dist = rank_mahalanobis(units, pooled_template)
    obs = np.arange(n)
    d_oo = dist.pairwise(obs, obs)

    delta = d_oo.copy()
    if config.ps_penalty > 0:
        ps = fit_propensity(units, "high-dose-half")
        ps_gap = np.abs(ps[:, None] - ps[None, :])
        delta += config.ps_penalty * np.maximum(0.0, ps_gap - config.ps_caliper_c)
    if config.dose_penalty > 0:
        dose = np.array([u.z_dose for u in units])
        dose_gap = np.abs(dose[:, None] - dose[None, :])
        delta += config.dose_penalty * np.maximum(0.0, config.dose_caliper_c - dose_gap)

    if e:
        sinks = np.arange(n, n + e)
        d_os = dist.pairwise(obs, sinks)
        max_finite = max(float(delta[~np.eye(n, dtype=bool)].max()) if n > 1 else 0.0,
                         float(d_os.max()))
    else:
        d_os = np.empty((n, 0))
        max_finite = float(delta[~np.eye(n, dtype=bool)].max())

    b_const = config.big_const if config.big_const is not None else 1.5 * max(max_finite, 1.0)
    m_const = config.inf_const if config.inf_const is not None else 10.0 * b_const
    if not (m_const > b_const):
        raise ConfigInfeasible(f"inf_const M={m_const} must exceed big_const B={b_const}")
    if not (b_const > max_finite):
        raise ConfigInfeasible(
            f"big_const B={b_const} must exceed the max finite discrepancy {max_finite}")

    if config.exact_match:
        delta += m_const * _exact_mismatch(units)

    dim = n + e
    w = np.empty((dim, dim), dtype=float)
    w[:n, :n] = delta
    if e:
        big = b_const - d_os
        if config.gen_penalty > 0:
            sel = fit_propensity(units, "template-membership", pooled_template)
            sel_gap = np.abs(sel[:n, None] - sel[None, n:])
            big += config.gen_penalty * np.maximum(0.0, config.gen_caliper_c - sel_gap)
        w[:n, n:] = big
        w[n:, :n] = big.T
        w[n:, n:] = m_const
    np.fill_diagonal(w, m_const)

    assert w.min() >= 0.0, "matrix entries must be non-negative after construction"
    assert np.array_equal(w, w.T), "discrepancy matrix must be symmetric"

    ids = tuple(u.id for u in units) + tuple(
        f"sink{k}" if not (auto_sink and k == e - 1) else "sink_auto" for k in range(e))
    prov = {"auto_sink": auto_sink, "config": config.to_dict(),
            "n_units": n, "n_sinks": e}
    return DiscrepancyMatrix(weights=w, ids=ids, n_units=n, n_sinks=e,
                             b_const=float(b_const), m_const=float(m_const),
                             provenance=prov)


# ---------------------------------------------------------------------------
# Binary dump (debugging interface for the solver)
# ---------------------------------------------------------------------------
# 16-byte header: magic "NBPM", u32 dimension, u32 reserved, u32 padding;
# then row-major float64, little-endian.

def dump_matrix(matrix: DiscrepancyMatrix | np.ndarray, path) -> None:
    w = matrix.weights if isinstance(matrix, DiscrepancyMatrix) else np.asarray(matrix)
    dim = w.shape[0]
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<III", dim, 0, 0))
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != MATRIX_MAGIC:
            raise ValueError(f"{path} is not a NBPM matrix dump")
        dim, _, _ = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != dim * dim:
        raise ValueError(f"matrix dump truncated: expected {dim * dim} entries, got {data.size}")
    return data.reshape(dim, dim).astype(float)
