"""Exact minimum-weight perfect matching and matched-design extraction.

The solver is a blossom-style primal-dual method (O(n^3) worst case) whose
hot loop lives in :mod:`ivdesign._blossom`.  On termination the dual
variables are returned and certify optimality:

    y_u + y_v + sum of blossom duals over blossoms containing both u and v
        <= w(u, v)   for every edge, with equality on matched edges,

blossom duals <= 0, and every blossom with a nonzero dual is full.  The
certified lower bound then equals the matched weight exactly (up to float
tolerance), which :func:`verify_certificate` checks edge by edge.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._blossom import solve_max_profit
from .errors import OddDimension, StructuralViolation, TooLarge
from .model import MatchedDesign, Template, Unit, make_pair

__all__ = [
    "Pairing",
    "BlossomDual",
    "CertificateReport",
    "min_weight_perfect_matching",
    "brute_force_matching",
    "verify_certificate",
    "extract_design",
    "pairing_to_csv",
    "EPS",
]

EPS = 1e-9  # relative epsilon for dual-slack comparisons


@dataclass(frozen=True)
class BlossomDual:
    members: tuple
    dual: float  # <= 0 in the minimization form


@dataclass(frozen=True)
class Pairing:
    """A perfect matching: ``partner[v]`` is the vertex matched to v."""

    partner: np.ndarray
    total_weight: float
    vertex_duals: np.ndarray
    blossoms: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.partner)
        if np.any(p[p] != np.arange(p.size)) or np.any(p == np.arange(p.size)):
            raise ValueError("partner array must be a fixed-point-free involution")

    def edges(self):
        return [(v, int(self.partner[v])) for v in range(self.partner.size)
                if v < self.partner[v]]


def _total_weight(weights: np.ndarray, partner: np.ndarray) -> float:
    total = 0.0
    for v in range(partner.size):
        if v < partner[v]:
            total += float(weights[v, partner[v]])
    return total


def _as_matrix(weights, dim: int | None) -> np.ndarray:
    if callable(weights):
        if dim is None:
            raise ValueError("dim is required when weights is a callback")
        w = np.empty((dim, dim), dtype=float)
        for i in range(dim):
            w[i, i] = 0.0
            for j in range(i + 1, dim):
                w[i, j] = w[j, i] = float(weights(i, j))
        return w
    w = np.asarray(weights, dtype=float)
    if hasattr(weights, "weights"):  # DiscrepancyMatrix duck-typing
        w = np.asarray(weights.weights, dtype=float)
    return w


def min_weight_perfect_matching(weights, dim: int | None = None) -> Pairing:
    """Perfect matching of provably minimum total weight.

    ``weights`` may be a dense symmetric matrix, a DiscrepancyMatrix, or a
    pure callback ``f(i, j) -> weight`` (with ``dim`` given), in which case
    the matrix is generated on the fly.  Deterministic: ties are broken by
    the fixed lowest-vertex-index scan order during augmentation.
    """
    w = _as_matrix(weights, dim)
    n = w.shape[0]
    if n % 2 != 0 or n < 2:
        raise OddDimension(f"perfect matching needs an even dimension >= 2, got {n}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if w.min() < 0:
        raise ValueError("weights must be non-negative")
    scale = max(1.0, float(np.abs(w).max()))
    tol = 2.0 * EPS * scale  # slack units are doubled inside the kernel

    mate, dualvar, blossomdual, parent, base, childs, childs_n = solve_max_profit(-w, tol)
    if np.any(mate < 0):
        raise RuntimeError("kernel failed to produce a perfect matching")

    nvert = n
    blossoms = []
    for b in range(nvert, 2 * nvert):
        if base[b] >= 0 and childs_n[b - nvert] > 0:
            members = _leaves(b, nvert, childs, childs_n)
            blossoms.append(BlossomDual(members=tuple(members), dual=float(-blossomdual[b])))
    return Pairing(
        partner=mate.astype(np.int64),
        total_weight=_total_weight(w, mate),
        vertex_duals=-dualvar / 2.0,
        blossoms=tuple(blossoms),
    )


def _leaves(b, nvert, childs, childs_n):
    out = []
    stack = [b]
    while stack:
        t = stack.pop()
        if t < nvert:
            out.append(int(t))
        else:
            row = t - nvert
            stack.extend(int(childs[row, k]) for k in range(childs_n[row]))
    return sorted(out)


def brute_force_matching(weights, dim: int | None = None) -> Pairing:
    """Exhaustive minimum over all (n-1)!! perfect matchings; test oracle."""
    w = _as_matrix(weights, dim)
    n = w.shape[0]
    if n % 2 != 0 or n < 2:
        raise OddDimension(f"perfect matching needs an even dimension >= 2, got {n}")
    if n > 12:
        raise TooLarge(f"brute force is limited to dimension 12, got {n}")

    best_total = np.inf
    best = None
    partner = np.full(n, -1, dtype=np.int64)

    def recurse(acc: float):
        nonlocal best_total, best
        free = [v for v in range(n) if partner[v] < 0]
        if not free:
            if acc < best_total:
                best_total = acc
                best = partner.copy()
            return
        v = free[0]
        for u in free[1:]:
            partner[v], partner[u] = u, v
            recurse(acc + float(w[v, u]))
            partner[v], partner[u] = -1, -1

    recurse(0.0)
    assert best is not None
    return Pairing(partner=best, total_weight=_total_weight(w, best),
                   vertex_duals=np.zeros(n), blossoms=())


@dataclass(frozen=True)
class CertificateReport:
    feasible: bool            # every edge: y_u + y_v + blossom sums <= w + tol
    matched_tight: bool       # matched edges meet the constraint with equality
    duals_signed: bool        # blossom duals <= 0 (minimization form)
    blossoms_full: bool       # nonzero-dual blossoms contain (|B|-1)/2 matched edges
    duality_gap: float        # matched weight minus the certified dual bound
    max_violation: float

    @property
    def ok(self) -> bool:
        return (self.feasible and self.matched_tight and self.duals_signed
                and self.blossoms_full)


def verify_certificate(weights, pairing: Pairing, tol: float | None = None) -> CertificateReport:
    """Check the dual optimality certificate for a solved pairing."""
    w = _as_matrix(weights, None if not callable(weights) else pairing.partner.size)
    n = w.shape[0]
    scale = max(1.0, float(np.abs(w).max()))
    if tol is None:
        tol = 10.0 * EPS * scale * max(1, n)

    y = pairing.vertex_duals
    adjusted = y[:, None] + y[None, :]
    for blossom in pairing.blossoms:
        members = np.array(blossom.members)
        mask = np.zeros(n, dtype=bool)
        mask[members] = True
        adjusted[np.ix_(mask, mask)] += blossom.dual
    slack = w - adjusted
    off = ~np.eye(n, dtype=bool)

    feasible = bool(slack[off].min() >= -tol)
    max_violation = float(max(0.0, -slack[off].min()))

    matched_tight = True
    dual_bound = float(y.sum())
    for v, u in pairing.edges():
        if abs(slack[v, u]) > tol:
            matched_tight = False

    duals_signed = all(b.dual <= tol for b in pairing.blossoms)
    blossoms_full = True
    partner = pairing.partner
    for blossom in pairing.blossoms:
        members = set(blossom.members)
        dual_bound += blossom.dual * (len(members) - 1) / 2
        if abs(blossom.dual) > tol:
            inside = sum(1 for v in members if partner[v] in members) // 2
            if inside != (len(members) - 1) // 2:
                blossoms_full = False

    gap = pairing.total_weight - dual_bound
    return CertificateReport(
        feasible=feasible, matched_tight=matched_tight, duals_signed=duals_signed,
        blossoms_full=blossoms_full, duality_gap=float(gap), max_violation=max_violation,
    )


def extract_design(pairing: Pairing, units: list[Unit], template: Template | None,
                   provenance: dict | None = None) -> MatchedDesign:
    """Split a solved pairing into retained pairs and eliminated units."""
    n = len(units)
    pairs = []
    eliminated = []
    for v, u in pairing.edges():
        v_sink, u_sink = v >= n, u >= n
        if v_sink and u_sink:
            raise StructuralViolation(
                f"sink-sink pair ({v}, {u}) selected; M is too small relative to penalties")
        if v_sink or u_sink:
            eliminated.append(units[u if v_sink else v])
        else:
            pairs.append(make_pair(units[v], units[u]))
    pairs.sort(key=lambda p: (p.near.z_dose, str(p.near.id)))
    eliminated.sort(key=lambda x: str(x.id))
    prov = dict(provenance or {})
    prov.setdefault("n_units", n)
    prov.setdefault("n_sinks", pairing.partner.size - n)
    prov["total_weight"] = pairing.total_weight
    return MatchedDesign(pairs=tuple(pairs), eliminated=tuple(eliminated), provenance=prov)


def pairing_to_csv(pairing: Pairing, weights, ids, path) -> None:
    """Emit the pairing as CSV rows (unit_id_a, unit_id_b, weight)."""
    w = _as_matrix(weights, pairing.partner.size)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id_a", "unit_id_b", "weight"])
        for v, u in pairing.edges():
            writer.writerow([ids[v], ids[u], float(w[v, u])])
