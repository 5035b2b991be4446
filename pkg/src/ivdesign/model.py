"""Domain types, dataset validation and CSV ingestion.

Every other module consumes these types.  A cohort is a list of
:class:`Unit`; matching produces a :class:`MatchedDesign` whose pairs order
their two members by IV dose (``near`` = smaller dose, ``far`` = larger).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import EmptyDataset, MissingColumn, NonNumericCell

__all__ = [
    "Unit",
    "Template",
    "MatchedPair",
    "MatchedDesign",
    "PotentialTable",
    "SchemaMapping",
    "UnitList",
    "load_units",
    "make_pair",
    "validate_design",
    "NEVER_TAKER",
    "COMPLIER",
    "ALWAYS_TAKER",
]

NEVER_TAKER, COMPLIER, ALWAYS_TAKER = 0, 1, 2


@dataclass(frozen=True)
class Unit:
    """One study participant.

    ``x`` holds the covariate vector with categoricals already expanded to
    indicators; ``z_dose`` is the continuous IV dose; ``d`` the binary
    treatment received; ``r`` the outcome.
    """

    id: str
    x: np.ndarray
    z_dose: float
    d: int
    r: float
    exact_keys: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if x.ndim != 1:
            raise ValueError(f"unit {self.id}: covariate vector must be 1-d")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"unit {self.id}: covariates must be finite")
        if not math.isfinite(self.z_dose):
            raise ValueError(f"unit {self.id}: z_dose must be finite")
        if self.d not in (0, 1):
            raise ValueError(f"unit {self.id}: d must be 0 or 1, got {self.d!r}")


@dataclass(frozen=True)
class Template:
    """Covariate-only phantom units ("sinks") representing a target population."""

    x: np.ndarray  # (e, p)
    ids: tuple = ()

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", x)
        if not np.all(np.isfinite(x)):
            raise ValueError("template covariates must be finite")
        if not self.ids:
            object.__setattr__(self, "ids", tuple(f"sink{k}" for k in range(x.shape[0])))

    @property
    def size(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class MatchedPair:
    """Two units ordered by dose; ``dose_gap = far.z_dose - near.z_dose >= 0``."""

    near: Unit
    far: Unit

    def __post_init__(self):
        if self.near.id == self.far.id:
            raise ValueError("a pair cannot contain the same unit twice")
        if self.far.z_dose < self.near.z_dose:
            raise ValueError("pair members are not dose-ordered")

    @property
    def dose_gap(self) -> float:
        return self.far.z_dose - self.near.z_dose


def make_pair(a: Unit, b: Unit) -> MatchedPair:
    """Order two units into a pair.

    Dose ties are broken by ascending unit id, so pair orientation is
    invariant under input row permutation.
    """
    key_a, key_b = (a.z_dose, str(a.id)), (b.z_dose, str(b.id))
    near, far = (a, b) if key_a <= key_b else (b, a)
    return MatchedPair(near=near, far=far)


@dataclass(frozen=True)
class MatchedDesign:
    """The retained pairs plus units eliminated to sinks.

    ``provenance`` carries the design configuration snapshot, RNG seed and
    anything else needed to rebuild the design.
    """

    pairs: tuple
    eliminated: tuple = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "eliminated", tuple(self.eliminated))

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    # Columnar views used by the inference and diagnostics modules.
    @cached_property
    def r_far(self) -> np.ndarray:
        return np.array([p.far.r for p in self.pairs], dtype=float)

    @cached_property
    def r_near(self) -> np.ndarray:
        return np.array([p.near.r for p in self.pairs], dtype=float)

    @cached_property
    def d_far(self) -> np.ndarray:
        return np.array([p.far.d for p in self.pairs], dtype=float)

    @cached_property
    def d_near(self) -> np.ndarray:
        return np.array([p.near.d for p in self.pairs], dtype=float)

    @cached_property
    def dose_gaps(self) -> np.ndarray:
        return np.array([p.dose_gap for p in self.pairs], dtype=float)

    @cached_property
    def x_far(self) -> np.ndarray:
        return np.vstack([p.far.x for p in self.pairs]) if self.pairs else np.empty((0, 0))

    @cached_property
    def x_near(self) -> np.ndarray:
        return np.vstack([p.near.x for p in self.pairs]) if self.pairs else np.empty((0, 0))

    def subset(self, indices: Sequence[int], label: str | None = None) -> "MatchedDesign":
        """A new design restricted to the given pair indices."""
        prov = dict(self.provenance)
        if label is not None:
            prov["subgroup"] = label
        prov["parent_n_pairs"] = self.n_pairs
        return MatchedDesign(pairs=tuple(self.pairs[i] for i in indices),
                             eliminated=(), provenance=prov)

    def with_outcomes(self, outcome_by_id: dict) -> "MatchedDesign":
        """Rebind the outcome of every retained unit, keeping the pairing."""
        def rebind(u: Unit) -> Unit:
            return Unit(id=u.id, x=u.x, z_dose=u.z_dose, d=u.d,
                        r=float(outcome_by_id[u.id]), exact_keys=u.exact_keys)

        pairs = tuple(MatchedPair(near=rebind(p.near), far=rebind(p.far)) for p in self.pairs)
        return MatchedDesign(pairs=pairs, eliminated=self.eliminated,
                             provenance=dict(self.provenance))


@dataclass(frozen=True)
class PotentialTable:
    """Full potential-outcome bookkeeping; simulation only.

    Flat arrays over the 2I units, in pair-major order (units 2i and 2i+1
    belong to pair i).  ``cls`` holds compliance classes coded
    NEVER_TAKER/COMPLIER/ALWAYS_TAKER.
    """

    d_t: np.ndarray
    d_c: np.ndarray
    r_t: np.ndarray
    r_c: np.ndarray
    r_d0: np.ndarray
    r_d1: np.ndarray
    cls: np.ndarray

    def __post_init__(self):
        if np.any(self.d_t < self.d_c):
            raise ValueError("monotonicity violated: d_T < d_C for some unit")
        expect_dt = (self.cls >= COMPLIER).astype(int)
        expect_dc = (self.cls == ALWAYS_TAKER).astype(int)
        if np.any(self.d_t != expect_dt) or np.any(self.d_c != expect_dc):
            raise ValueError("compliance class inconsistent with (d_T, d_C)")
        r_t_expect = np.where(self.cls == NEVER_TAKER, self.r_d0, self.r_d1)
        r_c_expect = np.where(self.cls == ALWAYS_TAKER, self.r_d1, self.r_d0)
        if not (np.allclose(self.r_t, r_t_expect) and np.allclose(self.r_c, r_c_expect)):
            raise ValueError("(r_T, r_C) inconsistent with class and (r_d0, r_d1)")

    @property
    def n_units(self) -> int:
        return self.d_t.shape[0]

    def compliance_rate(self) -> float:
        """True compliance rate over the design (fraction of compliers)."""
        return float(np.mean(self.d_t - self.d_c))

    def itt(self) -> float:
        return float(np.mean(self.r_t - self.r_c))

    def bounds(self, k0: float, k1: float) -> tuple[float, float]:
        """Population LB and UB computed from the full table."""
        iota = self.compliance_rate()
        itt = self.itt()
        return itt - k0 * iota + k0, itt - k1 * iota + k1


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchemaMapping:
    """Column mapping for :func:`load_units`."""

    id: str
    dose: str
    treated: str
    outcome: str
    covariates: tuple
    exact: tuple = ()

    @staticmethod
    def from_dict(d: dict) -> "SchemaMapping":
        return SchemaMapping(
            id=d["id"], dose=d["dose"], treated=d["treated"], outcome=d["outcome"],
            covariates=tuple(d.get("covariates", ())), exact=tuple(d.get("exact", ())),
        )


class UnitList(list):
    """A list of units that remembers the encoded covariate column names."""

    feature_names: tuple = ()


def _numeric_column(frame: pd.DataFrame, col: str) -> np.ndarray:
    parsed = pd.to_numeric(frame[col], errors="coerce")
    bad = parsed.isna()
    if bad.any():
        row = int(np.argmax(bad.to_numpy()))
        raw = frame[col].iloc[row]
        value = "<missing>" if pd.isna(raw) else raw
        raise NonNumericCell(col, row, value)
    return parsed.to_numpy(dtype=float)


def load_units(path, schema: SchemaMapping) -> UnitList:
    """Read a CSV cohort and return validated units.

    Covariate columns that parse as numbers are taken as-is; any other
    covariate column is treated as categorical and one-hot encoded with its
    levels in lexicographic order (column ``c`` with level ``v`` becomes the
    indicator ``c=v``).  Missing values anywhere raise ``NonNumericCell``:
    there is no imputation.
    """
    frame = pd.read_csv(path)
    needed = [schema.id, schema.dose, schema.treated, schema.outcome,
              *schema.covariates, *schema.exact]
    for col in needed:
        if col not in frame.columns:
            raise MissingColumn(f"column {col!r} not found in {path}")
    if len(frame) == 0:
        raise EmptyDataset(f"{path} contains no data rows")

    dose = _numeric_column(frame, schema.dose)
    treated = _numeric_column(frame, schema.treated)
    outcome = _numeric_column(frame, schema.outcome)

    blocks: list[np.ndarray] = []
    names: list[str] = []
    for col in schema.covariates:
        try:
            blocks.append(_numeric_column(frame, col)[:, None])
            names.append(col)
        except NonNumericCell:
            raw = frame[col]
            if raw.isna().any():
                row = int(np.argmax(raw.isna().to_numpy()))
                raise NonNumericCell(col, row, "<missing>")
            values = raw.astype(str).to_numpy()
            levels = sorted(set(values))
            for lvl in levels:
                blocks.append((values == lvl).astype(float)[:, None])
                names.append(f"{col}={lvl}")
    x = np.hstack(blocks) if blocks else np.empty((len(frame), 0))

    ids = frame[schema.id].astype(str).to_numpy()
    if len(set(ids)) != len(ids):
        raise ValueError("unit ids must be unique")
    exacts = [tuple(frame[c].iloc[i] for c in schema.exact) for i in range(len(frame))]

    units = UnitList(
        Unit(id=ids[i], x=x[i], z_dose=float(dose[i]), d=int(treated[i]),
             r=float(outcome[i]), exact_keys=exacts[i])
        for i in range(len(frame))
    )
    units.feature_names = tuple(names)
    return units


# ---------------------------------------------------------------------------
# Design validation (report-style, never raises)
# ---------------------------------------------------------------------------

def validate_design(design: MatchedDesign) -> dict:
    """Check every MatchedDesign invariant; returns {invariant: (ok, detail)}."""
    checks: dict[str, tuple[bool, str]] = {}

    bad_order = [p for p in design.pairs if p.far.z_dose < p.near.z_dose]
    checks["pair_dose_ordering"] = (not bad_order, f"{len(bad_order)} mis-ordered pairs")

    dup_members = [p for p in design.pairs if p.near.id == p.far.id]
    checks["distinct_pair_members"] = (not dup_members, f"{len(dup_members)} self pairs")

    seen: dict[str, int] = {}
    for p in design.pairs:
        for u in (p.near, p.far):
            seen[u.id] = seen.get(u.id, 0) + 1
    for u in design.eliminated:
        seen[u.id] = seen.get(u.id, 0) + 1
    dupes = {k: v for k, v in seen.items() if v > 1}
    checks["unique_membership"] = (not dupes, f"{len(dupes)} duplicated unit ids")

    e_expected = design.provenance.get("n_sinks")
    if e_expected is not None:
        ok = len(design.eliminated) == e_expected
        checks["eliminated_count"] = (ok, f"|eliminated|={len(design.eliminated)} vs e={e_expected}")

    n_expected = design.provenance.get("n_units")
    if n_expected is not None:
        want = (n_expected - len(design.eliminated)) / 2
        ok = design.n_pairs == want
        checks["pair_count"] = (ok, f"I={design.n_pairs} vs (n-e)/2={want}")

    return checks
