"""Core data model for clustered ordinal datasets.

A dataset is an ordered collection of clusters; each cluster carries two
cluster-level covariates (x continuous, z binary), a recorded size, and its
members. Each member holds an ordinal outcome ``y`` and three ordinal
auxiliary variables ``m1, m2, m3``; any of the four may be missing (None).

Category codes are 1-based: a variable with C categories takes values in
1..C. The CSV interchange schema is a fixed header

    cluster_id,x,z,cluster_size,y,m1,m2,m3

with one row per member and empty fields for missing values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateRanksError,
    EmptyDatasetError,
    SchemaError,
    TooFewClustersError,
)

CSV_HEADER = ("cluster_id", "x", "z", "cluster_size", "y", "m1", "m2", "m3")
VARIABLES = ("y", "m1", "m2", "m3")


@dataclass(frozen=True, slots=True)
class Member:
    """One within-cluster observation; None marks a missing value."""

    y: int | None
    m1: int | None
    m2: int | None
    m3: int | None

    def get(self, var: str) -> int | None:
        if var == "y":
            return self.y
        if var == "m1":
            return self.m1
        if var == "m2":
            return self.m2
        if var == "m3":
            return self.m3
        raise ValueError(f"unknown variable {var!r}")


@dataclass(frozen=True, slots=True)
class Cluster:
    """A cluster with its covariates and members.

    ``size`` is the recorded cluster size used for weighting. It normally
    equals ``len(members)``; complete-case reduction keeps the pre-reduction
    size in ``original_size``.
    """

    id: int
    x: float
    z: float
    size: int
    members: tuple[Member, ...]
    original_size: int | None = None


@dataclass(frozen=True, slots=True)
class ClusteredDataset:
    clusters: tuple[Cluster, ...]
    n_categories_y: int = 4
    n_categories_aux: tuple[int, int, int] = (4, 4, 4)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_members(self) -> int:
        return sum(len(c.members) for c in self.clusters)

    def n_categories(self, var: str) -> int:
        if var == "y":
            return self.n_categories_y
        return self.n_categories_aux[VARIABLES.index(var) - 1]


@dataclass(frozen=True, slots=True)
class ParamVector:
    """Marginal proportional-odds parameters: cutpoints then slopes.

    Cutpoints must be strictly increasing; there is one fewer cutpoint than
    outcome categories. Slopes are the coefficients of (x, z).
    """

    cutpoints: tuple[float, ...]
    slopes: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.cutpoints) < 1:
            raise ValueError("need at least one cutpoint")
        if any(b <= a for a, b in zip(self.cutpoints, self.cutpoints[1:])):
            raise ValueError("cutpoints must be strictly increasing")
        if len(self.slopes) != 2:
            raise ValueError("expected two slopes (x, z)")

    @property
    def n_categories(self) -> int:
        return len(self.cutpoints) + 1

    def names(self) -> tuple[str, ...]:
        cuts = tuple(f"eta{i + 1}" for i in range(len(self.cutpoints)))
        return cuts + ("beta1", "beta2")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.cutpoints + self.slopes, dtype=float)

    @classmethod
    def from_array(cls, arr: np.ndarray, n_cutpoints: int) -> "ParamVector":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(arr[:n_cutpoints]), tuple(arr[n_cutpoints:]))


# Default marginal parameters used throughout the simulation study.
DEFAULT_TRUE_PARAMS = ParamVector(cutpoints=(-0.4, 0.8, 1.6), slopes=(-0.2, -0.5))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(d: ClusteredDataset) -> ValidationReport:
    """Check structural invariants; returns all violations, never raises."""
    v: list[str] = []
    if d.n_categories_y < 3:
        v.append(f"n_categories_y={d.n_categories_y} below minimum 3")
    for i, c in enumerate(d.n_categories_aux):
        if c < 2:
            v.append(f"n_categories_aux[{i}]={c} below minimum 2")
    seen: set[int] = set()
    for c in d.clusters:
        tag = f"cluster {c.id}"
        if c.id in seen:
            v.append(f"{tag}: duplicate cluster id")
        seen.add(c.id)
        if c.size < 1:
            v.append(f"{tag}: size {c.size} < 1")
        if len(c.members) != c.size:
            v.append(f"{tag}: size {c.size} != member count {len(c.members)}")
        if not np.isfinite(c.x):
            v.append(f"{tag}: non-finite x")
        if c.z not in (0, 1):
            v.append(f"{tag}: z={c.z} not in {{0,1}}")
        for j, m in enumerate(c.members):
            for var in VARIABLES:
                val = m.get(var)
                if val is None:
                    continue
                n_cat = d.n_categories(var)
                if not (1 <= val <= n_cat):
                    v.append(
                        f"{tag} member {j}: {var}={val} outside 1..{n_cat}"
                    )
    return ValidationReport(tuple(v))


def complete_cases(
    d: ClusteredDataset, *, keep_original_sizes: bool = False
) -> ClusteredDataset:
    """Drop members with missing y and clusters left empty.

    By default each surviving cluster's size is recomputed as its observed
    member count, so complete-case weighting uses observed counts; the
    pre-reduction size is kept in ``original_size``. With
    ``keep_original_sizes=True`` the recorded size (and hence the weight
    denominator) stays at the original cluster size.
    """
    kept: list[Cluster] = []
    for c in d.clusters:
        obs = tuple(m for m in c.members if m.y is not None)
        if not obs:
            continue
        size = c.size if keep_original_sizes else len(obs)
        orig = c.original_size if c.original_size is not None else c.size
        kept.append(replace(c, members=obs, size=size, original_size=orig))
    if not kept:
        raise EmptyDatasetError("no members with observed y remain")
    return replace(d, clusters=tuple(kept))


def ics_diagnostic(d: ClusteredDataset) -> float:
    """Spearman rank correlation between per-cluster mean observed y and size.

    Uses average ranks for ties. Requires at least three clusters with an
    observed y; raises DegenerateRanksError when either rank vector is
    constant (e.g. all cluster sizes equal).
    """
    means, sizes = [], []
    for c in d.clusters:
        ys = [m.y for m in c.members if m.y is not None]
        if not ys:
            continue
        means.append(float(np.mean(ys)))
        sizes.append(float(c.size))
    if len(means) < 3:
        raise TooFewClustersError(
            f"need >= 3 clusters with observed y, have {len(means)}"
        )
    from scipy.stats import rankdata

    rm = rankdata(means)
    rs = rankdata(sizes)
    if np.ptp(rm) == 0 or np.ptp(rs) == 0:
        raise DegenerateRanksError("degenerate ranks: constant mean-y or size vector")
    rm = rm - rm.mean()
    rs = rs - rs.mean()
    denom = float(np.sqrt(rm @ rm) * np.sqrt(rs @ rs))
    return float(rm @ rs) / denom


# ---------------------------------------------------------------------------
# Array view used by the numerical modules.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemberTable:
    """Flat array view of a dataset, members in cluster order.

    ``codes`` holds the four variables as integers with -1 for missing.
    ``cluster_index`` maps each member row to its cluster row; cluster-level
    arrays are aligned with ``dataset.clusters``.
    """

    cluster_index: np.ndarray  # (n_members,) int
    codes: np.ndarray  # (n_members, 4) int, -1 = missing
    x: np.ndarray  # (n_clusters,)
    z: np.ndarray  # (n_clusters,)
    size: np.ndarray  # (n_clusters,) recorded sizes
    count: np.ndarray  # (n_clusters,) member rows per cluster
    n_cat: tuple[int, int, int, int] = field(default=(4, 4, 4, 4))

    @property
    def n_members(self) -> int:
        return self.codes.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.x.shape[0]


def member_table(d: ClusteredDataset) -> MemberTable:
    n = d.n_members
    ci = np.empty(n, dtype=np.int64)
    codes = np.empty((n, 4), dtype=np.int64)
    x = np.empty(d.n_clusters)
    z = np.empty(d.n_clusters)
    size = np.empty(d.n_clusters, dtype=np.int64)
    count = np.empty(d.n_clusters, dtype=np.int64)
    r = 0
    for i, c in enumerate(d.clusters):
        x[i], z[i], size[i], count[i] = c.x, c.z, c.size, len(c.members)
        for m in c.members:
            ci[r] = i
            codes[r, 0] = -1 if m.y is None else m.y
            codes[r, 1] = -1 if m.m1 is None else m.m1
            codes[r, 2] = -1 if m.m2 is None else m.m2
            codes[r, 3] = -1 if m.m3 is None else m.m3
            r += 1
    n_cat = (d.n_categories_y, *d.n_categories_aux)
    return MemberTable(ci, codes, x, z, size, count, n_cat)


def with_codes(d: ClusteredDataset, codes: np.ndarray) -> ClusteredDataset:
    """Rebuild a dataset with member variables replaced by ``codes``.

    ``codes`` is (n_members, 4) in flat member order; -1 entries become None.
    Cluster attributes are untouched.
    """
    if codes.shape != (d.n_members, 4):
        raise ValueError(f"codes shape {codes.shape} != ({d.n_members}, 4)")
    out: list[Cluster] = []
    r = 0
    for c in d.clusters:
        members = []
        for _ in c.members:
            row = codes[r]
            members.append(
                Member(*(None if v < 0 else int(v) for v in row))
            )
            r += 1
        out.append(replace(c, members=tuple(members)))
    return replace(d, clusters=tuple(out))


# ---------------------------------------------------------------------------
# CSV interchange.
# ---------------------------------------------------------------------------


def _parse_int(text: str, row: int, col: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise SchemaError(f"row {row}: column {col!r} is not an integer: {text!r}")


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"row {row}: column {col!r} is not a number: {text!r}")


def read_csv(
    path: str,
    *,
    n_categories_y: int = 4,
    n_categories_aux: tuple[int, int, int] = (4, 4, 4),
) -> ClusteredDataset:
    """Read the interchange CSV; raises SchemaError on malformed input.

    Rows are grouped by cluster_id in order of first appearance; covariates
    and cluster_size must agree across a cluster's rows. Category-range and
    size-consistency checks are left to validate_dataset.
    """
    order: list[int] = []
    attrs: dict[int, tuple[float, float, int]] = {}
    members: dict[int, list[Member]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise SchemaError(
                f"bad header {header!r}; expected {','.join(CSV_HEADER)}"
            )
        for rownum, row in enumerate(reader, start=2):
            if not row or all(f.strip() == "" for f in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise SchemaError(
                    f"row {rownum}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                )
            cid = _parse_int(row[0].strip(), rownum, "cluster_id")
            x = _parse_float(row[1].strip(), rownum, "x")
            z = _parse_float(row[2].strip(), rownum, "z")
            size = _parse_int(row[3].strip(), rownum, "cluster_size")
            vals: list[int | None] = []
            for col, text in zip(VARIABLES, row[4:]):
                text = text.strip()
                vals.append(None if text == "" else _parse_int(text, rownum, col))
            if cid not in attrs:
                order.append(cid)
                attrs[cid] = (x, z, size)
                members[cid] = []
            else:
                px, pz, psize = attrs[cid]
                if (x, z, size) != (px, pz, psize):
                    raise SchemaError(
                        f"row {rownum}: cluster {cid} attributes disagree with "
                        f"earlier rows"
                    )
            members[cid].append(Member(*vals))
    if not order:
        raise SchemaError("no data rows")
    clusters = tuple(
        Cluster(
            id=cid,
            x=attrs[cid][0],
            z=attrs[cid][1],
            size=attrs[cid][2],
            members=tuple(members[cid]),
        )
        for cid in order
    )
    return ClusteredDataset(clusters, n_categories_y, n_categories_aux)


def _fmt(v: float) -> str:
    return format(v, ".10g")


def write_csv(d: ClusteredDataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for c in d.clusters:
            for m in c.members:
                writer.writerow(
                    [
                        c.id,
                        _fmt(c.x),
                        int(c.z) if c.z in (0, 1) else _fmt(c.z),
                        c.size,
                        *("" if m.get(v) is None else m.get(v) for v in VARIABLES),
                    ]
                )
