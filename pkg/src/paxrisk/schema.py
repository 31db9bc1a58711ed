"""Passenger data model: ingest, rare-level collapsing, and numeric encoding.

Every model in the study consumes the same design matrix layout produced
here: a linear age column, a radial-cubic spline block for age, and
reference-coded dummy columns for the categorical traits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

LABEL_COLUMN = "non_compliant"
CSV_COLUMNS = (
    "age",
    "sex",
    "citizenship_group",
    "declaration_status",
    "occupation",
    "visit_reason",
    "non_compliant",
)
# String-valued traits that carry level sets and are subject to collapsing.
CATEGORICAL_VARS = ("sex", "citizenship_group", "occupation", "visit_reason")
COLLAPSED_LEVEL = "not_otherwise_specified"
MAX_AGE = 120


class DataError(ValueError):
    """Raised for unreadable, malformed, or degenerate input data."""


class SplineBasisError(ValueError):
    """Raised when the spline basis cannot be constructed (e.g. duplicate knots)."""


class FeatureStage(Enum):
    """Which predictor set a model sees.

    Stage1 is the pair of traits visible without paperwork (age, sex);
    Stage12 adds the four document-derived traits.
    """

    STAGE1 = "stage1"
    STAGE12 = "stage12"

    def predictors(self) -> tuple[str, ...]:
        if self is FeatureStage.STAGE1:
            return ("age", "sex")
        return ("age", "sex", "citizenship_group", "declaration_status",
                "occupation", "visit_reason")


@dataclass(frozen=True)
class PassengerRecord:
    """One arriving passenger's traits plus the binary non-compliance label."""

    age: int
    sex: str
    citizenship_group: str
    declaration_status: int
    occupation: str
    visit_reason: str
    non_compliant: int

    def __post_init__(self):
        if not 0 <= self.age <= MAX_AGE:
            raise DataError(f"age {self.age} outside [0, {MAX_AGE}]")
        if self.declaration_status not in (0, 1):
            raise DataError(f"declaration_status must be 0/1, got {self.declaration_status}")
        if self.non_compliant not in (0, 1):
            raise DataError(f"non_compliant must be 0/1, got {self.non_compliant}")


@dataclass(frozen=True)
class Provenance:
    """Where a dataset came from: a file path or a generator seed."""

    kind: str                     # "file" | "synthetic" | "derived"
    detail: str = ""
    rejected_rows: int = 0


def _levels_of(values: np.ndarray) -> tuple[str, ...]:
    return tuple(sorted(set(values.tolist())))


@dataclass(frozen=True)
class Dataset:
    """Column-oriented passenger dataset with per-variable level sets.

    Arrays are frozen after construction so datasets can be shared across
    concurrent fold workers.
    """

    age: np.ndarray
    sex: np.ndarray
    citizenship_group: np.ndarray
    declaration_status: np.ndarray
    occupation: np.ndarray
    visit_reason: np.ndarray
    non_compliant: np.ndarray
    level_sets: dict[str, tuple[str, ...]] = field(default_factory=dict)
    provenance: Provenance = Provenance(kind="derived")

    def __post_init__(self):
        n = len(self.age)
        for name in CSV_COLUMNS:
            arr = np.asarray(getattr(self, name))
            if len(arr) != n:
                raise DataError(f"column {name} has length {len(arr)}, expected {n}")
            object.__setattr__(self, name, arr)
        if n and (self.age.min() < 0 or self.age.max() > MAX_AGE):
            raise DataError("age outside [0, %d]" % MAX_AGE)
        if n and not np.isin(self.non_compliant, (0, 1)).all():
            raise DataError("non_compliant must be 0/1")
        if n and not np.isin(self.declaration_status, (0, 1)).all():
            raise DataError("declaration_status must be 0/1")
        if not self.level_sets:
            object.__setattr__(
                self, "level_sets",
                {v: _levels_of(getattr(self, v)) for v in CATEGORICAL_VARS})
        else:
            for v in CATEGORICAL_VARS:
                observed = set(getattr(self, v).tolist())
                declared = set(self.level_sets[v])
                if observed != declared:
                    raise DataError(
                        f"level set for {v} does not exactly cover observed values "
                        f"(missing={observed - declared}, unused={declared - observed})")
        for name in CSV_COLUMNS:
            getattr(self, name).flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.age)

    @property
    def labels(self) -> np.ndarray:
        return self.non_compliant

    def record(self, i: int) -> PassengerRecord:
        if not 0 <= i < self.n:
            raise IndexError(f"record index {i} out of range for n={self.n}")
        return PassengerRecord(
            age=int(self.age[i]),
            sex=str(self.sex[i]),
            citizenship_group=str(self.citizenship_group[i]),
            declaration_status=int(self.declaration_status[i]),
            occupation=str(self.occupation[i]),
            visit_reason=str(self.visit_reason[i]),
            non_compliant=int(self.non_compliant[i]),
        )

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        """Row subset with freshly inferred level sets."""
        idx = np.asarray(indices)
        return Dataset(
            age=self.age[idx].copy(),
            sex=self.sex[idx].copy(),
            citizenship_group=self.citizenship_group[idx].copy(),
            declaration_status=self.declaration_status[idx].copy(),
            occupation=self.occupation[idx].copy(),
            visit_reason=self.visit_reason[idx].copy(),
            non_compliant=self.non_compliant[idx].copy(),
            provenance=replace(self.provenance, kind="derived"),
        )

    def require_both_classes(self):
        pos = int(self.non_compliant.sum())
        if pos == 0 or pos == self.n:
            raise DataError("dataset needs at least one positive and one negative label")

    def same_data(self, other: "Dataset") -> bool:
        """Content equality ignoring provenance."""
        return (
            all(np.array_equal(getattr(self, v), getattr(other, v)) for v in CSV_COLUMNS)
            and self.level_sets == other.level_sets
        )


# ---------------------------------------------------------------------------
# Ingest / persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TextFormat:
    """Delimited-text descriptor for the on-disk dataset format."""

    delimiter: str = ","
    encoding: str = "utf-8"


def load_dataset(path, fmt: TextFormat = TextFormat()) -> Dataset:
    """Read a delimited text file into a Dataset.

    Rows with any missing (blank) field are rejected; the rejection count
    is recorded on the returned dataset's provenance. Non-blank fields
    that fail to parse raise DataError.
    """
    try:
        fh = open(path, "r", encoding=fmt.encoding, newline="")
    except OSError as exc:
        raise DataError(f"unreadable file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=fmt.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty dataset: file has no header row") from None
        if tuple(header) != CSV_COLUMNS:
            unknown = set(header) - set(CSV_COLUMNS)
            missing = set(CSV_COLUMNS) - set(header)
            raise DataError(
                f"unexpected columns: header must be {list(CSV_COLUMNS)} "
                f"(unknown={sorted(unknown)}, missing={sorted(missing)})")
        rows, rejected = [], 0
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            stripped = [f.strip() for f in row]
            if any(f == "" for f in stripped):
                rejected += 1
                continue
            rows.append((lineno, stripped))
    if not rows:
        raise DataError("empty dataset: no complete rows")

    def parse_int(text: str, col: str, lineno: int) -> int:
        try:
            return int(text)
        except ValueError:
            raise DataError(f"line {lineno}: non-parseable {col} value {text!r}") from None

    cols = {name: [] for name in CSV_COLUMNS}
    for lineno, row in rows:
        for name, text in zip(CSV_COLUMNS, row):
            if name in ("age", "declaration_status", "non_compliant"):
                cols[name].append(parse_int(text, name, lineno))
            else:
                cols[name].append(text)
    return Dataset(
        age=np.array(cols["age"], dtype=np.int64),
        sex=np.array(cols["sex"], dtype=object),
        citizenship_group=np.array(cols["citizenship_group"], dtype=object),
        declaration_status=np.array(cols["declaration_status"], dtype=np.int64),
        occupation=np.array(cols["occupation"], dtype=object),
        visit_reason=np.array(cols["visit_reason"], dtype=object),
        non_compliant=np.array(cols["non_compliant"], dtype=np.int64),
        provenance=Provenance(kind="file", detail=str(path), rejected_rows=rejected),
    )


def save_dataset(ds: Dataset, path, fmt: TextFormat = TextFormat()):
    with open(path, "w", encoding=fmt.encoding, newline="") as fh:
        writer = csv.writer(fh, delimiter=fmt.delimiter, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for i in range(ds.n):
            writer.writerow([
                int(ds.age[i]), ds.sex[i], ds.citizenship_group[i],
                int(ds.declaration_status[i]), ds.occupation[i],
                ds.visit_reason[i], int(ds.non_compliant[i]),
            ])


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def collapse_rare_levels(ds: Dataset, threshold: int = 50) -> Dataset:
    """Pool sparsely observed categorical levels into a single synthetic level.

    Any level observed strictly fewer than `threshold` times is relabeled
    to `not_otherwise_specified`. Record order is preserved and the
    operation is idempotent.
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    new_cols = {}
    for var in CATEGORICAL_VARS:
        values = getattr(ds, var)
        uniques, counts = np.unique(values, return_counts=True)
        rare = {u for u, c in zip(uniques.tolist(), counts.tolist()) if c < threshold}
        if rare:
            out = np.array(
                [COLLAPSED_LEVEL if v in rare else v for v in values.tolist()],
                dtype=object)
        else:
            out = values.copy()
        new_cols[var] = out
    return Dataset(
        age=ds.age.copy(),
        sex=new_cols["sex"],
        citizenship_group=new_cols["citizenship_group"],
        declaration_status=ds.declaration_status.copy(),
        occupation=new_cols["occupation"],
        visit_reason=new_cols["visit_reason"],
        non_compliant=ds.non_compliant.copy(),
        provenance=ds.provenance,
    )


# ---------------------------------------------------------------------------
# Spline basis for the age effect
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplineMeta:
    """Knots (on the rescaled age axis) and the linear transform applied to
    the raw radial basis.

    A basis row reconstructs as |age/age_scale - knots|^3 @ transform,
    where transform is the inverse square root of the knot penalty matrix.
    """

    knots: np.ndarray      # (K,), in units of age / age_scale
    transform: np.ndarray  # (K, K)
    age_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "transform", np.asarray(self.transform, dtype=float))
        self.knots.flags.writeable = False
        self.transform.flags.writeable = False

    @property
    def K(self) -> int:
        return len(self.knots)

    def evaluate(self, ages: np.ndarray) -> np.ndarray:
        scaled = np.asarray(ages, dtype=float) / self.age_scale
        raw = np.abs(scaled[:, None] - self.knots[None, :]) ** 3
        return raw @ self.transform


def build_spline_basis(ages: np.ndarray, K: int = 10) -> tuple[np.ndarray, SplineMeta]:
    """Radial cubic age basis with a thin-plate-type penalty absorbed.

    Ages are rescaled to unit range (the scale is kept in the meta), then
    knots sit at K equally spaced sample quantiles. Raw columns
    |age' - knot|^3 are post-multiplied by the inverse square root of the
    knot penalty matrix Omega[k,l] = |knot_k - knot_l|^3, so that i.i.d.
    normal coefficients on the returned columns induce the thin-plate-type
    penalty with well-conditioned O(1) columns. The linear age term is not
    part of this block.
    """
    ages = np.asarray(ages, dtype=float)
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if np.unique(ages).size < K:
        raise SplineBasisError(
            f"need at least K={K} distinct age values, got {np.unique(ages).size}")
    age_scale = float(max(np.abs(ages).max(), 1.0))
    scaled = ages / age_scale
    probs = np.arange(1, K + 1) / (K + 1)
    knots = np.quantile(scaled, probs)
    if np.unique(knots).size < K:
        raise SplineBasisError("duplicate knots at the requested quantiles; reduce K")
    omega = np.abs(knots[:, None] - knots[None, :]) ** 3
    u, s, vt = np.linalg.svd(omega)
    if s.min() < 1e-12 * s.max():
        raise SplineBasisError("singular penalty matrix; reduce K")
    transform = vt.T @ np.diag(1.0 / np.sqrt(s)) @ u.T
    meta = SplineMeta(knots=knots, transform=transform, age_scale=age_scale)
    return meta.evaluate(ages), meta


# ---------------------------------------------------------------------------
# Design matrix encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnInfo:
    """Descriptor of one design-matrix column."""

    source: str                  # originating variable
    kind: str                    # "linear" | "spline" | "dummy"
    level: str | None = None     # dummy level, if kind == "dummy"
    basis_index: int | None = None

    @property
    def name(self) -> str:
        if self.kind == "linear":
            return self.source
        if self.kind == "spline":
            return f"{self.source}_spline_{self.basis_index}"
        return f"{self.source}={self.level}"


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric encoding of a dataset plus per-column metadata."""

    values: np.ndarray
    column_meta: tuple[ColumnInfo, ...]
    spline_meta: SplineMeta
    stage: FeatureStage

    def __post_init__(self):
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=float))
        self.values.flags.writeable = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.column_meta)

    def columns_of(self, source: str, kinds: Iterable[str] | None = None) -> list[int]:
        kinds = set(kinds) if kinds is not None else None
        return [i for i, c in enumerate(self.column_meta)
                if c.source == source and (kinds is None or c.kind in kinds)]

    def nonspline_indices(self) -> np.ndarray:
        """Columns tree and network models consume: raw age plus dummies."""
        return np.array([i for i, c in enumerate(self.column_meta) if c.kind != "spline"],
                        dtype=np.int64)

    def spline_indices(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.column_meta) if c.kind == "spline"],
                        dtype=np.int64)


@dataclass(frozen=True)
class _VarEncoding:
    levels: tuple[str, ...]
    reference: str
    dummy_levels: tuple[str, ...]


@dataclass(frozen=True)
class DesignEncoder:
    """Fitted encoding: level sets, reference levels, and the spline transform.

    Fit on a training subset and reused verbatim at prediction time so
    train and test matrices share one column layout. An unseen level maps
    to `not_otherwise_specified` when that level exists for the variable,
    otherwise to the reference level (all dummies zero).
    """

    stage: FeatureStage
    spline_meta: SplineMeta
    encodings: dict[str, _VarEncoding]

    @staticmethod
    def fit(ds: Dataset, stage: FeatureStage, K: int = 10) -> "DesignEncoder":
        _, spline_meta = build_spline_basis(np.asarray(ds.age, dtype=float), K)
        encodings = {}
        for var in stage.predictors():
            if var == "age":
                continue
            values = _categorical_strings(ds, var)
            uniques, counts = np.unique(values, return_counts=True)
            # Reference = most frequent level; lexicographic tie-break.
            pairs = sorted(zip(uniques.tolist(), counts.tolist()),
                           key=lambda uc: (-uc[1], uc[0]))
            reference = str(pairs[0][0])
            levels = tuple(sorted(uniques.tolist()))
            dummy_levels = tuple(l for l in levels if l != reference)
            encodings[var] = _VarEncoding(levels=levels, reference=reference,
                                          dummy_levels=dummy_levels)
        return DesignEncoder(stage=stage, spline_meta=spline_meta, encodings=encodings)

    def encode(self, ds: Dataset) -> DesignMatrix:
        n = ds.n
        blocks: list[np.ndarray] = []
        meta: list[ColumnInfo] = []
        ages = np.asarray(ds.age, dtype=float)
        blocks.append(ages[:, None])
        meta.append(ColumnInfo(source="age", kind="linear"))
        spline = self.spline_meta.evaluate(ages)
        if not np.isfinite(spline).all():
            raise SplineBasisError("non-finite spline basis value")
        blocks.append(spline)
        meta.extend(ColumnInfo(source="age", kind="spline", basis_index=k)
                    for k in range(self.spline_meta.K))
        for var in self.stage.predictors():
            if var == "age":
                continue
            enc = self.encodings[var]
            values = _categorical_strings(ds, var)
            known = set(enc.levels)
            has_nos = COLLAPSED_LEVEL in known
            mapped = [
                v if v in known else (COLLAPSED_LEVEL if has_nos else enc.reference)
                for v in values.tolist()
            ]
            for level in enc.dummy_levels:
                col = np.fromiter((1.0 if v == level else 0.0 for v in mapped),
                                  dtype=float, count=n)
                blocks.append(col[:, None])
                meta.append(ColumnInfo(source=var, kind="dummy", level=level))
        values = np.hstack(blocks) if blocks else np.empty((n, 0))
        return DesignMatrix(values=values, column_meta=tuple(meta),
                            spline_meta=self.spline_meta, stage=self.stage)


def _categorical_strings(ds: Dataset, var: str) -> np.ndarray:
    values = getattr(ds, var)
    if var == "declaration_status":
        return np.array([str(int(v)) for v in values], dtype=object)
    return np.asarray(values, dtype=object)


def encode_design(ds: Dataset, stage: FeatureStage, K: int = 10) -> DesignMatrix:
    """Fit an encoder on `ds` and encode it. See DesignEncoder for reuse."""
    return DesignEncoder.fit(ds, stage, K).encode(ds)
