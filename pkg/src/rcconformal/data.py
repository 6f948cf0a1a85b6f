"""Observed-data container, CSV ingestion and the train1/train2/cal sample splits.

Rows follow the runtime-confounding layout: source rows (``s == 1``) carry
outcome ``y``, treatment ``a`` and source-only covariates ``u``; target rows
(``s == 0``) carry only the shared covariates ``v``.  The missing fields are
stored as masked entries of :class:`numpy.ma.MaskedArray`, never as sentinel
numbers, so any accidental use of a target-row ``u`` shows up as a mask
rather than a plausible value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when input data violate the observed-data layout."""


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for CSV ingestion."""

    outcome: str
    treatment: str
    source: str
    v: tuple[str, ...]
    u: tuple[str, ...] = ()
    row_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(self.v))
        object.__setattr__(self, "u", tuple(self.u))
        if not self.v:
            raise DataError("schema needs at least one v column")
        overlap = set(self.v) & set(self.u)
        if overlap:
            raise DataError(f"columns listed as both v and u: {sorted(overlap)}")
        roles = [self.outcome, self.treatment, self.source, *self.v, *self.u]
        if self.row_id is not None:
            roles.append(self.row_id)
        if len(set(roles)) != len(roles):
            raise DataError("schema assigns one column to several roles")

    def as_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "treatment": self.treatment,
            "source": self.source,
            "v": list(self.v),
            "u": list(self.u),
            "row_id": self.row_id,
        }


@dataclass(frozen=True)
class Row:
    """One observational unit; ``None`` marks a field that is not observed."""

    id: object
    y: Optional[float]
    a: object
    v: np.ndarray
    u: Optional[np.ndarray]
    s: int

    @property
    def x(self) -> np.ndarray:
        if self.u is None:
            raise DataError(f"row {self.id}: x = (v, u) requested on a target row")
        return np.concatenate([self.v, self.u])


def _readonly(arr):
    arr.flags.writeable = False
    if isinstance(arr, np.ma.MaskedArray):
        np.ma.getmaskarray(arr).flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Immutable table of ``(y, a, v, u, s)`` rows with the runtime-confounding mask."""

    v: np.ndarray
    s: np.ndarray
    y: np.ma.MaskedArray
    a: np.ma.MaskedArray
    u: np.ma.MaskedArray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 2:
            raise DataError("v must be a 2-D array")
        n = v.shape[0]
        s = np.asarray(self.s)
        if s.shape != (n,) or not np.isin(s, (0, 1)).all():
            raise DataError("s must be a 0/1 vector with one entry per row")
        s = s.astype(np.int8)
        if not np.isfinite(v).all():
            raise DataError("v contains non-finite values")
        target = s == 0

        y = np.ma.asarray(self.y, dtype=float)
        a = np.ma.asarray(self.a)
        u = np.ma.asarray(self.u, dtype=float)
        if u.ndim == 1 and u.size == 0:
            u = np.ma.masked_array(np.zeros((n, 0)), mask=np.zeros((n, 0), bool))
        if y.shape != (n,) or a.shape != (n,) or u.ndim != 2 or u.shape[0] != n:
            raise DataError("y, a, u must align with v row-for-row")
        for name, arr in (("outcome", y), ("treatment", a)):
            miss = np.ma.getmaskarray(arr)
            bad = np.flatnonzero(miss != target)
            if bad.size:
                i = bad[0]
                if target[i]:
                    raise DataError(f"target row {i} carries {name}")
                raise DataError(f"source row {i} is missing {name}")
        umask = np.ma.getmaskarray(u)
        if u.shape[1]:
            bad = np.flatnonzero((umask.any(1) & ~target) | (~umask.all(1) & target))
            if bad.size:
                i = bad[0]
                if target[i]:
                    raise DataError(f"target row {i} carries u covariates")
                raise DataError(f"source row {i} is missing u covariates")
        if not np.isfinite(y.compressed()).all():
            raise DataError("source outcomes must be finite")
        if u.shape[1] and not np.isfinite(u.compressed()).all():
            raise DataError("u contains non-finite values")

        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (n,):
            raise DataError("ids must have one entry per row")
        for name, val in (("v", v), ("s", s), ("y", y), ("a", a), ("u", u), ("ids", ids)):
            object.__setattr__(self, name, _readonly(val.copy()))

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_full(cls, v, s, y, a, u=None, ids=None) -> "ObservationTable":
        """Build the observed view from full-length arrays, hiding target fields."""
        v = np.asarray(v, dtype=float)
        s = np.asarray(s).astype(np.int8)
        n = v.shape[0]
        target = s == 0
        u = np.zeros((n, 0)) if u is None else np.asarray(u, dtype=float)
        a = np.asarray(a).copy()
        a[target] = "" if a.dtype == object else 0
        return cls(
            v=v,
            s=s,
            y=np.ma.masked_array(np.where(target, 0.0, np.asarray(y, dtype=float)), mask=target),
            a=np.ma.masked_array(a, mask=target),
            u=np.ma.masked_array(
                np.where(target[:, None], 0.0, u), mask=np.repeat(target[:, None], u.shape[1], 1)
            ),
            ids=ids,
        )

    # -- shape / accessors ----------------------------------------------------
    def __len__(self) -> int:
        return self.v.shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def p_v(self) -> int:
        return self.v.shape[1]

    @property
    def p_u(self) -> int:
        return self.u.shape[1]

    @property
    def source_mask(self) -> np.ndarray:
        return self.s == 1

    @property
    def n_source(self) -> int:
        return int(self.source_mask.sum())

    @property
    def n_target(self) -> int:
        return self.n - self.n_source

    @property
    def levels(self) -> list:
        """Sorted distinct treatment labels among source rows."""
        return sorted(np.unique(self.a.compressed()).tolist())

    def treated(self, level) -> np.ndarray:
        """Boolean mask of source rows with ``a == level``."""
        src = ~np.ma.getmaskarray(self.a)
        out = np.zeros(self.n, dtype=bool)
        out[src] = self.a.data[src] == level
        return out

    def features(self, idx=None, which: str = "x") -> np.ndarray:
        """Feature matrix for rows ``idx``: ``which='v'`` or ``'x'`` (= [v, u], source only)."""
        idx = np.arange(self.n) if idx is None else np.asarray(idx)
        if which == "v":
            return self.v[idx]
        if which != "x":
            raise ValueError(f"unknown feature set {which!r}")
        if (self.s[idx] == 0).any():
            raise DataError("x = (v, u) requested for target rows")
        return np.hstack([self.v[idx], self.u.data[idx]])

    def outcomes(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        if np.ma.getmaskarray(self.y)[idx].any():
            raise DataError("outcome requested for a row where it is missing")
        return self.y.data[idx]

    def row(self, i: int) -> Row:
        src = bool(self.s[i])
        return Row(
            id=self.ids[i].item() if hasattr(self.ids[i], "item") else self.ids[i],
            y=float(self.y.data[i]) if src else None,
            a=self.a.data[i].item() if src and hasattr(self.a.data[i], "item") else (self.a.data[i] if src else None),
            v=self.v[i].copy(),
            u=self.u.data[i].copy() if src else None,
            s=int(self.s[i]),
        )

    def rows(self) -> Iterator[Row]:
        for i in range(self.n):
            yield self.row(i)

    def take(self, idx) -> "ObservationTable":
        idx = np.asarray(idx, dtype=int)
        return ObservationTable(
            v=self.v[idx], s=self.s[idx], y=self.y[idx], a=self.a[idx], u=self.u[idx], ids=self.ids[idx]
        )

    def check_levels(self) -> None:
        if len(self.levels) < 2:
            raise DataError("source rows must contain at least two treatment levels")

    def equals(self, other: "ObservationTable") -> bool:
        def same(x, y):
            return (
                np.array_equal(np.ma.getmaskarray(x), np.ma.getmaskarray(y))
                and np.array_equal(np.ma.filled(x, 0) if x.dtype != object else x.filled(None),
                                   np.ma.filled(y, 0) if y.dtype != object else y.filled(None))
            )

        return (
            self.n == other.n
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.s, other.s)
            and same(self.y, other.y)
            and same(self.a, other.a)
            and same(self.u, other.u)
            and [str(i) for i in self.ids] == [str(i) for i in other.ids]
        )


# -- CSV -----------------------------------------------------------------------


def _parse_label(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def load_csv(path, schema: ColumnSchema, require_levels: bool = True) -> ObservationTable:
    """Read a CSV with a header row into a validated :class:`ObservationTable`.

    Blank cells are missing.  Target rows must leave outcome, treatment and
    every ``u`` column blank.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.outcome, schema.treatment, schema.source, *schema.v, *schema.u]
        if schema.row_id:
            needed.append(schema.row_id)
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"{path}: schema columns not in header: {missing}")
        records = list(reader)

    n = len(records)
    v = np.empty((n, len(schema.v)))
    u = np.zeros((n, len(schema.u)))
    y = np.zeros(n)
    s = np.empty(n, dtype=np.int8)
    labels: list = []
    ids = []
    for i, rec in enumerate(records):
        line = i + 2
        sval = (rec[schema.source] or "").strip()
        if sval not in ("0", "1"):
            raise DataError(f"{path}:{line}: source indicator must be 0 or 1, got {sval!r}")
        s[i] = int(sval)
        for j, col in enumerate(schema.v):
            v[i, j] = _number(rec[col], path, line, col)
        src_cells = [rec[schema.outcome], rec[schema.treatment], *(rec[c] for c in schema.u)]
        if s[i] == 0:
            if (rec[schema.outcome] or "").strip():
                raise DataError(f"{path}:{line}: target row carries outcome")
            if (rec[schema.treatment] or "").strip():
                raise DataError(f"{path}:{line}: target row carries treatment")
            if any((rec[c] or "").strip() for c in schema.u):
                raise DataError(f"{path}:{line}: target row carries u covariates")
            labels.append(None)
        else:
            if any(not (c or "").strip() for c in src_cells):
                raise DataError(f"{path}:{line}: source row has a blank outcome, treatment or u cell")
            y[i] = _number(rec[schema.outcome], path, line, schema.outcome)
            for j, col in enumerate(schema.u):
                u[i, j] = _number(rec[col], path, line, col)
            labels.append(_parse_label(rec[schema.treatment].strip()))
        ids.append(rec[schema.row_id] if schema.row_id else i)

    src_labels = [lab for lab in labels if lab is not None]
    if all(isinstance(lab, int) for lab in src_labels):
        a = np.array([lab if lab is not None else 0 for lab in labels], dtype=int)
    else:
        a = np.array([str(lab) if lab is not None else "" for lab in labels], dtype=object)
    target = s == 0
    table = ObservationTable(
        v=v,
        s=s,
        y=np.ma.masked_array(y, mask=target),
        a=np.ma.masked_array(a, mask=target),
        u=np.ma.masked_array(u, mask=np.repeat(target[:, None], u.shape[1], 1)),
        ids=np.array(ids, dtype=object) if schema.row_id else np.arange(n),
    )
    if require_levels:
        table.check_levels()
    return table


def _number(text, path, line, col) -> float:
    try:
        val = float(text)
    except (TypeError, ValueError):
        raise DataError(f"{path}:{line}: column {col!r} is not numeric: {text!r}") from None
    if not np.isfinite(val):
        raise DataError(f"{path}:{line}: column {col!r} is not finite")
    return val


def emit_csv(table: ObservationTable, path, schema: ColumnSchema) -> None:
    """Write ``table`` using ``schema``'s column names; missing cells are blank."""
    if len(schema.v) != table.p_v or len(schema.u) != table.p_u:
        raise DataError("schema dimensions do not match the table")
    cols = ([schema.row_id] if schema.row_id else []) + [
        schema.outcome, schema.treatment, schema.source, *schema.v, *schema.u
    ]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table.rows():
            src = row.s == 1
            rec = [row.id] if schema.row_id else []
            rec += [repr(row.y) if src else "", row.a if src else "", row.s]
            rec += [repr(float(x)) for x in row.v]
            rec += [repr(float(x)) for x in row.u] if src else [""] * table.p_u
            w.writerow(rec)


# -- splits --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SplitAssignment:
    """Disjoint index sets over a row universe.

    Source and target rows are partitioned with the same fractions so every
    fold keeps the population's source/target mix.  Fits that condition on
    ``S = 1`` filter target rows out themselves.  ``holdout`` collects rows left
    over when the fractions sum to less than one.
    """

    train1: np.ndarray
    train2: np.ndarray
    cal: np.ndarray
    holdout: np.ndarray

    def __post_init__(self):
        for name in ("train1", "train2", "cal", "holdout"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=int))
            object.__setattr__(self, name, _readonly(arr))

    @property
    def train(self) -> np.ndarray:
        return np.sort(np.concatenate([self.train1, self.train2]))

    def labels(self, n: int) -> np.ndarray:
        """Fold label per row: 0 = train1, 1 = train2, 2 = cal, 3 = holdout."""
        out = np.full(n, -1)
        for k, idx in enumerate((self.train1, self.train2, self.cal, self.holdout)):
            out[idx] = k
        return out

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train1", "train2", "cal", "holdout")}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(**{k: np.asarray(d[k], dtype=int) for k in ("train1", "train2", "cal", "holdout")})


def make_splits(
    table: ObservationTable, fractions: Sequence[float] = (0.5, 0.5), seed: int = 0
) -> SplitAssignment:
    """Random train/cal split with the training part halved into train1/train2.

    Source rows and target rows are shuffled and cut separately with the same
    fractions.  Raises :class:`DataError` if any of train1, train2 or cal ends
    up without source rows of some treatment level.
    """
    f_train, f_cal = (float(f) for f in fractions)
    if f_train <= 0 or f_cal <= 0:
        raise DataError("fractions must be positive")
    if f_train + f_cal > 1 + 1e-12:
        raise DataError("fractions exceed 1")
    rng = np.random.default_rng(seed)
    folds: list[list[np.ndarray]] = [[], [], [], []]
    for pop in (1, 0):
        idx = np.flatnonzero(table.s == pop)
        idx = idx[rng.permutation(idx.size)]
        n = idx.size
        n_train = int(round(f_train * n))
        n_cal = min(int(round(f_cal * n)), n - n_train)
        n1 = (n_train + 1) // 2
        parts = (idx[:n1], idx[n1:n_train], idx[n_train:n_train + n_cal], idx[n_train + n_cal:])
        for k, part in enumerate(parts):
            folds[k].append(part)
    split = SplitAssignment(*(np.concatenate(f) for f in folds))

    levels = table.levels
    for name in ("train1", "train2", "cal"):
        fold = getattr(split, name)
        for lev in levels:
            if not table.treated(lev)[fold].any():
                raise DataError(f"fold {name} has no source rows with treatment {lev!r}")
    return split


# -- filtering -----------------------------------------------------------------


def subset(
    table: ObservationTable,
    predicate: Optional[Callable[[np.ma.MaskedArray, np.ndarray], np.ndarray]] = None,
    *,
    a=None,
    s: Optional[int] = None,
) -> ObservationTable:
    """Rows matching ``predicate(a, s)`` and/or the ``a=``/``s=`` shortcuts.

    A treatment filter only matches source rows, since target rows have no
    treatment.  An empty result is a valid table.
    """
    keep = np.ones(table.n, dtype=bool)
    if predicate is not None:
        keep &= np.asarray(np.ma.filled(predicate(table.a, table.s), False), dtype=bool)
    if a is not None:
        keep &= table.treated(a)
    if s is not None:
        keep &= table.s == s
    return table.take(np.flatnonzero(keep))
