"""Formulation designs, cell records, dataset I/O, splits and descriptors.

A descriptor concatenates, in registry order, each constituent's GR scaled
by its mol fraction (mol% / 100), followed by the cathode loading
(LiI wt% / 100) and the separator class (1.0 Celgard, 2.0 QMA). With the
one-hot separator switch the last feature becomes two indicator columns.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chem import CONSTITUENT_NAMES
from .errors import ConfigError, ConventionError, DatasetError, InputError, ShapeError

log = logging.getLogger(__name__)

N_CONSTITUENTS = 8
MOL_COLUMNS = tuple(f"mol_{n.lower()}" for n in CONSTITUENT_NAMES)
DATASET_COLUMNS = (
    ("id",) + MOL_COLUMNS + ("lii_wtpct", "separator", "capacity_mah_g", "current_density_ma_cm2")
)
MOL_SUM_TOLERANCE = 0.5


class Separator(enum.IntEnum):
    CELGARD = 1
    QMA = 2

    @classmethod
    def parse(cls, label: str) -> "Separator":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            allowed = "|".join(m.name for m in cls)
            raise InputError(f"unknown separator {label!r}; allowed labels: {allowed}") from None


@dataclass(frozen=True)
class FormulationDesign:
    mol: tuple[float, ...]
    loading: float
    separator: Separator

    def __post_init__(self):
        mol = tuple(float(v) for v in self.mol)
        object.__setattr__(self, "mol", mol)
        object.__setattr__(self, "loading", float(self.loading))
        object.__setattr__(self, "separator", Separator(self.separator))
        if len(mol) != N_CONSTITUENTS:
            raise InputError(f"expected {N_CONSTITUENTS} mol% values, got {len(mol)}")
        if not all(math.isfinite(v) and v >= 0 for v in mol):
            raise InputError(f"mol% values must be finite and non-negative: {mol}")
        if abs(math.fsum(mol) - 100.0) > 1e-6:
            raise InputError(f"mol% values sum to {math.fsum(mol)}, expected 100")
        if not (math.isfinite(self.loading) and 0 <= self.loading <= 100):
            raise InputError(f"cathode loading {self.loading} outside [0, 100] wt%")

    @property
    def salt_total(self) -> float:
        return math.fsum(self.mol[:4])


@dataclass(frozen=True)
class CellRecord:
    design: FormulationDesign
    capacity: float
    record_id: str
    current_density: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.capacity) and self.capacity >= 0):
            raise InputError(f"capacity must be finite and >= 0, got {self.capacity}")


@dataclass(frozen=True)
class DescriptorConvention:
    gr_version: str
    mol_scale: str = "fraction"
    loading_scale: str = "fraction"
    separator_encoding: str = "scalar"

    def __post_init__(self):
        if self.mol_scale not in ("fraction", "percent"):
            raise ConfigError(f"mol_scale must be fraction|percent, got {self.mol_scale!r}")
        if self.loading_scale not in ("fraction", "raw"):
            raise ConfigError(f"loading_scale must be fraction|raw, got {self.loading_scale!r}")
        if self.separator_encoding not in ("scalar", "onehot"):
            raise ConfigError(
                f"separator_encoding must be scalar|onehot, got {self.separator_encoding!r}"
            )

    def width(self, gr_size: int = 100) -> int:
        return N_CONSTITUENTS * gr_size + (2 if self.separator_encoding == "scalar" else 3)

    def as_dict(self) -> dict[str, str]:
        return {
            "gr_version": self.gr_version,
            "mol_scale": self.mol_scale,
            "loading_scale": self.loading_scale,
            "separator_encoding": self.separator_encoding,
        }


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    convention: DescriptorConvention


def _cell_features(loading, separator, convention: DescriptorConvention) -> np.ndarray:
    loading = np.asarray(loading, dtype=np.float64).reshape(-1, 1)
    sep = np.asarray(separator, dtype=np.float64).reshape(-1, 1)
    if convention.loading_scale == "fraction":
        loading = loading / 100.0
    if convention.separator_encoding == "scalar":
        return np.hstack([loading, sep])
    return np.hstack([loading, (sep == 1).astype(float), (sep == 2).astype(float)])


def descriptor_matrix(mol, loading, separator, grs: np.ndarray, convention: DescriptorConvention) -> np.ndarray:
    """Descriptors for many designs at once; ``mol`` is ``(n, 8)`` in mol%.

    No validation of the compositions is done here.
    """
    grs = np.asarray(grs, dtype=np.float64)
    if grs.ndim != 2 or grs.shape[0] != N_CONSTITUENTS:
        raise ShapeError(f"expected {N_CONSTITUENTS} graph representations, got {grs.shape[0] if grs.ndim else 0}")
    mol = np.asarray(mol, dtype=np.float64).reshape(-1, N_CONSTITUENTS)
    scale = mol / 100.0 if convention.mol_scale == "fraction" else mol
    segments = (scale[:, :, None] * grs[None, :, :]).reshape(len(mol), -1)
    return np.hstack([segments, _cell_features(loading, separator, convention)])


def build_descriptor(design: FormulationDesign, grs, convention: DescriptorConvention | None = None) -> Descriptor:
    grs = np.asarray(grs, dtype=np.float64)
    if grs.ndim != 2 or grs.shape[0] != N_CONSTITUENTS:
        n = grs.shape[0] if grs.ndim else 0
        raise ShapeError(f"expected {N_CONSTITUENTS} graph representations (registry order), got {n}")
    convention = convention or DescriptorConvention(gr_version="unversioned")
    x = descriptor_matrix(design.mol, design.loading, int(design.separator), grs, convention)
    return Descriptor(x[0], convention)


@dataclass
class DescriptorBuilder:
    """GRs plus convention: what a trained regressor expects as input."""

    grs: np.ndarray
    convention: DescriptorConvention

    @property
    def width(self) -> int:
        return self.convention.width(self.grs.shape[1])

    def build(self, design: FormulationDesign) -> Descriptor:
        return build_descriptor(design, self.grs, self.convention)

    def matrix(self, designs: list[FormulationDesign]) -> np.ndarray:
        mol = np.array([d.mol for d in designs]).reshape(-1, N_CONSTITUENTS)
        loading = np.array([d.loading for d in designs])
        sep = np.array([int(d.separator) for d in designs])
        return descriptor_matrix(mol, loading, sep, self.grs, self.convention)


def flat_features(design: FormulationDesign) -> np.ndarray:
    """The 10 raw features used by the conventional baselines."""
    return np.array(design.mol + (design.loading, float(int(design.separator))))


# dataset I/O


@dataclass
class Rejection:
    row: int
    reason: str


@dataclass
class DatasetLoad:
    records: list[CellRecord] = field(default_factory=list)
    rejected: list[Rejection] = field(default_factory=list)
    renormalized: int = 0


def read_dataset(path) -> DatasetLoad:
    """Parse a dataset CSV, collecting per-row rejections instead of raising."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    out = DatasetLoad()
    seen: set[str] = set()
    with path.open(newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        missing = [c for c in DATASET_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                rec, renorm = _parse_row(row)
                if rec.record_id in seen:
                    raise InputError(f"duplicate id {rec.record_id!r}")
            except InputError as exc:
                out.rejected.append(Rejection(row_no, str(exc)))
                continue
            seen.add(rec.record_id)
            out.renormalized += renorm
            out.records.append(rec)
    return out


def _number(row, col) -> float:
    try:
        v = float(row[col])
    except (TypeError, ValueError):
        raise InputError(f"column {col}: non-numeric value {row[col]!r}") from None
    if not math.isfinite(v):
        raise InputError(f"column {col}: non-finite value {row[col]!r}")
    return v


def _parse_row(row) -> tuple[CellRecord, bool]:
    mol = [_number(row, c) for c in MOL_COLUMNS]
    if any(v < 0 for v in mol):
        raise InputError(f"negative mol% in {mol}")
    total = math.fsum(mol)
    if abs(total - 100.0) > MOL_SUM_TOLERANCE:
        raise InputError(f"mol% sums to {total:g}, outside 100 +/- {MOL_SUM_TOLERANCE}")
    renorm = total != 100.0
    if renorm:
        mol = [v * 100.0 / total for v in mol]
    design = FormulationDesign(tuple(mol), _number(row, "lii_wtpct"), Separator.parse(row["separator"] or ""))
    rid = (row["id"] or "").strip()
    if not rid:
        raise InputError("empty id")
    rec = CellRecord(design, _number(row, "capacity_mah_g"), rid, _number(row, "current_density_ma_cm2"))
    return rec, renorm


def load_dataset(path, strict: bool = True) -> list[CellRecord]:
    """Validated records from a dataset CSV.

    Rows whose mol% sum is within 0.5 of 100 are renormalized to exactly 100.
    With ``strict`` any rejected row raises :class:`DatasetError` listing every
    rejection; otherwise rejected rows are skipped and logged.
    """
    res = read_dataset(path)
    log.info("%s: %d records accepted, %d rejected, %d renormalized",
             path, len(res.records), len(res.rejected), res.renormalized)
    if res.rejected and strict:
        detail = "; ".join(f"row {r.row}: {r.reason}" for r in res.rejected)
        raise DatasetError(f"{path}: {len(res.rejected)} invalid row(s): {detail}")
    for r in res.rejected:
        log.warning("%s row %d rejected: %s", path, r.row, r.reason)
    return res.records


def _fmt(v: float) -> str:
    return repr(float(v))


def design_columns(design: FormulationDesign) -> list[str]:
    return [_fmt(v) for v in design.mol] + [_fmt(design.loading), design.separator.name]


def write_dataset(path, records: list[CellRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for r in records:
            w.writerow([r.record_id] + design_columns(r.design)
                       + [_fmt(r.capacity), _fmt(r.current_density)])


# splits


def _id_key(rid: str):
    return (0, int(rid), "") if rid.isdigit() else (1, 0, rid)


def _test_count(n: int, test_fraction: float) -> int:
    if n < 2:
        raise InputError(f"need at least 2 records to split, got {n}")
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}")
    k = math.floor(n * test_fraction + 1e-9)
    if k < 1 or k > n - 1:
        raise ConfigError(f"test fraction {test_fraction} of {n} records leaves an empty partition")
    return k


def split_random(records: list[CellRecord], test_fraction: float, seed: int):
    """Seeded shuffle; ``floor(n * fraction)`` records become the test set."""
    k = _test_count(len(records), test_fraction)
    perm = np.random.default_rng(seed).permutation(len(records))
    test_idx = set(perm[:k].tolist())
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def split_sorted(records: list[CellRecord], test_fraction: float):
    """Highest-loading records become the test set; ties ordered by record id."""
    k = _test_count(len(records), test_fraction)
    ordered = sorted(records, key=lambda r: (r.design.loading, _id_key(r.record_id)))
    return ordered[:-k], ordered[-k:]


def check_convention(expected: DescriptorConvention, got: DescriptorConvention) -> None:
    if expected != got:
        diff = {
            k: (v, got.as_dict()[k]) for k, v in expected.as_dict().items() if got.as_dict()[k] != v
        }
        raise ConventionError(f"descriptor convention mismatch (model vs input): {diff}")
