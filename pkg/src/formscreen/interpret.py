"""Spearman rank-correlation reports and quartile summaries.

Ties get average ranks and the coefficient is the Pearson correlation of
the rank vectors. Without ties this equals ``1 - 6 sum(d^2) / (n (n^2 - 1))``,
which is what gets computed in that case (in exact integer arithmetic for
the squared rank differences).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chem import CONSTITUENT_NAMES
from .errors import InputError
from .formulation import FormulationDesign

MIN_RHO_SAMPLES = 3
MIN_QUARTILE_SAMPLES = 4


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman's rho; NaN when either input is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < MIN_RHO_SAMPLES:
        raise InputError(f"need at least {MIN_RHO_SAMPLES} pairs, got {n}")
    rx, ry = average_ranks(x), average_ranks(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        return math.nan
    if len(np.unique(x)) == n and len(np.unique(y)) == n:
        d = rx.astype(np.int64) - ry.astype(np.int64)
        return 1.0 - 6.0 * int(np.dot(d, d)) / (n * (n * n - 1))
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


@dataclass(frozen=True)
class LoadingBin:
    label: str
    lo: float
    hi: float
    include_lo: bool = True
    include_hi: bool = True

    def contains(self, v: float) -> bool:
        above = v >= self.lo if self.include_lo else v > self.lo
        below = v <= self.hi if self.include_hi else v < self.hi
        return above and below


DEFAULT_WINDOWS = (
    LoadingBin("40-46", 40.0, 46.0),
    LoadingBin(">46", 46.0, math.inf, include_lo=False),
)


def bins_from_values(values) -> list[LoadingBin]:
    """One closed bin per distinct loading value."""
    return [LoadingBin(f"{v:g}", v, v) for v in sorted(set(float(v) for v in values))]


def bins_from_edges(edges) -> list[LoadingBin]:
    """Half-open bins ``[e_k, e_k+1)``; the last one is closed."""
    edges = sorted(float(e) for e in edges)
    return [
        LoadingBin(f"{a:g}-{b:g}", a, b, include_hi=(k == len(edges) - 2))
        for k, (a, b) in enumerate(zip(edges[:-1], edges[1:]))
    ]


@dataclass(frozen=True)
class SccEntry:
    bin: str
    variable: str
    rho: float
    n: int
    status: str  # ok | insufficient | undefined


@dataclass
class SccReport:
    entries: list[SccEntry]

    def get(self, bin_label: str, variable: str) -> SccEntry:
        for e in self.entries:
            if e.bin == bin_label and e.variable == variable:
                return e
        raise KeyError((bin_label, variable))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["loading_bin", "constituent", "rho", "n"])
            for e in self.entries:
                w.writerow([e.bin, e.variable, repr(e.rho) if e.status == "ok" else "NA", e.n])


def _rho_entry(label, variable, x, y) -> SccEntry:
    if len(x) < MIN_RHO_SAMPLES:
        return SccEntry(label, variable, math.nan, len(x), "insufficient")
    rho = spearman(x, y)
    return SccEntry(label, variable, rho, len(x), "undefined" if math.isnan(rho) else "ok")


def scc_report(rows: list[tuple[FormulationDesign, float]], bins: list[LoadingBin] | None = None,
               windows=DEFAULT_WINDOWS) -> SccReport:
    """Per-bin rho(mol% of each constituent, capacity), then rho(loading, capacity) per window."""
    if not rows:
        raise InputError("no rows to analyse")
    mol = np.array([d.mol for d, _ in rows])
    load = np.array([d.loading for d, _ in rows])
    cap = np.array([float(c) for _, c in rows])
    bins = list(bins) if bins is not None else bins_from_values(load)
    entries = []
    for b in bins:
        mask = np.array([b.contains(v) for v in load], dtype=bool)
        for k, name in enumerate(CONSTITUENT_NAMES):
            entries.append(_rho_entry(b.label, name, mol[mask, k], cap[mask]))
    for w in windows:
        mask = np.array([w.contains(v) for v in load], dtype=bool)
        entries.append(_rho_entry(w.label, "lii_wtpct", load[mask], cap[mask]))
    return SccReport(entries)


def quantile_linear(values, p: float) -> float:
    """Linear interpolation between closest ranks: position ``(n-1) p``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    h = (len(v) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


@dataclass(frozen=True)
class FiveNumber:
    constituent: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n: int


@dataclass
class QuartileSummary:
    floor: float
    rows: list[FiveNumber]
    n: int
    insufficient: bool

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["constituent", "min", "q1", "median", "q3", "max", "n", "capacity_floor"])
            if self.insufficient:
                for name in CONSTITUENT_NAMES:
                    w.writerow([name, "NA", "NA", "NA", "NA", "NA", self.n, repr(self.floor)])
                return
            for r in self.rows:
                w.writerow([r.constituent] + [repr(v) for v in (r.min, r.q1, r.median, r.q3, r.max)]
                           + [r.n, repr(self.floor)])


def five_number(values) -> tuple[float, float, float, float, float]:
    return tuple(quantile_linear(values, p) for p in (0.0, 0.25, 0.5, 0.75, 1.0))


def quartile_summary(rows: list[tuple[FormulationDesign, float]], floor: float) -> QuartileSummary:
    """Five-number summary of each constituent's mol% among rows with capacity >= floor."""
    if not rows:
        raise InputError("no rows to summarise")
    kept = [d for d, c in rows if c >= floor]
    if len(kept) < MIN_QUARTILE_SAMPLES:
        return QuartileSummary(floor, [], len(kept), True)
    mol = np.array([d.mol for d in kept])
    out = [FiveNumber(name, *five_number(mol[:, k]), len(kept)) for k, name in enumerate(CONSTITUENT_NAMES)]
    return QuartileSummary(floor, out, len(kept), False)
