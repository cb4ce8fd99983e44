"""Dummy design pool: random compositions x cathode loadings x separators."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, GenerationError, InputError
from .formulation import (
    MOL_COLUMNS, N_CONSTITUENTS, FormulationDesign, Separator, _number, design_columns,
)

DEFAULT_LOADINGS = (30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0)
POOL_COLUMNS = ("design_id",) + MOL_COLUMNS + ("lii_wtpct", "separator")


@dataclass
class GenConfig:
    n_compositions: int = 2410
    loadings: tuple[float, ...] = DEFAULT_LOADINGS
    separators: tuple[Separator, ...] = (Separator.CELGARD, Separator.QMA)
    salt_cap: float = 50.0
    over_cap_fraction: float = 0.0
    resolution: float = 1.0
    seed: int = 0
    max_attempts_per_composition: int = 1000

    def __post_init__(self):
        self.loadings = tuple(float(v) for v in self.loadings)
        self.separators = tuple(
            Separator.parse(s) if isinstance(s, str) else Separator(s) for s in self.separators
        )
        if self.n_compositions <= 0:
            raise ConfigError("n_compositions must be positive")
        if not self.loadings or any(not 0 <= v <= 100 for v in self.loadings):
            raise ConfigError(f"loadings must be non-empty and within [0, 100]: {self.loadings}")
        if not self.separators:
            raise ConfigError("at least one separator is required")
        if not 0 < self.salt_cap <= 100:
            raise ConfigError(f"salt cap must lie in (0, 100], got {self.salt_cap}")
        if not 0 <= self.over_cap_fraction <= 1:
            raise ConfigError("over_cap_fraction must lie in [0, 1]")
        units = 100.0 / self.resolution
        if self.resolution <= 0 or abs(units - round(units)) > 1e-9:
            raise ConfigError(f"resolution {self.resolution} must divide 100 mol%")

    @property
    def units(self) -> int:
        return round(100.0 / self.resolution)

    def metadata(self) -> dict[str, str]:
        return {
            "n_compositions": str(self.n_compositions),
            "loadings": ",".join(repr(v) for v in self.loadings),
            "separators": ",".join(s.name for s in self.separators),
            "salt_cap": repr(self.salt_cap),
            "over_cap_fraction": repr(self.over_cap_fraction),
            "resolution": repr(self.resolution),
            "seed": str(self.seed),
        }


@dataclass(frozen=True)
class Candidate:
    design_id: int
    design: FormulationDesign


def sample_composition(rng: np.random.Generator, units: int = 100, k: int = N_CONSTITUENTS) -> np.ndarray:
    """Uniform draw from the integer compositions of ``units`` into ``k`` parts.

    Stars and bars: choosing ``k-1`` distinct bar positions among
    ``units+k-1`` slots is a bijection onto the compositions.
    """
    bars = np.sort(rng.choice(units + k - 1, size=k - 1, replace=False))
    edges = np.concatenate([[-1], bars, [units + k - 1]])
    return np.diff(edges) - 1


def sample_compositions(n: int, rng: np.random.Generator, salt_cap: float = 50.0,
                        resolution: float = 1.0, over_cap_fraction: float = 0.0,
                        max_attempts_per_composition: int = 1000, distinct: bool = True) -> list[tuple[float, ...]]:
    """``n`` compositions in mol% on the simplex grid, rejection-sampled on the salt cap."""
    units = round(100.0 / resolution)
    allowed_over = math.floor(over_cap_fraction * n)
    over = 0
    seen: set[tuple[int, ...]] = set()
    out: list[tuple[float, ...]] = []
    attempts = 0
    budget = max_attempts_per_composition * n
    while len(out) < n:
        attempts += 1
        if attempts > budget:
            raise GenerationError(
                f"gave up after {budget} draws with {len(out)}/{n} compositions; "
                f"salt cap {salt_cap} mol% at resolution {resolution} is too tight"
            )
        parts = sample_composition(rng, units)
        key = tuple(int(v) for v in parts)
        if distinct and key in seen:
            continue
        mol = tuple(v * resolution for v in key)
        if math.fsum(mol[:4]) > salt_cap + 1e-9:
            if over >= allowed_over:
                continue
            over += 1
        seen.add(key)
        out.append(mol)
    return out


def generate(config: GenConfig | None = None) -> list[Candidate]:
    """Cross product of sampled compositions with loadings and separators.

    Order is composition-major, then loading, then separator; ``design_id``
    is the position in that order.
    """
    config = config or GenConfig()
    rng = np.random.default_rng(config.seed)
    comps = sample_compositions(
        config.n_compositions, rng, config.salt_cap, config.resolution,
        config.over_cap_fraction, config.max_attempts_per_composition,
    )
    pool = []
    for mol in comps:
        for loading in config.loadings:
            for sep in config.separators:
                pool.append(Candidate(len(pool), FormulationDesign(mol, loading, sep)))
    return pool


def write_pool(path, pool: list[Candidate], metadata: dict[str, str] | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        for k, v in sorted((metadata or {}).items()):
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POOL_COLUMNS)
        for c in pool:
            w.writerow([c.design_id] + design_columns(c.design))


def read_pool(path) -> list[Candidate]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"pool file not found: {path}")
    pool = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = [c for c in POOL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                design = FormulationDesign(
                    tuple(_number(row, c) for c in MOL_COLUMNS),
                    _number(row, "lii_wtpct"),
                    Separator.parse(row["separator"] or ""),
                )
                pool.append(Candidate(int(row["design_id"]), design))
            except (InputError, ValueError) as exc:
                raise DatasetError(f"{path} row {row_no}: {exc}") from exc
    if not pool:
        raise DatasetError(f"{path}: pool is empty")
    return pool
