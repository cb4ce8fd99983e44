"""Batch prediction over a design pool, ranking and shortlisting."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .candidates import POOL_COLUMNS, Candidate
from .errors import DatasetError, InputError
from .formulation import (
    MOL_COLUMNS, DescriptorBuilder, FormulationDesign, Separator, _number, design_columns,
)
from .regressor import RegressorModel, predict_matrix

PREDICTION_COLUMNS = POOL_COLUMNS + ("predicted_mah_g", "rank")
CHUNK = 2048


@dataclass(frozen=True)
class ScreeningResult:
    design_id: int
    design: FormulationDesign
    predicted: float
    rank: int


def screen(model: RegressorModel, builder: DescriptorBuilder, pool: list[Candidate],
           workers: int = 1) -> list[ScreeningResult]:
    """Predict every candidate and rank by descending capacity (ties by design_id).

    Candidates are processed in design_id order in fixed-size chunks, so the
    result does not depend on pool order or on ``workers``.
    """
    if not pool:
        raise InputError("empty candidate pool")
    ordered = sorted(pool, key=lambda c: c.design_id)
    ids = [c.design_id for c in ordered]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate design_id in pool")
    chunks = [ordered[k:k + CHUNK] for k in range(0, len(ordered), CHUNK)]

    def run(chunk):
        X = builder.matrix([c.design for c in chunk])
        return predict_matrix(model, X, builder.convention)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    pred = np.concatenate(parts)
    order = sorted(range(len(ordered)), key=lambda i: (-pred[i], ids[i]))
    return [
        ScreeningResult(ordered[i].design_id, ordered[i].design, float(pred[i]), r + 1)
        for r, i in enumerate(order)
    ]


def shortlist(results: list[ScreeningResult], window: tuple[float, float] = (40.0, 45.0),
              threshold: float = 210.0, max_n: int | None = None,
              separator: Separator | None = None,
              salt_caps: dict[int, float] | None = None) -> list[ScreeningResult]:
    """Designs inside the loading window predicted strictly above ``threshold``.

    ``salt_caps`` optionally maps a constituent index to a maximum mol%.
    """
    lo, hi = window
    if lo > hi:
        raise InputError(f"loading window [{lo}, {hi}] is empty")
    keep = [
        r for r in results
        if lo <= r.design.loading <= hi and r.predicted > threshold
        and (separator is None or r.design.separator == separator)
        and all(r.design.mol[k] <= cap for k, cap in (salt_caps or {}).items())
    ]
    keep.sort(key=lambda r: r.rank)
    return keep if max_n is None else keep[:max_n]


def write_predictions(path, results: list[ScreeningResult]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for r in results:
            w.writerow([r.design_id] + design_columns(r.design) + [repr(r.predicted), r.rank])


def read_predictions(path) -> list[ScreeningResult]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"predictions file not found: {path}")
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                design = FormulationDesign(
                    tuple(_number(row, c) for c in MOL_COLUMNS), _number(row, "lii_wtpct"),
                    Separator.parse(row["separator"] or ""),
                )
                out.append(ScreeningResult(int(row["design_id"]), design,
                                           _number(row, "predicted_mah_g"), int(row["rank"])))
            except (InputError, ValueError) as exc:
                raise DatasetError(f"{path} row {row_no}: {exc}") from exc
    return out


def write_scatter_svg(path, results: list[ScreeningResult], threshold: float | None = None,
                      window: tuple[float, float] | None = None) -> None:
    """Predicted capacity against cathode loading, one dot per design."""
    W, H, pad = 640, 420, 50
    xs = np.array([r.design.loading for r in results])
    ys = np.array([r.predicted for r in results])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if threshold is not None:
        y0, y1 = min(y0, threshold), max(y1, threshold)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def sy(v):
        return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    colour = {Separator.CELGARD: "#1f77b4", Separator.QMA: "#d62728"}
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
    ]
    if window is not None:
        a, b = sx(max(window[0], x0)), sx(min(window[1], x1))
        if b > a:
            out.append(f'<rect x="{a:.1f}" y="{pad}" width="{b - a:.1f}" height="{H - 2 * pad}" fill="#eeeeee"/>')
    out.append(f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>')
    out.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>')
    if threshold is not None:
        t = sy(threshold)
        out.append(f'<line x1="{pad}" y1="{t:.1f}" x2="{W - pad}" y2="{t:.1f}" stroke="gray" stroke-dasharray="4 3"/>')
    for r in sorted(results, key=lambda r: r.design_id):
        out.append(f'<circle cx="{sx(r.design.loading):.1f}" cy="{sy(r.predicted):.1f}" r="1.2" '
                   f'fill="{colour[r.design.separator]}" fill-opacity="0.35"/>')
    for v in np.linspace(x0, x1, 7):
        out.append(f'<text x="{sx(v):.1f}" y="{H - pad + 16}" font-size="11" text-anchor="middle">{v:.0f}</text>')
    for v in np.linspace(y0, y1, 6):
        out.append(f'<text x="{pad - 6}" y="{sy(v) + 4:.1f}" font-size="11" text-anchor="end">{v:.0f}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 10}" font-size="12" text-anchor="middle">LiI wt%</text>')
    out.append(f'<text x="14" y="{H / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {H / 2})">predicted capacity (mAh/g)</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")

