"""Height-grid comparison: vertical alignment and robust accuracy metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyEvaluation, InsufficientOverlap
from .mesh import DemGrid, write_esri_ascii

MIN_OVERLAP_CELLS = 10


@dataclass
class MetricsReport:
    """Benchmark statistics of a test grid against ground truth."""

    completeness_pct: float
    rmse_trunc_m: float
    nmad_m: float
    perc68_m: float
    n_total: int
    n_valid: int
    vertical_offset_applied_m: float
    rmse_defined: bool = True

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _check_registration(test, truth):
    if test.heights.shape != truth.heights.shape:
        raise ValueError("grids must share dimensions")
    same = (
        np.allclose(test.origin_local, truth.origin_local)
        and np.isclose(test.cell_size, truth.cell_size)
    )
    if not same:
        raise ValueError("grids must share origin and cell size")


def align_vertical(test, truth):
    """Remove the median vertical offset of test relative to truth.

    Returns (shifted grid, applied offset in meters). The median makes the
    alignment robust to gross outliers in either grid.
    """
    _check_registration(test, truth)
    both = test.valid & truth.valid
    if both.sum() < MIN_OVERLAP_CELLS:
        raise InsufficientOverlap(
            f"only {int(both.sum())} co-valid cells, need {MIN_OVERLAP_CELLS}"
        )
    offset = float(np.median(test.heights[both] - truth.heights[both]))
    heights = np.where(test.valid, test.heights - offset, test.nodata)
    shifted = DemGrid(
        origin_local=test.origin_local,
        cell_size=test.cell_size,
        heights=heights,
        nodata=test.nodata,
    )
    return shifted, offset


def nearest_rank_percentile(values, pct):
    """Nearest-rank percentile: smallest value with >= pct% at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if len(v) == 0:
        raise ValueError("empty sample")
    rank = int(np.ceil(pct / 100.0 * len(v)))
    return float(v[max(rank, 1) - 1])


def compute_metrics(test, truth, mask=None, trunc=3.0,
                    vertical_offset_applied=0.0):
    """Residual statistics over co-valid (optionally masked) cells.

    completeness counts residuals strictly below the truncation threshold;
    the truncated RMSE averages only those. NMAD and perc-68 use the full
    residual set. With everything truncated the RMSE is reported as 0 with
    ``rmse_defined`` False.
    """
    _check_registration(test, truth)
    if trunc <= 0:
        raise ValueError("trunc must be positive")
    sel = test.valid & truth.valid
    if mask is not None:
        _check_registration(mask, truth)
        sel &= mask.valid & (mask.heights > 0)
    n_total = int(test.heights.size)
    n_valid = int(sel.sum())
    if n_valid == 0:
        raise EmptyEvaluation("no co-valid evaluation cells")
    r = test.heights[sel] - truth.heights[sel]
    absr = np.abs(r)
    keep = absr < trunc
    completeness = 100.0 * float(keep.sum()) / n_valid
    if keep.any():
        rmse = float(np.sqrt(np.mean(r[keep] ** 2)))
        rmse_defined = True
    else:
        rmse = 0.0
        rmse_defined = False
    med = np.median(r)
    nmad = 1.4826 * float(np.median(np.abs(r - med)))
    perc68 = nearest_rank_percentile(absr, 68.0)
    return MetricsReport(
        completeness_pct=completeness,
        rmse_trunc_m=rmse,
        nmad_m=nmad,
        perc68_m=perc68,
        n_total=n_total,
        n_valid=n_valid,
        vertical_offset_applied_m=float(vertical_offset_applied),
        rmse_defined=rmse_defined,
    )


def residual_grid(test, truth):
    """Per-cell residual grid (test - truth), nodata where either is invalid."""
    _check_registration(test, truth)
    both = test.valid & truth.valid
    res = np.where(both, test.heights - truth.heights, truth.nodata)
    return DemGrid(
        origin_local=truth.origin_local,
        cell_size=truth.cell_size,
        heights=res,
        nodata=truth.nodata,
    )


def evaluate_dem(test, truth, mask=None, trunc=3.0, align=True,
                 json_path=None, residual_path=None):
    """Full evaluation pass: align, measure, optionally write artifacts."""
    offset = 0.0
    if align:
        test, offset = align_vertical(test, truth)
    report = compute_metrics(
        test, truth, mask=mask, trunc=trunc, vertical_offset_applied=offset
    )
    if json_path is not None:
        report.to_json(json_path)
    if residual_path is not None:
        write_esri_ascii(residual_path, residual_grid(test, truth))
    return report
