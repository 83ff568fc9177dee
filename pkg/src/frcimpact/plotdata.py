"""Plot-ready long-format tables (``x, y, series``) and heatmap matrices.

Each ``kind`` writes one file per figure analogue into an output directory.
Heatmaps use the matrix schema: rows are the explained tenor, columns the
explaining tenor.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DomainError
from .field import TenorGrid
from .io import write_long, write_matrix

PLOT_KINDS = ("price-corr", "kappa-fit", "autocorr", "r2", "kyle-grid", "impulse", "y-vector", "pairwise")


def _surface_rows(matrix: np.ndarray, grid: TenorGrid, prefix: str = ""):
    months = grid.months
    labels = grid.labels()
    for i, lab in enumerate(labels):
        for j in range(grid.n):
            yield months[j], matrix[i, j], f"{prefix}{lab}"


def emit_plotdata(result, kind: str, out_dir) -> list[Path]:
    """Write the plot table(s) for ``result``.

    ``result`` by kind:

    - ``price-corr``: a FieldModel; ``n^2`` rows.
    - ``kappa-fit``: ``(empirical_corr, model_corr)``; ``2 n^2`` rows.
    - ``autocorr``: list of FlowAutocorr; accumulated values plus the band.
    - ``r2``: list of EvalReport; one row per report, x is the period start year.
    - ``kyle-grid``: ``(liquidity, matrix)``; heatmap.
    - ``impulse``: ``(ImpulseResponse, TenorGrid)``; steps x n rows keyed by ``k dt / tau``.
    - ``y-vector``: ``(y, TenorGrid)``.
    - ``pairwise``: PairwiseDeltaR2; heatmap.
    """
    out = Path(out_dir)
    if kind == "price-corr":
        return [write_long(out / "plot_price_corr.csv", _surface_rows(np.asarray(result.price_corr), result.grid), kind)]
    if kind == "kappa-fit":
        emp, mod = (np.asarray(a) for a in result)
        grid = TenorGrid(emp.shape[0])
        rows = [*_surface_rows(emp, grid, "empirical:"), *_surface_rows(mod, grid, "model:")]
        return [write_long(out / "plot_kappa_fit.csv", rows, kind)]
    if kind == "autocorr":
        rows = []
        for fa in result:
            lab = f"t{3 * fa.tenor:02d}"
            rows += [(lag, v, lab) for lag, v in zip(fa.lags, fa.accumulated)]
        if result:
            rows += [(lag, b, "band") for lag, b in zip(result[0].lags, result[0].accumulated_band)]
        return [write_long(out / "plot_autocorr.csv", rows, kind)]
    if kind == "r2":
        rows = [(int(str(r.period[0])[:4]), r.r2_w_sigma, f"{r.model_kind}:{r.sample}") for r in result]
        return [write_long(out / "plot_r2.csv", rows, kind)]
    if kind == "kyle-grid":
        liq, mat = result
        labels = [format(float(v), ".6g") for v in liq]
        return [write_matrix(out / "plot_kyle_grid.csv", mat, labels, labels, kind)]
    if kind == "impulse":
        resp, grid = result
        rows = [
            (m, resp.steps[k, j], format(float(t), ".10g"))
            for k, t in enumerate(resp.times)
            for j, m in enumerate(grid.months)
        ]
        return [write_long(out / "plot_impulse.csv", rows, kind)]
    if kind == "y-vector":
        y, grid = result
        return [write_long(out / "plot_y_vector.csv", [(m, v, "Y") for m, v in zip(grid.months, y)], kind)]
    if kind == "pairwise":
        grid = TenorGrid(result.matrix.shape[0])
        name = f"pairwise-{result.mode}"
        return [write_matrix(out / f"plot_pairwise_{result.mode}.csv", result.matrix, grid.labels(), grid.labels(), name)]
    raise DomainError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
