"""CSV and JSON formats for prices, grids, tail statistics and state models."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from mstates.empirical_copula import AsymmetryResult, CopulaGrid
from mstates.timeseries import PriceMatrix

log = logging.getLogger(__name__)


class IngestError(ValueError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def read_prices(path, strict_missing: bool = False) -> tuple[PriceMatrix, dict]:
    """Read a ``date,<ticker>...`` price CSV.

    Tickers with empty cells are dropped with a warning (an error when
    ``strict_missing``). Returns the matrix and a diagnostics dict.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise IngestError(f"{path}:1: header must be 'date,<ticker1>,<ticker2>,...'")
    tickers = header[1:]
    if len(set(tickers)) != len(tickers):
        raise IngestError(f"{path}:1: duplicate ticker names")
    dates, cells, linenos = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        dates.append(row[0].strip())
        cells.append([c.strip() for c in row[1:]])
        linenos.append(lineno)
    if not dates:
        raise IngestError(f"{path}: no data rows")
    for lineno, a, b in zip(linenos[1:], dates, dates[1:]):
        if a >= b:
            raise IngestError(f"{path}:{lineno}: dates not strictly increasing ({a} then {b})")

    values = np.empty((len(tickers), len(dates)))
    missing = np.zeros((len(tickers), len(dates)), bool)
    for t, row in enumerate(cells):
        for k, cell in enumerate(row):
            if cell == "":
                missing[k, t] = True
                values[k, t] = np.nan
                continue
            try:
                values[k, t] = float(cell)
            except ValueError:
                raise IngestError(f"{path}:{linenos[t]}: cannot parse price {cell!r} for {tickers[k]}") from None
            if not (values[k, t] > 0 and math.isfinite(values[k, t])):
                raise IngestError(
                    f"{path}:{linenos[t]}: non-positive price {cell} for ticker {tickers[k]} on {dates[t]}"
                )

    n_missing = missing.sum(axis=1)
    dropped = [tickers[k] for k in np.flatnonzero(n_missing)]
    if dropped:
        msg = f"{path}: tickers with missing cells: " + ", ".join(
            f"{tickers[k]} ({n_missing[k]})" for k in np.flatnonzero(n_missing)
        )
        if strict_missing:
            raise IngestError(msg)
        log.warning("%s; dropping them", msg)
    keep = n_missing == 0
    if not keep.any():
        raise IngestError(f"{path}: every ticker has missing cells")
    prices = PriceMatrix([t for t, k in zip(tickers, keep) if k], dates, values[keep])
    diagnostics = {
        "tickers": int(keep.sum()),
        "days": len(dates),
        "dropped_tickers": dropped,
        "missing_cells": {tickers[k]: int(n_missing[k]) for k in np.flatnonzero(n_missing)},
    }
    return prices, diagnostics


def write_prices(path, prices: PriceMatrix) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *prices.tickers])
        for t, d in enumerate(prices.dates):
            w.writerow([d, *(_fmt(x) for x in prices.values[:, t])])


def write_grid(path, grid: CopulaGrid, column: str = "density") -> None:
    c = grid.centers()
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u_bin_center", "v_bin_center", column])
        for a in range(grid.bins):
            for b in range(grid.bins):
                w.writerow([_fmt(c[a]), _fmt(c[b]), _fmt(grid.density[a, b])])


def read_grid(path, validate: bool = True, tol: float = 1e-6) -> CopulaGrid:
    """Load a grid CSV; by default re-check that the density integrates to one."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:] if r])
    n = int(round(math.sqrt(len(data))))
    if n * n != len(data):
        raise ValueError(f"{path}: {len(data)} rows do not form a square grid")
    order = np.lexsort((data[:, 1], data[:, 0]))
    grid = CopulaGrid(data[order, 2].reshape(n, n), kind="loaded", meta={"path": str(path)})
    if validate:
        mass = grid.total_mass()
        if abs(mass - 1.0) > tol or np.any(grid.density < -tol):
            raise ValueError(f"{path}: grid mass {mass!r} violates normalization")
    return grid


def write_tails(path, asym: AsymmetryResult, tickers=None) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_k", "pair_l", "LL", "UL", "UU", "LU", "alpha", "beta"])
        for i, (k, l) in enumerate(asym.pairs):
            name_k = tickers[k] if tickers else k
            name_l = tickers[l] if tickers else l
            w.writerow([name_k, name_l, *(_fmt(v[i]) for v in
                        (asym.LL, asym.UL, asym.UU, asym.LU, asym.alpha, asym.beta))])


def write_asymmetry_histogram(path, asym: AsymmetryResult, bins: int = 30) -> None:
    h = asym.histograms(bins)
    e = h["edges"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "alpha_count", "beta_count"])
        for i in range(bins):
            w.writerow([_fmt(e[i]), _fmt(e[i + 1]), int(h["alpha"][i]), int(h["beta"][i])])


def write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if isinstance(x, float) else x for x in r])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
