"""End-to-end run: ingest, normalize, window, cluster, estimate, fit, report."""

from __future__ import annotations

import configparser
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from mstates import io
from mstates.empirical_copula import CopulaGrid, state_asymmetry, state_average_copula
from mstates.kcopula import KCopulaParams, fit_N, k_copula_density_grid
from mstates.states import (
    assemble_state_series,
    distance_matrix,
    gap_select_k,
    pam_cluster,
    upper_triangle_features,
)
from mstates.timeseries import (
    WindowSpec,
    average_correlation,
    compute_returns,
    correlation_matrix,
    local_normalize,
    partition_windows,
)

log = logging.getLogger(__name__)

ENV_PREFIX = "MSTATES_"
BRANCHES = ("original", "locally_normalized")
FIGURE_PARAMS = ((0.0, 5.0), (0.5, 5.0), (0.2, 3.0), (0.2, 30.0))


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    input: str = ""
    output: str = "mstates-out"
    window_length: int = 42
    local_n: int = 13
    bins: int = 20
    use_locally_normalized: bool = True
    gap_k_max: int = 10
    n_ref: int = 50
    gap_reference: str = "pca"
    fit_min: float = 1.0
    fit_max: float = 500.0
    seed: int = 0
    threads: int = 1
    strict_missing: bool = False

    def validate(self) -> PipelineConfig:
        WindowSpec(self.window_length)
        if self.local_n < 2:
            raise ValueError("local_n must be >= 2")
        if self.bins < 5 or self.bins % 5:
            raise ValueError("bins must be a positive multiple of 5")
        if self.gap_k_max < 1 or self.n_ref < 1:
            raise ValueError("gap_k_max and n_ref must be >= 1")
        if not 0 < self.fit_min < self.fit_max:
            raise ValueError("fit bounds must satisfy 0 < fit_min < fit_max")
        if self.gap_reference not in ("pca", "box"):
            raise ValueError("gap_reference must be 'pca' or 'box'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        return self

    @staticmethod
    def _coerce(name, raw):
        kind = {f.name: f.type for f in fields(PipelineConfig)}[name]
        if kind == "bool":
            val = str(raw).strip().lower()
            if val not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(f"{name}: cannot read {raw!r} as a boolean")
            return val in ("1", "true", "yes", "on")
        return {"int": int, "float": float, "str": str}[kind](raw)

    def updated(self, **overrides) -> PipelineConfig:
        data = asdict(self)
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in data:
                raise ValueError(f"unknown config key {k!r}")
            data[k] = self._coerce(k, v)
        return PipelineConfig(**data)

    def with_env(self, environ=None) -> PipelineConfig:
        environ = os.environ if environ is None else environ
        found = {
            f.name: environ[ENV_PREFIX + f.name.upper()]
            for f in fields(self)
            if ENV_PREFIX + f.name.upper() in environ
        }
        return self.updated(**found)

    def dumps(self) -> str:
        cp = configparser.ConfigParser()
        cp["pipeline"] = {k: str(v) for k, v in asdict(self).items()}
        lines = ["[pipeline]"] + [f"{k} = {v}" for k, v in cp["pipeline"].items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> PipelineConfig:
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if "pipeline" not in cp:
            raise ValueError("config file needs a [pipeline] section")
        return cls().updated(**dict(cp["pipeline"]))

    @classmethod
    def load(cls, path) -> PipelineConfig:
        return cls.loads(Path(path).read_text())


def _stage(name):
    """Re-raise any failure inside the block as a PipelineError tagged with the stage."""

    class _Ctx:
        def __enter__(self):
            log.info("stage %s", name)

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(name, f"{exc_type.__name__}: {exc}") from exc
            return False

    return _Ctx()


def _branch_states(returns, windows, model, cfg, branch):
    def one(state):
        series = assemble_state_series(returns, windows, model.labels, state)
        c_bar = average_correlation(series)
        emp = state_average_copula(series, cfg.bins)
        fit = fit_N(emp, c_bar, bounds=(cfg.fit_min, cfg.fit_max))
        ana = k_copula_density_grid(KCopulaParams(c_bar, fit.N), cfg.bins)
        asym = state_asymmetry(series, cfg.bins)
        record = {
            "state": state,
            "n_windows": int(np.sum(model.labels == state)),
            "series_length": series.values.shape[1],
            "c_bar": c_bar,
            "N": fit.N,
            "msd": fit.msd,
            "N_at_boundary": fit.at_boundary,
            **asym.summary(),
        }
        return record, emp, ana, asym

    states = list(range(1, model.k + 1))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            return list(ex.map(one, states))
    return [one(s) for s in states]


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage and write all artifacts into ``cfg.output``.

    Artifacts are staged in a temporary directory next to the output and only
    moved into place when every stage succeeded.
    """
    cfg.validate()
    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".mstates-", dir=out.parent))
    try:
        report = _run(cfg, staging)
        out.mkdir(parents=True, exist_ok=True)
        for src in sorted(staging.rglob("*")):
            if src.is_file():
                dst = out / src.relative_to(staging)
                dst.parent.mkdir(parents=True, exist_ok=True)
                os.replace(src, dst)
        return report
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def _run(cfg: PipelineConfig, out: Path) -> dict:
    with _stage("ingest"):
        prices, diag = io.read_prices(cfg.input, cfg.strict_missing)

    with _stage("normalize"):
        original = compute_returns(prices)
        normalized = local_normalize(original, cfg.local_n)
        # both branches share the normalized date axis so windows line up
        original = original.take(slice(cfg.local_n - 1, None))

    with _stage("windows"):
        windows = partition_windows(normalized, WindowSpec(cfg.window_length))
        corrs = [correlation_matrix(normalized, sl, i) for i, sl in windows]

    with _stage("cluster"):
        features = upper_triangle_features(corrs)
        k_star, curve = gap_select_k(
            features, cfg.gap_k_max, cfg.n_ref, cfg.seed, cfg.threads, cfg.gap_reference
        )
        model = pam_cluster(distance_matrix(corrs), k_star, seed=cfg.seed)

    (out / "grids").mkdir()
    (out / "tails").mkdir()
    with _stage("artifacts"):
        io.write_json(out / "state_model.json", model.to_dict())
        io.write_rows(out / "gap_curve.csv", ["k", "gap", "s_k", "W_k"], curve.rows())
        io.write_rows(
            out / "windows.csv",
            ["window_index", "start_date", "end_date", "state"],
            [(i, normalized.dates[sl.start], normalized.dates[sl.stop - 1], int(lab))
             for (i, sl), lab in zip(windows, model.labels)],
        )
        (out / "run_config.ini").write_text(cfg.dumps())

    branches = {"original": original, "locally_normalized": normalized}
    if not cfg.use_locally_normalized:
        branches.pop("locally_normalized")
    results = {}
    for branch, returns in branches.items():
        with _stage(f"copula:{branch}"):
            per_state = _branch_states(returns, windows, model, cfg, branch)
        with _stage(f"artifacts:{branch}"):
            gdir = out / "grids" / branch
            tdir = out / "tails" / branch
            gdir.mkdir()
            tdir.mkdir()
            for record, emp, ana, asym in per_state:
                s = record["state"]
                io.write_grid(gdir / f"state{s}_empirical.csv", emp)
                io.write_grid(gdir / f"state{s}_analytic.csv", ana)
                io.write_grid(
                    gdir / f"state{s}_difference.csv",
                    CopulaGrid(emp.density - ana.density, kind="difference"),
                    column="difference",
                )
                io.write_tails(tdir / f"state{s}_tails.csv", asym, returns.tickers)
                io.write_asymmetry_histogram(tdir / f"state{s}_asymmetry_hist.csv", asym)
            results[branch] = [r for r, *_ in per_state]

    with _stage("report"):
        report = {
            "input": {k: v for k, v in diag.items() if k != "missing_cells"},
            "excluded_points": normalized.excluded,
            "flagged_windows": {str(c.window_index): list(c.flagged) for c in corrs if c.flagged},
            "n_windows": len(windows),
            "window_length": cfg.window_length,
            "k": model.k,
            "medoids": [int(m) for m in model.medoids],
            "gap_curve": [dict(zip(("k", "gap", "s_k", "W_k"), r)) for r in curve.rows()],
            "branches": results,
        }
        io.write_json(out / "report.json", report)
        states = range(1, model.k + 1)
        header = ["returns", "quantity"] + [f"state {s}" for s in states]
        param_rows, msd_rows = [], []
        for branch, recs in results.items():
            param_rows.append([branch, "c_bar", *(r["c_bar"] for r in recs)])
            param_rows.append([branch, "N", *(r["N"] for r in recs)])
            msd_rows.append([branch, "msd", *(r["msd"] for r in recs)])
        io.write_rows(out / "table_parameters.csv", header, param_rows)
        io.write_rows(out / "table_msd.csv", header, msd_rows)
    return report


def emit_figure_grids(out_dir, params=(), bins: int = 20) -> list:
    """Analytic K-copula grids for the standard parameter pairs plus any extras."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, N in list(FIGURE_PARAMS) + [tuple(p) for p in params]:
        grid = k_copula_density_grid(KCopulaParams(float(c), float(N)), bins)
        path = out_dir / f"kcopula_c{float(c):g}_N{float(N):g}.csv"
        io.write_grid(path, grid)
        paths.append(path)
    return paths
