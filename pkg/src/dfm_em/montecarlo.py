"""Monte Carlo harness: replicate estimation experiments over a cell grid.

Each cell fixes a data generating process and an evaluation mode:

* ``"em"`` — draw a panel, fit by principal components (baseline) and by
  the EM algorithm with a diagonal idiosyncratic covariance (deliberately
  mis-specified when the DGP has cross- or serial correlation), and
  aggregate trace statistics, common-component MSEs and coverage of the
  standardized errors.
* ``"filter_only"`` — feed the true values of the parameters that the
  estimated (white-noise, diagonal-covariance) model actually carries —
  true loadings, factor VAR, and the diagonal of the true idiosyncratic
  innovation covariance — to the Kalman filter and record the steady-state
  traces of the one-step-ahead and filtered MSE matrices.

Replication b of cell j draws its seed from the (j, b) substream of the
base seed, and per-replication results are reduced in replication order,
so reports are bit-identical for any parallelism level.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import EmConfig, EmError, em_fit
from .kalman import (
    FilterNumericalError,
    kalman_filter,
    stationary_init,
    steady_state_diagnostics,
)
from .metrics import HIST_EDGES, CoverageTable, ZAccumulator, common_mse, \
    trace_statistic, z_scores
from .model import DfmParams, ModelDims
from .pca import IdentificationError, pc_estimate
from .simulate import DgpConfig, draw_dgp

__all__ = [
    "McCell",
    "McGrid",
    "McCellReport",
    "McReport",
    "CellAbortError",
    "run_cell",
    "run_grid",
    "write_report",
]

MAX_FAILURE_FRACTION = 0.2


class CellAbortError(RuntimeError):
    """Too many replication failures in one cell; carries the cell label."""

    def __init__(self, label, failures, B):
        super().__init__(
            f"cell {label!r} aborted: {failures}/{B} replications failed "
            f"(limit {MAX_FAILURE_FRACTION:.0%})"
        )
        self.label = label


@dataclass(frozen=True)
class McCell:
    """One experiment cell: a DGP setting plus the evaluation mode."""

    label: str
    n: int
    T: int
    r: int
    q: int
    tau: float = 0.0
    delta: float = 0.0
    theta: float = 0.5
    mu: float = 0.5
    innovation: str = "gaussian"
    mode: str = "em"

    def __post_init__(self):
        if self.mode not in ("em", "filter_only"):
            raise ValueError(f"unknown cell mode {self.mode!r}")

    def dgp_config(self, seed: int) -> DgpConfig:
        return DgpConfig(
            dims=ModelDims(n=self.n, T=self.T, r=self.r, q=self.q),
            tau=self.tau, delta=self.delta, theta=self.theta, mu=self.mu,
            innovation=self.innovation, seed=seed,
        )


@dataclass(frozen=True)
class McGrid:
    """A list of cells with a replication count and a base seed."""

    cells: tuple
    B: int = 100
    base_seed: int = 0

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        object.__setattr__(self, "cells", tuple(self.cells))

    @staticmethod
    def from_json(path) -> "McGrid":
        with open(path) as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(
                f"{path}: parse error at line {exc.lineno}: {exc.msg}"
            ) from exc
        try:
            cells = tuple(McCell(**c) for c in doc["cells"])
            return McGrid(cells=cells, B=int(doc.get("B", 100)),
                          base_seed=int(doc.get("base_seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: invalid experiment file: {exc}") from exc


@dataclass
class McCellReport:
    label: str
    mode: str
    cell: McCell
    B: int
    failures: int
    stats: dict = field(default_factory=dict)
    coverage: CoverageTable = None
    hist: np.ndarray = None
    seconds: float = 0.0


@dataclass
class McReport:
    cells: list
    base_seed: int
    B: int
    seconds: float = 0.0


def _cell_key(cell: McCell) -> int:
    """Stable 32-bit key derived from the cell's contents (not its position),
    so reordering cells in a grid leaves every cell's results unchanged."""
    digest = hashlib.sha256(repr(cell).encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _rep_seed(base_seed: int, cell_key: int, b: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base_seed),
                                spawn_key=(int(cell_key), int(b)))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_replication(args):
    """One replication; returns a picklable result dict."""
    cell, seed = args
    try:
        draw = draw_dgp(cell.dgp_config(seed))
        if cell.mode == "filter_only":
            truth = draw.params
            # The filter runs on the model actually estimated: white
            # measurement noise with the true idiosyncratic variances.
            fp = DfmParams(Lambda=truth.Lambda, A=truth.A, H=truth.H,
                           gamma_e=np.diag(truth.gamma_e_matrix()).copy())
            filt = kalman_filter(draw.panel, fp, stationary_init(fp))
            diag = steady_state_diagnostics(filt, cell.q)
            return {
                "failed": False,
                "tr_pred": diag.tr_pred,
                "tr_filt": diag.tr_filt,
                "t_bar": diag.t_bar,
            }

        dims = ModelDims(n=cell.n, T=cell.T, r=cell.r, q=cell.q)
        pc = pc_estimate(draw.panel, cell.r, cell.q)
        chi_pc = pc.Lambda0 @ pc.Ftilde
        res = em_fit(draw.panel, dims, EmConfig(), init=pc)
        chi_em = res.params.Lambda @ res.factors.F_smooth

        acc = ZAccumulator()
        acc.update(z_scores(res, draw.chi))
        return {
            "failed": False,
            "tr_f_em": trace_statistic(draw.factors.F, res.factors.F_smooth).value,
            "tr_lam_em": trace_statistic(draw.params.Lambda, res.params.Lambda).value,
            "tr_f_pc": trace_statistic(draw.factors.F, pc.Ftilde).value,
            "tr_lam_pc": trace_statistic(draw.params.Lambda, pc.Lambda0).value,
            "mse_em": common_mse(draw.chi, chi_em),
            "mse_pc": common_mse(draw.chi, chi_pc),
            "acc": acc,
            "converged": res.converged,
        }
    except (EmError, FilterNumericalError, IdentificationError,
            np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        return {"failed": True, "error": f"{type(exc).__name__}: {exc}"}


def run_cell(cell: McCell, B: int, base_seed: int,
             parallelism: int = 1) -> McCellReport:
    """Run B replications of one cell and aggregate.

    Failed replications are excluded and counted; the cell aborts if more
    than 20% fail. Results are reduced in replication order, which makes
    the aggregates independent of the parallelism level; replication seeds
    depend only on (base_seed, cell contents, b), not on the cell's
    position in a grid.
    """
    t0 = time.perf_counter()
    key = _cell_key(cell)
    jobs = [(cell, _rep_seed(base_seed, key, b)) for b in range(B)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_replication, jobs, chunksize=1))
    else:
        results = [_run_replication(j) for j in jobs]

    failures = sum(1 for r in results if r["failed"])
    if failures > MAX_FAILURE_FRACTION * B:
        raise CellAbortError(cell.label, failures, B)
    ok = [r for r in results if not r["failed"]]

    report = McCellReport(label=cell.label, mode=cell.mode, cell=cell,
                          B=B, failures=failures)
    m = len(ok)
    if cell.mode == "filter_only":
        tr_pred = sum((r["tr_pred"] for r in ok), np.zeros_like(ok[0]["tr_pred"])) / m
        tr_filt = sum((r["tr_filt"] for r in ok), np.zeros_like(ok[0]["tr_filt"])) / m
        t_bars = [r["t_bar"] for r in ok if r["t_bar"] is not None]
        report.stats = {
            "tr_pred": tr_pred,
            "tr_filt": tr_filt,
            "t_bar_mean": float(np.mean(t_bars)) if t_bars else float("nan"),
        }
    else:
        sums = {k: sum(r[k] for r in ok)
                for k in ("tr_f_em", "tr_lam_em", "tr_f_pc", "tr_lam_pc",
                          "mse_em", "mse_pc")}
        acc = ok[0]["acc"]
        for r in ok[1:]:
            acc = acc.merge(r["acc"])
        report.stats = {
            "tr_f_em": sums["tr_f_em"] / m,
            "tr_lam_em": sums["tr_lam_em"] / m,
            "tr_f_pc": sums["tr_f_pc"] / m,
            "tr_lam_pc": sums["tr_lam_pc"] / m,
            "rel_tr_f": (sums["tr_f_em"] / m) / (sums["tr_f_pc"] / m),
            "rel_tr_lam": (sums["tr_lam_em"] / m) / (sums["tr_lam_pc"] / m),
            "mse_em": sums["mse_em"] / m,
            "mse_pc": sums["mse_pc"] / m,
            "rel_mse": sums["mse_em"] / sums["mse_pc"],
            "n_converged": sum(int(r["converged"]) for r in ok),
        }
        report.coverage = acc.table()
        report.hist = acc.hist
    report.seconds = time.perf_counter() - t0
    return report


def run_grid(grid: McGrid, parallelism: int = 1) -> McReport:
    """Run every cell of the grid; each cell is seeded from its contents,
    so reordering cells leaves every per-cell result unchanged."""
    t0 = time.perf_counter()
    cells = [
        run_cell(cell, grid.B, grid.base_seed, parallelism)
        for cell in grid.cells
    ]
    return McReport(cells=cells, base_seed=grid.base_seed, B=grid.B,
                    seconds=time.perf_counter() - t0)


def _fmt(x) -> str:
    return repr(float(x))


_CSV_COLUMNS = (
    ["label", "mode", "n", "T", "r", "q", "tau", "delta", "B", "failures",
     "tr_f_em", "tr_lam_em", "tr_f_pc", "tr_lam_pc", "rel_tr_f", "rel_tr_lam",
     "mse_em", "mse_pc", "rel_mse",
     "cov_99", "cov_95", "cov_90", "cov_84", "cov_16", "cov_10", "cov_05",
     "cov_01", "z_mean", "z_std", "z_skew", "z_kurt"]
    + [f"tr_pred_{t}" for t in range(1, 6)]
    + [f"tr_filt_{t}" for t in range(1, 6)]
    + ["t_bar_mean"]
)


def write_report(report: McReport, outdir, overwrite: bool = False):
    """Write cells.csv, per-cell Z histograms and a run manifest.

    The CSV files are deterministic functions of the report contents;
    timings and environment details go only into manifest.json.
    """
    import os

    os.makedirs(outdir, exist_ok=True)
    cells_path = os.path.join(outdir, "cells.csv")
    if os.path.exists(cells_path) and not overwrite:
        raise FileExistsError(f"{cells_path} exists; pass overwrite to replace")

    lines = [",".join(_CSV_COLUMNS)]
    for c in report.cells:
        row = {
            "label": c.label, "mode": c.mode,
            "n": str(c.cell.n), "T": str(c.cell.T),
            "r": str(c.cell.r), "q": str(c.cell.q),
            "tau": _fmt(c.cell.tau), "delta": _fmt(c.cell.delta),
            "B": str(c.B), "failures": str(c.failures),
        }
        for k in ("tr_f_em", "tr_lam_em", "tr_f_pc", "tr_lam_pc", "rel_tr_f",
                  "rel_tr_lam", "mse_em", "mse_pc", "rel_mse"):
            if k in c.stats:
                row[k] = _fmt(c.stats[k])
        if c.coverage is not None:
            for a, v in zip(c.coverage.alphas, c.coverage.C):
                row[f"cov_{int(round(a * 100)):02d}"] = _fmt(v)
            row["z_mean"] = _fmt(c.coverage.mean)
            row["z_std"] = _fmt(c.coverage.std)
            row["z_skew"] = _fmt(c.coverage.skewness)
            row["z_kurt"] = _fmt(c.coverage.kurtosis)
        if "tr_pred" in c.stats:
            for t in range(len(c.stats["tr_pred"])):
                row[f"tr_pred_{t+1}"] = _fmt(c.stats["tr_pred"][t])
                row[f"tr_filt_{t+1}"] = _fmt(c.stats["tr_filt"][t])
            row["t_bar_mean"] = _fmt(c.stats["t_bar_mean"])
        lines.append(",".join(row.get(col, "") for col in _CSV_COLUMNS))
    with open(cells_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    for c in report.cells:
        if c.hist is None:
            continue
        hpath = os.path.join(outdir, f"zhist_{c.label}.csv")
        if os.path.exists(hpath) and not overwrite:
            raise FileExistsError(f"{hpath} exists; pass overwrite to replace")
        hlines = ["bin_left,bin_right,count"]
        for k in range(len(c.hist)):
            hlines.append(
                f"{_fmt(HIST_EDGES[k])},{_fmt(HIST_EDGES[k + 1])},{int(c.hist[k])}"
            )
        with open(hpath, "w") as fh:
            fh.write("\n".join(hlines) + "\n")

    try:
        from importlib.metadata import version
        pkg_version = version("dfm-em")
    except Exception:
        pkg_version = "unknown"
    manifest = {
        "package_version": pkg_version,
        "numpy_version": np.__version__,
        "base_seed": report.base_seed,
        "B": report.B,
        "cells": [c.label for c in report.cells],
        "seconds_total": report.seconds,
        "seconds_per_cell": {c.label: c.seconds for c in report.cells},
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
