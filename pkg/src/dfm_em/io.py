"""File formats: CSV panels and factor paths, JSON parameter documents.

Panel CSV layout: the first row holds the series identifiers and each
subsequent row is one time point, so the file has T data rows and n
columns. All floats are written with shortest round-trip precision
(``repr``), so read(write(x)) == x bitwise.

Parameters are stored as a JSON document with named matrices in row-major
nested-list form; a 1-D ``gamma_e`` marks the diagonal variant.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .em import EmResult
from .model import DfmParams, FactorPath, Panel
from .simulate import DgpDraw

__all__ = [
    "write_panel_csv",
    "read_panel_csv",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_params_json",
    "read_params_json",
    "write_dgp_draw",
    "write_em_result",
]


def _fmt(x) -> str:
    return repr(float(x))


def write_panel_csv(panel: Panel, path):
    """Write a panel as CSV: header of series ids, then one row per time point."""
    lines = [",".join(panel.names)]
    for t in range(panel.T):
        lines.append(",".join(_fmt(v) for v in panel.X[:, t]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_panel_csv(path) -> Panel:
    """Read a panel written by :func:`write_panel_csv`."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty panel file")
        names = tuple(header.split(","))
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if len(vals) != len(names):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(names)} columns, got {len(vals)}"
                )
            rows.append([float(v) for v in vals])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return Panel(X=np.array(rows).T, names=names)


def write_matrix_csv(M: np.ndarray, path, header: list = None):
    """Write a 2-D array as CSV, one matrix row per line."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for row in M:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_csv(path, has_header: bool = False) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if has_header:
        lines = lines[1:]
    return np.array([[float(v) for v in ln.split(",")] for ln in lines])


def write_params_json(params: DfmParams, path):
    doc = {
        "Lambda": params.Lambda.tolist(),
        "A": params.A.tolist(),
        "H": params.H.tolist(),
        "gamma_e": params.gamma_e.tolist(),
        "gamma_e_diagonal": params.gamma_e_is_diagonal,
        "rho": params.rho.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_params_json(path) -> DfmParams:
    with open(path) as fh:
        doc = json.load(fh)
    return DfmParams(
        Lambda=np.array(doc["Lambda"], dtype=float),
        A=np.array(doc["A"], dtype=float),
        H=np.array(doc["H"], dtype=float),
        gamma_e=np.array(doc["gamma_e"], dtype=float),
        rho=np.array(doc["rho"], dtype=float),
    )


def write_dgp_draw(draw: DgpDraw, outdir, overwrite: bool = False):
    """Emit a draw as a directory: panel.csv, factors.csv, chi.csv, params.json."""
    os.makedirs(outdir, exist_ok=True)
    targets = ["panel.csv", "factors.csv", "chi.csv", "params.json"]
    if not overwrite:
        for name in targets:
            p = os.path.join(outdir, name)
            if os.path.exists(p):
                raise FileExistsError(f"{p} exists; pass overwrite to replace")
    write_panel_csv(draw.panel, os.path.join(outdir, "panel.csv"))
    write_matrix_csv(draw.factors.F.T, os.path.join(outdir, "factors.csv"),
                     header=[f"F{j+1}" for j in range(draw.factors.r)])
    write_matrix_csv(draw.chi.T, os.path.join(outdir, "chi.csv"),
                     header=list(draw.panel.names))
    write_params_json(draw.params, os.path.join(outdir, "params.json"))


def write_em_result(result: EmResult, outdir, overwrite: bool = False):
    """Emit a fit as a directory: params.json, factors.csv, loglik_trace.csv."""
    os.makedirs(outdir, exist_ok=True)
    targets = ["params.json", "factors.csv", "loglik_trace.csv"]
    if not overwrite:
        for name in targets:
            p = os.path.join(outdir, name)
            if os.path.exists(p):
                raise FileExistsError(f"{p} exists; pass overwrite to replace")
    write_params_json(result.params, os.path.join(outdir, "params.json"))
    r = result.factors.F_smooth.shape[0]
    write_matrix_csv(result.factors.F_smooth.T, os.path.join(outdir, "factors.csv"),
                     header=[f"F{j+1}" for j in range(r)])
    write_matrix_csv(np.asarray(result.loglik_trace)[:, None],
                     os.path.join(outdir, "loglik_trace.csv"),
                     header=["loglik"])
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump({"iters": int(result.iters),
                   "converged": bool(result.converged),
                   "final_loglik": float(result.loglik_trace[-1])}, fh)
        fh.write("\n")
