"""Principal-components pre-estimation of the factor model.

Given a demeaned panel, the r leading eigenpairs (M_hat, V_hat) of the
sample covariance give

    Lambda0 = V_hat M_hat^{1/2},      Ftilde_t = M_hat^{-1} Lambda0' x_t,

with the column-sign convention that the first row of V_hat is positive.
The factor VAR matrix is the lag-one OLS estimate on Ftilde, H0 comes from
the top-q eigenpairs of the VAR residual covariance, and the idiosyncratic
variances are the mean squared reconstruction residuals. When n > T the
eigendecomposition runs on the T x T Gram matrix instead (identical
spectrum, better complexity).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Panel

__all__ = ["PcEstimate", "IdentificationError", "pc_estimate", "var_from_factors"]

_TIE_RTOL = 1e-12


class IdentificationError(RuntimeError):
    """Leading eigenvalues are not separated enough to identify the factor space."""


@dataclass(frozen=True)
class PcEstimate:
    """Principal-components estimates used to initialize the EM iterations."""

    Lambda0: np.ndarray
    Ftilde: np.ndarray
    A0: np.ndarray
    H0: np.ndarray
    GammaE0: np.ndarray
    eigvals: np.ndarray


def _sign_fix_columns(V, ref_row=0):
    """Flip eigenvector signs so row ``ref_row`` is positive (ties -> +)."""
    s = np.sign(V[ref_row])
    s[s == 0.0] = 1.0
    return V * s


def _leading_eigpairs(Xc, r):
    """Top-r eigenpairs of Xc Xc' / T, via the smaller of the two Gram forms."""
    n, T = Xc.shape
    if n <= T:
        w, V = np.linalg.eigh(Xc @ Xc.T / T)
        w, V = w[::-1], V[:, ::-1]
    else:
        w, G = np.linalg.eigh(Xc.T @ Xc / T)
        w, G = w[::-1], G[:, ::-1]
        # duality: if (w, g) eigenpair of X'X/T then X g / sqrt(T w) is a
        # unit eigenvector of XX'/T with the same eigenvalue
        pos = np.maximum(w[:r], 0.0)
        V = Xc @ G[:, :r]
        norms = np.sqrt(T * pos)
        norms[norms == 0.0] = 1.0
        V = V / norms
    return w, V[:, :r]


def pc_estimate(panel: Panel, r: int, q: int) -> PcEstimate:
    """Principal-components pre-estimator of (Lambda, F, A, H, Gamma^e).

    The panel is demeaned per series before the eigendecomposition.

    Raises
    ------
    IdentificationError
        If the r-th and (r+1)-th sample eigenvalues coincide to within
        1e-12 relative to the leading one, so the r-dimensional leading
        eigenspace is not identified.
    ValueError
        If T < r + 2 (too short to also fit the factor VAR).
    """
    n, T = panel.n, panel.T
    if T < r + 2:
        raise ValueError(f"need T >= r + 2, got T={T}, r={r}")
    Xc = panel.X - panel.X.mean(axis=1, keepdims=True)

    w, V = _leading_eigpairs(Xc, r)
    if r < min(n, T) and abs(w[r - 1] - w[r]) <= _TIE_RTOL * max(abs(w[0]), 1e-300):
        raise IdentificationError(
            f"eigenvalue tie at position r={r}: {w[r-1]!r} vs {w[r]!r}"
        )
    M = np.maximum(w[:r], 0.0)
    if np.any(M <= 0.0):
        raise IdentificationError("fewer than r positive eigenvalues in the sample covariance")

    V = _sign_fix_columns(V)
    Lambda0 = V * np.sqrt(M)
    Ftilde = (Lambda0.T @ Xc) / M[:, None]  # M^{-1} Lambda0' x_t

    A0, H0, _ = var_from_factors(Ftilde, q)
    resid = Xc - Lambda0 @ Ftilde
    GammaE0 = np.mean(resid**2, axis=1)

    return PcEstimate(Lambda0=Lambda0, Ftilde=Ftilde, A0=A0, H0=H0,
                      GammaE0=GammaE0, eigvals=w[:r])


def var_from_factors(F: np.ndarray, q: int):
    """Lag-one OLS VAR fit with a low-rank shock decomposition.

    Returns (A, H, Gom) where A is the OLS coefficient of F_t on F_{t-1},
    Gom the VAR residual covariance, and H loads the top-q eigenpairs of
    Gom (eigenvector columns scaled by root-eigenvalues, first nonzero
    entry of each column positive).
    """
    F = np.asarray(F, dtype=float)
    r, T = F.shape
    if T < 2:
        raise ValueError("need at least two time points for the lag-one fit")
    F0, F1 = F[:, :-1], F[:, 1:]
    S00 = F0 @ F0.T
    if np.linalg.matrix_rank(S00, tol=1e-10 * max(np.trace(S00), 1e-300)) < r:
        raise np.linalg.LinAlgError("lagged second-moment matrix is singular")
    A = np.linalg.solve(S00.T, (F1 @ F0.T).T).T
    resid = F1 - A @ F0
    Gom = resid @ resid.T / (T - 1)

    w, V = np.linalg.eigh(Gom)
    w, V = w[::-1][:q], V[:, ::-1][:, :q]
    for j in range(q):
        nz = np.flatnonzero(V[:, j])
        if nz.size and V[nz[0], j] < 0:
            V[:, j] = -V[:, j]
    H = V * np.sqrt(np.maximum(w, 0.0))
    return A, H, Gom
