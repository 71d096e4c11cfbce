"""Evaluation metrics: trace statistics, MSEs, asymptotic variances,
standardized errors and coverage tables.

The trace statistic is the multivariate R-squared

    TR(M, Mhat) = tr( (M' Mhat)(Mhat' Mhat)^{-1}(Mhat' M) ) / tr(M' M),

invariant to invertible column transformations of the estimate. Coverage
tables pool the standardized errors

    Z_it = (n^{-1} W_it + T^{-1} V_it)^{-1/2} (chihat_it - chi_it)

and compare their empirical CDF to the standard normal at a fixed ladder
of quantile levels. Pooling across replications goes through an
associative accumulator so results can be merged deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .em import EmResult

__all__ = [
    "TraceStat",
    "CoverageTable",
    "ZAccumulator",
    "DEFAULT_ALPHAS",
    "BURN_IN_T",
    "trace_statistic",
    "common_mse",
    "relative_mse",
    "asvar_matrices",
    "asvar_hat",
    "z_scores",
    "coverage",
    "z_histogram",
    "HIST_EDGES",
]

DEFAULT_ALPHAS = (0.99, 0.95, 0.90, 0.84, 0.16, 0.10, 0.05, 0.01)
BURN_IN_T = 5  # pooled statistics keep t >= 5 (1-indexed)
HIST_EDGES = np.round(np.arange(-5.0, 5.0 + 1e-9, 0.1), 10)


@dataclass(frozen=True)
class TraceStat:
    value: float

    def __post_init__(self):
        if self.value > 1.0 + 1e-10:
            raise ValueError(f"trace statistic {self.value!r} exceeds 1")


@dataclass(frozen=True)
class CoverageTable:
    """Empirical coverage per quantile level plus pooled-sample moments."""

    alphas: tuple
    C: np.ndarray
    mean: float
    std: float
    skewness: float
    kurtosis: float
    count: int


def trace_statistic(true_M: np.ndarray, est_M: np.ndarray) -> TraceStat:
    """Multivariate R-squared of true_M on the column space of est_M.

    Inputs may be given with components along either axis; both are
    oriented tall (rows = observations, columns = the k components) before
    evaluation, so factor paths (k x T) and loadings (n x k) both work.
    """
    M = np.asarray(true_M, dtype=float)
    Mh = np.asarray(est_M, dtype=float)
    if M.shape != Mh.shape:
        raise ValueError("shapes must match")
    if M.shape[0] < M.shape[1]:
        M, Mh = M.T, Mh.T
    G = Mh.T @ Mh
    k = G.shape[0]
    if np.linalg.matrix_rank(G, tol=1e-12 * max(np.trace(G), 1e-300)) < k:
        raise np.linalg.LinAlgError("estimate is rank deficient")
    cross = Mh.T @ M
    val = float(np.trace(cross.T @ np.linalg.solve(G, cross)) / np.trace(M.T @ M))
    return TraceStat(value=min(val, 1.0))


def common_mse(chi_true: np.ndarray, chi_est: np.ndarray) -> float:
    """Mean squared entrywise difference."""
    a = np.asarray(chi_true, dtype=float)
    b = np.asarray(chi_est, dtype=float)
    if a.shape != b.shape:
        raise ValueError("shapes must match")
    return float(np.mean((a - b) ** 2))


def relative_mse(a: float, b: float) -> float:
    """Ratio of two MSEs."""
    return float(a / b)


def asvar_matrices(result: EmResult, mode: str = "diag_ols"):
    """Asymptotic-variance building blocks for every (i, t).

    Returns (W, V) with W of shape (n,) — the loadings-direction variance
    W_i = lambda_i' (n^{-1} Lambda' Gamma^{-1} Lambda)^{-1} lambda_i does
    not depend on t — and V of shape (n, T) with
    V_it = Fhat_t' (T^{-1} sum_s Fhat_s gamma_ii^{-1} Fhat_s')^{-1} Fhat_t.

    Modes: "diag_ols" uses the fitted diagonal gamma; "ridge_w" uses the
    full regularized covariance inverse inside W; "gls_v" weights the
    V-denominator by the AR(1)-implied tridiagonal inverse covariance
    (requires ``extras['ar_idio']``).
    """
    if mode not in ("diag_ols", "ridge_w", "gls_v"):
        raise ValueError(f"unknown mode {mode!r}")
    params = result.params
    F = result.factors.F_smooth
    Lam = params.Lambda
    n, r = Lam.shape
    T = F.shape[1]

    if mode == "ridge_w":
        if params.gamma_e_is_diagonal:
            raise ValueError("ridge_w mode requires a full fitted covariance")
        Ginv_Lam = np.linalg.solve(params.gamma_e_matrix(), Lam)
        gamma_diag = np.diag(params.gamma_e_matrix())
    else:
        gamma_diag = (params.gamma_e if params.gamma_e_is_diagonal
                      else np.diag(params.gamma_e_matrix()))
        Ginv_Lam = Lam / gamma_diag[:, None]
    inner_W = Lam.T @ Ginv_Lam / n
    W = np.einsum("ir,ir->i", Lam, np.linalg.solve(inner_W, Lam.T).T)

    if mode == "gls_v":
        ar = result.extras.get("ar_idio")
        if ar is None:
            raise ValueError("gls_v mode requires AR idiosyncratic estimates")
        rho = ar.rho_hat
        gamma_diag = ar.gamma_hat
        S0 = F @ F.T
        E1 = np.outer(F[:, 0], F[:, 0])
        ET = np.outer(F[:, -1], F[:, -1])
        S1 = F[:, 1:] @ F[:, :-1].T
        S1 = S1 + S1.T
        V = np.empty((n, T))
        for i in range(n):
            p = rho[i]
            inner = ((1.0 + p**2) * S0 - p**2 * (E1 + ET) - p * S1) / (T * gamma_diag[i])
            V[i] = np.einsum("rt,rt->t", F, np.linalg.solve(inner, F))
        return W, V

    # V_it = gamma_ii * Fhat_t' (T^{-1} sum FF')^{-1} Fhat_t
    base = np.einsum("rt,rt->t", F, np.linalg.solve(F @ F.T / T, F))
    V = gamma_diag[:, None] * base[None, :]
    return W, V


def asvar_hat(result: EmResult, i: int, t: int, mode: str = "diag_ols"):
    """(W_it, V_it) for a single entry; see :func:`asvar_matrices`."""
    W, V = asvar_matrices(result, mode)
    return float(W[i]), float(V[i, t])


def z_scores(result: EmResult, chi_true: np.ndarray,
             mode: str = "diag_ols") -> np.ndarray:
    """Standardized common-component errors Z_it."""
    chi_hat = result.params.Lambda @ result.factors.F_smooth
    chi_true = np.asarray(chi_true, dtype=float)
    if chi_true.shape != chi_hat.shape:
        raise ValueError("chi_true shape mismatch")
    n, T = chi_hat.shape
    W, V = asvar_matrices(result, mode)
    denom = np.sqrt(W[:, None] / n + V / T)
    return (chi_hat - chi_true) / denom


@dataclass
class ZAccumulator:
    """Mergeable accumulator for pooled Z statistics.

    Holds the count, power sums up to order four, per-level CDF counts and
    fixed-bin histogram counts. ``merge`` is associative, so replication
    results can be reduced in a deterministic order regardless of how they
    were computed.
    """

    alphas: tuple = DEFAULT_ALPHAS
    count: int = 0
    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0
    s4: float = 0.0
    below: np.ndarray = None
    hist: np.ndarray = None

    def __post_init__(self):
        if self.below is None:
            self.below = np.zeros(len(self.alphas), dtype=np.int64)
        if self.hist is None:
            self.hist = np.zeros(len(HIST_EDGES) - 1, dtype=np.int64)

    def update(self, Z: np.ndarray, burn_in: int = BURN_IN_T):
        """Add one replication's Z matrix, keeping columns t >= burn_in (1-indexed)."""
        z = np.asarray(Z, dtype=float)[:, burn_in - 1:].ravel()
        self.count += z.size
        self.s1 += float(np.sum(z))
        self.s2 += float(np.sum(z**2))
        self.s3 += float(np.sum(z**3))
        self.s4 += float(np.sum(z**4))
        qs = norm.ppf(np.asarray(self.alphas))
        self.below += np.array([int(np.sum(z <= q)) for q in qs], dtype=np.int64)
        self.hist += np.histogram(z, bins=HIST_EDGES)[0].astype(np.int64)

    def merge(self, other: "ZAccumulator") -> "ZAccumulator":
        if tuple(self.alphas) != tuple(other.alphas):
            raise ValueError("cannot merge accumulators with different levels")
        return ZAccumulator(
            alphas=self.alphas,
            count=self.count + other.count,
            s1=self.s1 + other.s1,
            s2=self.s2 + other.s2,
            s3=self.s3 + other.s3,
            s4=self.s4 + other.s4,
            below=self.below + other.below,
            hist=self.hist + other.hist,
        )

    def table(self) -> CoverageTable:
        if self.count == 0:
            raise ValueError("empty accumulator")
        c = self.count
        mean = self.s1 / c
        var = max(self.s2 / c - mean**2, 0.0)
        std = np.sqrt(var)
        m3 = self.s3 / c - 3.0 * mean * self.s2 / c + 2.0 * mean**3
        m4 = (self.s4 / c - 4.0 * mean * self.s3 / c
              + 6.0 * mean**2 * self.s2 / c - 3.0 * mean**4)
        skew = m3 / std**3 if std > 0 else 0.0
        kurt = m4 / var**2 if var > 0 else 0.0
        return CoverageTable(
            alphas=tuple(self.alphas),
            C=self.below / c,
            mean=float(mean),
            std=float(std),
            skewness=float(skew),
            kurtosis=float(kurt),
            count=c,
        )


def coverage(Z: np.ndarray, alphas=DEFAULT_ALPHAS,
             burn_in: int = BURN_IN_T) -> CoverageTable:
    """Coverage table for a single pooled Z sample."""
    acc = ZAccumulator(alphas=tuple(alphas))
    acc.update(Z, burn_in=burn_in)
    return acc.table()


def z_histogram(Z: np.ndarray, burn_in: int = BURN_IN_T):
    """Binned Z counts on the fixed [-5, 5] grid of width 0.1.

    Returns (edges, counts).
    """
    z = np.asarray(Z, dtype=float)[:, burn_in - 1:].ravel()
    counts = np.histogram(z, bins=HIST_EDGES)[0]
    return HIST_EDGES, counts
