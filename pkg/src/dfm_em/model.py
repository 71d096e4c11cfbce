"""Core data types for panels and dynamic factor model parameters.

The model is

    x_it = lambda_i' F_t + xi_it
    F_t  = A F_{t-1} + H u_t
    xi_it = rho_i xi_{it-1} + e_it

with n observed series, r static factors and q <= r common shocks.
All containers are immutable value objects; the functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelDims",
    "Panel",
    "DfmParams",
    "FactorPath",
    "ShapeError",
    "validate",
    "common_component",
]

STABILITY_TOL = 1e-10


class ShapeError(ValueError):
    """Structural shape mismatch, as opposed to a model-assumption violation."""


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class ModelDims:
    """Problem dimensions: n series, T periods, r factors, q common shocks."""

    n: int
    T: int
    r: int
    q: int

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if not (1 <= self.q <= self.r < self.n):
            raise ValueError(f"need 1 <= q <= r < n, got q={self.q}, r={self.r}, n={self.n}")


@dataclass(frozen=True)
class Panel:
    """An n x T observation matrix, rows are series and columns time points.

    Parameters
    ----------
    X : ndarray, shape (n, T)
        Observed data.
    names : tuple of str, optional
        Series identifiers; defaults to x1..xn.
    """

    X: np.ndarray
    names: tuple = None

    def __post_init__(self):
        X = _as_matrix(self.X, "X")
        X.flags.writeable = False
        object.__setattr__(self, "X", X)
        if not np.all(np.isfinite(X)):
            raise ValueError("panel contains non-finite entries")
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{i+1}" for i in range(X.shape[0])))
        elif len(self.names) != X.shape[0]:
            raise ShapeError("names length does not match number of series")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def T(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class FactorPath:
    """An r x T matrix of factor values."""

    F: np.ndarray

    def __post_init__(self):
        F = _as_matrix(self.F, "F")
        F.flags.writeable = False
        object.__setattr__(self, "F", F)
        if not np.all(np.isfinite(F)):
            raise ValueError("factor path contains non-finite entries")

    @property
    def r(self):
        return self.F.shape[0]

    @property
    def T(self):
        return self.F.shape[1]


@dataclass(frozen=True)
class DfmParams:
    """Model parameters.

    Parameters
    ----------
    Lambda : ndarray, shape (n, r)
        Factor loadings.
    A : ndarray, shape (r, r)
        VAR(1) coefficient matrix of the factors.
    H : ndarray, shape (r, q)
        Loading of the q common shocks onto the r factor innovations.
    gamma_e : ndarray, shape (n,) or (n, n)
        Idiosyncratic innovation covariance. A 1-D array is the diagonal
        variant; a 2-D array is the full variant.
    rho : ndarray, shape (n,)
        AR(1) coefficients of the idiosyncratic components (all zero for
        serially uncorrelated idiosyncratics).
    """

    Lambda: np.ndarray
    A: np.ndarray
    H: np.ndarray
    gamma_e: np.ndarray
    rho: np.ndarray = None

    def __post_init__(self):
        Lam = _as_matrix(self.Lambda, "Lambda")
        A = _as_matrix(self.A, "A")
        H = _as_matrix(self.H, "H")
        g = np.asarray(self.gamma_e, dtype=float)
        if g.ndim not in (1, 2):
            raise ShapeError("gamma_e must be 1-D (diagonal) or 2-D (full)")
        rho = self.rho
        rho = np.zeros(Lam.shape[0]) if rho is None else np.asarray(rho, dtype=float)
        for a in (Lam, A, H, g, rho):
            a.flags.writeable = False
        object.__setattr__(self, "Lambda", Lam)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "gamma_e", g)
        object.__setattr__(self, "rho", rho)

    @property
    def n(self):
        return self.Lambda.shape[0]

    @property
    def r(self):
        return self.Lambda.shape[1]

    @property
    def q(self):
        return self.H.shape[1]

    @property
    def gamma_e_is_diagonal(self):
        return self.gamma_e.ndim == 1

    def gamma_e_matrix(self):
        """Idiosyncratic innovation covariance as a full n x n matrix."""
        if self.gamma_e_is_diagonal:
            return np.diag(self.gamma_e)
        return np.array(self.gamma_e)

    def idio_covariance(self):
        """Unconditional idiosyncratic covariance Gamma^xi.

        [Gamma^xi]_ij = [Gamma^e]_ij / (1 - rho_i rho_j); equals Gamma^e
        when all rho are zero. Returned in the same (diagonal or full)
        representation as ``gamma_e``.
        """
        if np.all(self.rho == 0.0):
            return np.array(self.gamma_e)
        if self.gamma_e_is_diagonal:
            return self.gamma_e / (1.0 - self.rho**2)
        scale = 1.0 - np.outer(self.rho, self.rho)
        return self.gamma_e / scale


def validate(params: DfmParams, dims: ModelDims) -> list:
    """Check the model parameters against the stationarity, rank and
    positivity constraints of the model.

    Returns an empty list when all constraints hold; otherwise a list of
    human-readable violation descriptors, each naming the constraint
    breached. Shape mismatches raise :class:`ShapeError` instead.
    """
    n, r, q = dims.n, dims.r, dims.q
    if params.Lambda.shape != (n, r):
        raise ShapeError(f"Lambda shape {params.Lambda.shape} != ({n}, {r})")
    if params.A.shape != (r, r):
        raise ShapeError(f"A shape {params.A.shape} != ({r}, {r})")
    if params.H.shape != (r, q):
        raise ShapeError(f"H shape {params.H.shape} != ({r}, {q})")
    g = params.gamma_e
    if (g.ndim == 1 and g.shape != (n,)) or (g.ndim == 2 and g.shape != (n, n)):
        raise ShapeError(f"gamma_e shape {g.shape} incompatible with n={n}")
    if params.rho.shape != (n,):
        raise ShapeError(f"rho shape {params.rho.shape} != ({n},)")

    violations = []
    spectral_radius = np.max(np.abs(np.linalg.eigvals(params.A)))
    if spectral_radius >= 1.0 - STABILITY_TOL:
        violations.append(f"A not stable: spectral radius {spectral_radius:.6g} >= 1")
    if np.any(np.abs(params.rho) >= 1.0):
        violations.append("idiosyncratic AR coefficient |rho_i| >= 1")
    if g.ndim == 1:
        if np.any(g <= 0.0):
            violations.append("gamma_e has a non-positive diagonal entry")
    else:
        if not np.allclose(g, g.T, atol=1e-10):
            violations.append("gamma_e not symmetric")
        if np.any(np.diag(g) <= 0.0):
            violations.append("gamma_e has a non-positive diagonal entry")
    if np.linalg.matrix_rank(params.H) < q:
        violations.append(f"H rank-deficient: rank < q={q}")
    return violations


def common_component(params: DfmParams, factors: FactorPath) -> np.ndarray:
    """Common component chi, with chi[i, t] = Lambda[i] . F[:, t]."""
    if params.Lambda.shape[1] != factors.F.shape[0]:
        raise ShapeError(
            f"Lambda has {params.Lambda.shape[1]} columns but factor path has "
            f"{factors.F.shape[0]} rows"
        )
    return params.Lambda @ factors.F
