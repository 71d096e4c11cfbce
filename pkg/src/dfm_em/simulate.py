"""Synthetic data generation for the Monte Carlo design.

A draw proceeds as:

* loadings iid N(0, 1);
* factor VAR matrix A = mu * Atilde / nu1(Atilde), with Atilde diagonal
  uniform on [0.5, 0.8] and off-diagonal uniform on [0, 0.3];
* H = I_r when q = r, otherwise the first q columns of Hcheck Htilde^{1/2}
  with Hcheck orthogonal and Htilde diagonal of rank q with nonzero
  entries uniform on [0.8, 1.2];
* rho_i uniform on [delta, 1 - 2 delta] (zero when delta = 0);
* Gamma^e Toeplitz with entry tau^{|i-j|} when tau > 0, otherwise diagonal
  with entries uniform on [0.5, 1.5];
* loadings rescaled per series so the population common-variance share is
  theta / (1 + theta).

Randomness is counter-based (Philox). ``stream(seed, b)`` gives the
independent substream for replication b, so replications can run in any
order or in parallel and stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import solve_discrete_lyapunov, toeplitz

from .model import DfmParams, FactorPath, ModelDims, Panel, validate

__all__ = ["Innovation", "DgpConfig", "DgpDraw", "stream", "draw_dgp", "simulate_given"]

BURN_IN = 100


class Innovation(str, Enum):
    GAUSSIAN = "gaussian"
    STUDENT_T4 = "student_t4"


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the substream (seed, key).

    ``stream(seed)`` is the root stream; ``stream(seed, b)`` is the
    statistically independent stream used by replication b.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DgpConfig:
    """Configuration of one Monte Carlo cell's data generating process."""

    dims: ModelDims
    tau: float = 0.0
    delta: float = 0.0
    theta: float = 0.5
    mu: float = 0.5
    innovation: Innovation = Innovation.GAUSSIAN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "innovation", Innovation(self.innovation))
        if not (0.0 <= self.tau < 1.0):
            raise ValueError("tau must lie in [0, 1)")
        if not (0.0 < self.mu < 1.0):
            raise ValueError("mu must lie in (0, 1)")
        if self.theta <= 0.0:
            raise ValueError("theta must be positive")
        if self.delta < 0.0:
            raise ValueError("delta must be nonnegative")
        # rho_i is uniform on [delta, 1 - 2 delta]; the support is empty
        # unless delta < 1/3.
        if self.delta > 0.0 and not (1.0 - 2.0 * self.delta > self.delta):
            raise ValueError("delta must satisfy delta < 1/3 so [delta, 1-2*delta] is nonempty")


@dataclass(frozen=True)
class DgpDraw:
    params: DfmParams
    factors: FactorPath
    panel: Panel
    chi: np.ndarray


def _draw_var_matrix(rng, r, mu):
    At = rng.uniform(0.0, 0.3, size=(r, r))
    At[np.diag_indices(r)] = rng.uniform(0.5, 0.8, size=r)
    nu1 = np.max(np.abs(np.linalg.eigvals(At)))
    return mu * At / nu1


def _draw_shock_loader(rng, r, q):
    if q == r:
        return np.eye(r)
    h = rng.uniform(0.8, 1.2, size=q)
    Ht_sqrt = np.zeros(r)
    Ht_sqrt[:q] = np.sqrt(h)
    Z = rng.standard_normal((r, r))
    Q, R = np.linalg.qr(Z)
    Q = Q * np.sign(np.diag(R))  # fix the QR sign ambiguity
    return (Q * Ht_sqrt)[:, :q]


def _draw_idio_covariance(rng, n, tau):
    if tau > 0.0:
        return toeplitz(tau ** np.arange(n))
    return rng.uniform(0.5, 1.5, size=n)


def draw_dgp(config: DgpConfig) -> DgpDraw:
    """Draw parameters and a simulated panel for one replication."""
    dims = config.dims
    n, T, r, q = dims.n, dims.T, dims.r, dims.q
    rng = stream(config.seed)

    Lam = rng.standard_normal((n, r))
    A = _draw_var_matrix(rng, r, config.mu)
    H = _draw_shock_loader(rng, r, q)
    if config.delta > 0.0:
        rho = rng.uniform(config.delta, 1.0 - 2.0 * config.delta, size=n)
    else:
        rho = np.zeros(n)
    gamma_e = _draw_idio_covariance(rng, n, config.tau)

    # Rescale the loadings so that, in population, the common component
    # explains a share theta/(1+theta) of each series' variance. The
    # idiosyncratic side is left untouched, which keeps Gamma^e exactly
    # Toeplitz when tau > 0.
    gamma_f = solve_discrete_lyapunov(A, H @ H.T)
    var_chi = np.einsum("ij,jk,ik->i", Lam, gamma_f, Lam)
    if gamma_e.ndim == 1:
        var_xi = gamma_e / (1.0 - rho**2)
    else:
        var_xi = np.diag(gamma_e) / (1.0 - rho**2)
    Lam = Lam * np.sqrt(config.theta * var_xi / var_chi)[:, None]

    params = DfmParams(Lambda=Lam, A=A, H=H, gamma_e=gamma_e, rho=rho)
    bad = validate(params, dims)
    if bad:
        raise RuntimeError(f"drawn parameters violate model assumptions: {bad}")

    factors, panel = simulate_given(params, T, config.innovation, rng=stream(config.seed, 0))
    chi = params.Lambda @ factors.F
    return DgpDraw(params=params, factors=factors, panel=panel, chi=chi)


def _standardized_t4(rng, size):
    # t_4 has variance 2; divide by sqrt(2) so the scale matrix keeps its
    # covariance interpretation.
    return rng.standard_t(4, size=size) / np.sqrt(2.0)


def simulate_given(params: DfmParams, T: int, innovation=Innovation.GAUSSIAN,
                   seed: int = None, rng: np.random.Generator = None,
                   burn_in: int = BURN_IN):
    """Simulate (factors, panel) of length T from given parameters.

    Processes start at zero and a burn-in of ``burn_in`` pre-sample periods
    is discarded so the kept sample is effectively stationary. Pass either
    ``seed`` or an explicit generator.
    """
    innovation = Innovation(innovation)
    if rng is None:
        rng = stream(0 if seed is None else seed)
    n, r, q = params.n, params.r, params.q
    total = T + burn_in

    if innovation is Innovation.GAUSSIAN:
        u = rng.standard_normal((q, total))
        z = rng.standard_normal((n, total))
    else:
        u = _standardized_t4(rng, (q, total))
        z = _standardized_t4(rng, (n, total))

    if params.gamma_e_is_diagonal:
        e = np.sqrt(params.gamma_e)[:, None] * z
    else:
        e = np.linalg.cholesky(params.gamma_e_matrix()) @ z

    F = np.zeros((r, total))
    Hu = params.H @ u
    prev = np.zeros(r)
    for t in range(total):
        prev = params.A @ prev + Hu[:, t]
        F[:, t] = prev

    xi = np.zeros((n, total))
    prev_xi = np.zeros(n)
    for t in range(total):
        prev_xi = params.rho * prev_xi + e[:, t]
        xi[:, t] = prev_xi

    F = F[:, burn_in:]
    X = params.Lambda @ F + xi[:, burn_in:]
    return FactorPath(F=F), Panel(X=X)
