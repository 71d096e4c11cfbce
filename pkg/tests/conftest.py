"""Shared test helpers: dense joint-Gaussian oracles for the state space.

The oracle builds the exact joint normal law of the stacked state path
(F_0, ..., F_T) and the stacked observations, then conditions directly.
It is O((nT)^3) and only usable on tiny instances, which is the point:
it shares no code with the recursive filter/smoother under test.
"""

import numpy as np
import pytest


def dense_joint_moments(panel, params, init):
    """Posterior mean/covariance of (F_0..F_T) given the panel, plus the
    exact joint-Gaussian log-likelihood of the panel.

    Returns (post_mean, post_cov, loglik) with post_mean of length
    (T+1) * r; block t of post_mean/post_cov corresponds to F_{t-1}
    (block 0 is the time-zero state).
    """
    X = panel.X
    n, T = X.shape
    r = params.r
    A = params.A
    HHt = params.H @ params.H.T
    Gxi = params.gamma_e
    Gxi = np.diag(Gxi) if Gxi.ndim == 1 else np.asarray(Gxi)

    m = (T + 1) * r
    mean = np.empty(m)
    mean[:r] = init.F0
    for t in range(1, T + 1):
        mean[t * r:(t + 1) * r] = A @ mean[(t - 1) * r:t * r]
    Omega = np.zeros((m, m))
    Omega[:r, :r] = init.P0
    for t in range(1, T + 1):
        tt = slice(t * r, (t + 1) * r)
        pp = slice((t - 1) * r, t * r)
        Omega[tt, tt] = A @ Omega[pp, pp] @ A.T + HHt
        for s in range(t):
            ss = slice(s * r, (s + 1) * r)
            Omega[tt, ss] = A @ Omega[pp, ss]
            Omega[ss, tt] = Omega[tt, ss].T

    L = np.zeros((n * T, m))
    for t in range(T):
        L[t * n:(t + 1) * n, (t + 1) * r:(t + 2) * r] = params.Lambda
    S = L @ Omega @ L.T + np.kron(np.eye(T), Gxi)
    xvec = X.T.reshape(-1)
    resid = xvec - L @ mean
    Sinv = np.linalg.inv(S)
    K = Omega @ L.T @ Sinv
    post_mean = mean + K @ resid
    post_cov = Omega - K @ L @ Omega
    sign, logdet = np.linalg.slogdet(S)
    loglik = -0.5 * (n * T * np.log(2.0 * np.pi) + logdet + resid @ Sinv @ resid)
    return post_mean, post_cov, float(loglik)


def oracle_state_blocks(post_mean, post_cov, r, T):
    """Unpack the stacked posterior into per-t means, MSEs, lag-1 covs."""
    F = np.empty((r, T))
    P = np.empty((T, r, r))
    C = np.zeros((T, r, r))
    for t in range(T):
        blk = slice((t + 1) * r, (t + 2) * r)
        F[:, t] = post_mean[blk]
        P[t] = post_cov[blk, blk]
        if t >= 1:
            prev = slice(t * r, (t + 1) * r)
            C[t] = post_cov[blk, prev]
    return F, P, C


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-gate verdict lines after the test run."""
    try:
        from test_acceptance import GATE_LINES
    except ImportError:
        return
    if GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in GATE_LINES:
            terminalreporter.write_line(line)
