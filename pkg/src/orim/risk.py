"""Bayes risk of a reconstruction matrix ``P + Z``.

The risk is evaluated through the trace identity

    f(Z) = tr(K G K^T) - 2 tr(K A S) + tr(S),   K = P + Z,

with ``G = A S A^T + eta^2 I`` and ``S`` the prior second moment. For a
factored ``Z = X Y^T`` only ``r`` products with ``G``, ``P^T`` and ``A S``
are needed on top of ``f(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import PreconditionError
from .linalg import MatrixOperator, ZeroOperator
from .model import InverseProblem, LowRankMatrix

__all__ = [
    "RiskCache",
    "bayes_risk",
    "risk_of_zero",
    "rank_one_delta",
    "incremental_risk",
    "monte_carlo_risk",
    "factored_risk",
]


def risk_of_zero(problem: InverseProblem, chunk: int = 256) -> float:
    """``f(0) = ||(I - P A) M||_F^2 + eta^2 ||P||_F^2`` evaluated exactly."""
    trS = problem.prior.trace
    P = problem.initial_inverse
    if isinstance(P, ZeroOperator):
        return trS
    if isinstance(P, LowRankMatrix):
        cross = np.sum(P.Y * problem.apply_AS(P.X))
        quad = np.sum((P.X.T @ P.X) * (P.Y.T @ problem.apply_gram(P.Y)))
        return float(trS - 2 * cross + quad)
    if isinstance(P, MatrixOperator) and not sp.issparse(P.matrix):
        Pd = P.matrix
        # with W = P A: tr(P A S) = tr(S W), tr(P G P^T) = tr(W S W^T) + eta^2 ||P||^2
        W = Pd @ problem.forward_dense
        cross = np.trace(problem.prior.apply(W))
        quad = np.sum(W.T * problem.prior.apply(W.T)) + problem.eta**2 * np.sum(Pd * Pd)
        return float(trS - 2 * cross + quad)
    # generic operator: exact trace by probing with identity blocks in R^m
    m = problem.m
    cross = quad = 0.0
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        idx = np.arange(stop - start)
        E = np.zeros((m, stop - start))
        E[start + idx, idx] = 1.0
        PE = P.apply(E)
        cross += np.sum(problem.apply_AS(PE)[start + idx, idx])
        quad += np.sum(problem.apply_gram(P.apply_transpose(PE))[start + idx, idx])
    return float(trS - 2 * cross + quad)


def bayes_risk(problem: InverseProblem, Z=None, f0: float | None = None) -> float:
    """Bayes risk ``E ||(P + Z) b - xi||^2`` of the reconstruction ``P + Z``.

    Parameters
    ----------
    problem : InverseProblem
    Z : None, (n, m) ndarray or LowRankMatrix
        Correction to the initial inverse. ``None`` means zero.
    f0 : float, optional
        Precomputed :func:`risk_of_zero`, to skip the expensive part.
    """
    if f0 is None:
        f0 = risk_of_zero(problem)
    if Z is None:
        return f0
    if isinstance(Z, LowRankMatrix):
        if Z.rank == 0:
            return f0
        X, Y = Z.X, Z.Y
        GY = problem.apply_gram(Y)
        cross_p = np.sum(GY * problem.apply_Pt(X))
        quad = np.sum((X.T @ X) * (Y.T @ GY))
        cross_s = np.sum(Y * problem.apply_AS(X))
        return float(f0 + 2 * cross_p + quad - 2 * cross_s)
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (problem.n, problem.m):
        raise PreconditionError(f"Z has shape {Z.shape}, expected {(problem.n, problem.m)}")
    GZt = problem.apply_gram(Z.T)
    quad = np.sum(Z.T * GZt)
    cross_s = np.trace(problem.apply_AS(Z))
    cross_p = 0.0
    if not problem.has_zero_initial:
        cross_p = np.sum(GZt * problem.apply_Pt(np.eye(problem.n)))
    return float(f0 + 2 * cross_p + quad - 2 * cross_s)


def factored_risk(problem: InverseProblem, Z, M) -> float:
    """Risk from the block form ``||Z [A M, eta I] - [M - P A M, -eta P]||_F^2``.

    Independent of the trace route; needs dense ``A``, ``P`` and an explicit
    factor ``M`` with ``M M^T = S``. Used as a test oracle.
    """
    A = problem.forward_dense
    P = problem.initial_dense
    M = np.asarray(M, dtype=float)
    m = problem.m
    Zd = np.zeros((problem.n, m)) if Z is None else (
        Z.to_dense() if isinstance(Z, LowRankMatrix) else np.asarray(Z, dtype=float))
    C = np.hstack([A @ M, problem.eta * np.eye(m)])
    B = np.hstack([M - P @ A @ M, -problem.eta * P])
    return float(np.linalg.norm(Zd @ C - B) ** 2)


def rank_one_delta(problem: InverseProblem, x, y, Gy=None) -> float:
    """Change in risk from adding ``x y^T`` (``||x|| = 1``, ``x`` orthogonal to X_r).

    ``y^T G (y + 2 P^T x) - 2 y^T A S x``.
    """
    if Gy is None:
        Gy = problem.apply_gram(y)
    return float(Gy @ (y + 2 * problem.apply_Pt(x)) - 2 * y @ problem.apply_AS(x))


@dataclass
class RiskCache:
    """Running risk of an accumulating rank-1 sequence ``Z_r = X_r Y_r^T``."""

    f_current: float
    r_current: int = 0
    X: np.ndarray | None = None
    history: list = field(default_factory=list)

    @classmethod
    def from_problem(cls, problem: InverseProblem) -> "RiskCache":
        f0 = risk_of_zero(problem)
        return cls(f0, 0, np.zeros((problem.n, 0)), [f0])


def incremental_risk(cache: RiskCache, problem: InverseProblem, x, y,
                     tol: float = 1e-8, delta: float | None = None) -> float:
    """Advance ``cache`` by the pair ``(x, y)`` and return the new risk.

    ``delta`` is the risk change of ``x y^T`` if the caller already has it.

    Raises
    ------
    PreconditionError
        If ``x`` is not a unit vector orthogonal to the cached ``X`` columns.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > tol:
        raise PreconditionError(f"x must have unit norm, got {np.linalg.norm(x):.3e}")
    if cache.X is not None and cache.X.shape[1] and np.linalg.norm(cache.X.T @ x) > tol:
        raise PreconditionError("x is not orthogonal to the previous X columns")
    if delta is None:
        delta = rank_one_delta(problem, x, y)
    f_new = cache.f_current + delta
    cache.f_current = f_new
    cache.r_current += 1
    cache.X = x[:, None] if cache.X is None else np.column_stack([cache.X, x])
    cache.history.append(f_new)
    return f_new


def monte_carlo_risk(problem: InverseProblem, Z=None, samples: int = 10_000,
                     seed: int = 0, return_stderr: bool = False):
    """Sample-mean estimate of ``E ||(P + Z)(A xi + delta) - xi||^2``.

    ``xi ~ N(mean, Gamma)`` and ``delta ~ N(0, eta^2 I)``.
    """
    if samples < 1:
        raise PreconditionError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    xi = problem.prior.sample(rng, samples)
    delta = problem.eta * rng.standard_normal((problem.m, samples))
    b = problem.forward.apply(xi) + delta
    recon = problem.apply_P(b)
    if isinstance(Z, LowRankMatrix):
        recon = recon + Z.apply(b)
    elif Z is not None:
        recon = recon + np.asarray(Z) @ b
    err = np.sum((recon - xi) ** 2, axis=0)
    mean = float(err.mean())
    if return_stderr:
        stderr = float(err.std(ddof=1) / np.sqrt(samples)) if samples > 1 else np.inf
        return mean, stderr
    return mean
