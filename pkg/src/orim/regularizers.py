"""Closed-form ORIM, the Friedland-Torokhti minimizer, and baseline inverses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FactorizationError, PreconditionError
from .linalg import (
    CholeskyFactor,
    DiagonalizedOperator,
    LinearOperator,
    MatrixOperator,
    aslinearoperator,
    golub_kahan,
    numerical_rank,
    pseudoinverse,
    symmetric_eig,
)
from .model import ClosedFormIntermediates, InverseProblem, LowRankMatrix

__all__ = [
    "RegularizedInverse",
    "ExtendedSvd",
    "friedland_torokhti",
    "orim_closed_form",
    "tsvd_inverse",
    "truncated_tikhonov",
    "tikhonov_inverse",
    "orim0_inverse",
    "extended_svd",
    "golub_kahan_inverse",
]

KINDS = ("tsvd", "tikhonov", "truncated_tikhonov", "orim0",
         "orim_closed_form", "golub_kahan_lsqr")


@dataclass(frozen=True, eq=False)
class RegularizedInverse:
    """A regularized inverse ``n x m`` of some forward operator.

    Exactly one of ``matrix`` (dense), ``factors`` (``(V_r, psi, U_r)`` with
    ``Z = V_r diag(psi) U_r^T``) or ``operator`` is the primary representation.
    """

    kind: str
    matrix: np.ndarray | None = None
    factors: tuple | None = None
    operator: LinearOperator | None = None
    unique: bool = True
    info: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown regularized inverse kind {self.kind!r}")

    @property
    def shape(self):
        if self.matrix is not None:
            return self.matrix.shape
        if self.factors is not None:
            return (self.factors[0].shape[0], self.factors[2].shape[0])
        return self.operator.shape

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        if self.factors is not None:
            V, psi, U = self.factors
            return (V * psi) @ U.T
        return self.operator.to_dense()

    def as_operator(self) -> LinearOperator:
        if self.operator is not None:
            return self.operator
        if self.factors is not None:
            V, psi, U = self.factors
            return aslinearoperator(LowRankMatrix(V * psi, U))
        return MatrixOperator(self.matrix)

    def apply(self, b):
        return self.as_operator().apply(b)


@dataclass(frozen=True)
class ExtendedSvd:
    """SVD pieces of ``[A, eta I_m]``: ``A V11 + eta V21 = U D``."""

    D: np.ndarray
    U: np.ndarray
    V11: np.ndarray
    V21: np.ndarray


def _svd_thin(A):
    try:
        return np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"SVD did not converge: {exc}") from exc


def _rank_tol(s, shape):
    return max(shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)


def friedland_torokhti(B, C, r: int):
    """Minimum-norm solution of ``min_{rank Z <= r} ||Z C - B||_F``.

    Returns
    -------
    Z : ndarray
        ``(B V_k V_k^T)_r C^+`` with ``k = rank(C)``.
    unique : bool
        Whether the minimizer is unique.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if r < 1:
        raise PreconditionError("r must be at least 1")
    if B.shape[1] != C.shape[1]:
        raise PreconditionError("B and C must have the same number of columns")
    Uc, sc, Vct = _svd_thin(C)
    k = numerical_rank(sc, C.shape)
    Vk = Vct[:k].T
    K = (B @ Vk) @ Vk.T
    Uk, sk, Vkt = _svd_thin(K)
    rank_K = numerical_rank(sk, K.shape)
    rr = min(r, sk.size)
    K_r = (Uk[:, :rr] * sk[:rr]) @ Vkt[:rr]
    Cpinv = (Vct[:k].T / sc[:k]) @ Uc[:, :k].T
    if r >= rank_K:
        unique = True
    else:
        unique = bool(sk[r - 1] - sk[r] > 1e-12 * sk[0])
    return K_r @ Cpinv, unique


def orim_closed_form(problem: InverseProblem, r: int, rank_tol: float | None = None):
    """Optimal rank-``r`` update ``Z = U_{H,r} U_{H,r}^T F G^{-1}``.

    Returns
    -------
    Z : LowRankMatrix
        ``X = U_{H,r}`` (orthonormal), ``Y = G^{-1} F^T U_{H,r}``.
    intermediates : ClosedFormIntermediates
        ``F``, ``G``, ``H``, its eigendecomposition and the uniqueness flag.

    Raises
    ------
    PreconditionError
        If ``rank(F) < r`` or ``eta = 0`` with ``r < m``.
    NotPositiveDefiniteError
        If ``G`` is not positive definite.
    """
    n, m = problem.n, problem.m
    if r < 1:
        raise PreconditionError("r must be at least 1")
    if r > n:
        raise PreconditionError(f"r={r} exceeds n={n}")
    if problem.eta == 0 and r < m:
        raise PreconditionError("eta must be positive when r < m")
    A = problem.forward_dense
    SAt = problem.prior.apply(A.T)
    P = problem.initial_dense
    F = SAt - P @ (A @ SAt) - problem.eta**2 * P
    G = problem.gram_dense
    chol = CholeskyFactor(G)
    GinvFt = chol.solve(F.T)
    H = F @ GinvFt
    H = 0.5 * (H + H.T)
    sF = np.linalg.svd(F, compute_uv=False)
    rank_F = numerical_rank(sF, F.shape, rank_tol)
    if rank_F < r:
        raise PreconditionError(f"rank(F)={rank_F} < r={r}")
    eig = symmetric_eig(H)
    lam = eig.eigenvalues
    unique = True
    if r < lam.size:
        unique = bool(lam[r - 1] - lam[r] > 1e-12 * max(abs(lam[0]), np.finfo(float).tiny))
    X = eig.U[:, :r]
    Y = GinvFt @ X
    return LowRankMatrix(X, Y), ClosedFormIntermediates(F, G, H, eig, unique, rank_F)


def tsvd_inverse(A, r: int) -> RegularizedInverse:
    """Pseudoinverse of the best rank-``r`` approximation, ``V_r S_r^{-1} U_r^T``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not 1 <= r <= min(A.shape):
        raise PreconditionError(f"r={r} outside [1, {min(A.shape)}]")
    U, s, Vt = _svd_thin(A)
    if s[r - 1] <= _rank_tol(s, A.shape):
        raise PreconditionError(f"sigma_{r} is zero; r exceeds rank(A)")
    unique = r == s.size or bool(s[r - 1] > s[r])
    return RegularizedInverse("tsvd", factors=(Vt[:r].T, 1.0 / s[:r], U[:, :r]),
                              unique=unique)


def truncated_tikhonov(A, r: int, eta: float) -> RegularizedInverse:
    """Rank-``r`` filter ``V_r diag(s / (s^2 + eta^2)) U_r^T``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if eta < 0:
        raise PreconditionError("eta must be nonnegative")
    if not 1 <= r <= min(A.shape):
        raise PreconditionError(f"r={r} outside [1, {min(A.shape)}]")
    U, s, Vt = _svd_thin(A)
    if eta == 0 and s[r - 1] <= _rank_tol(s, A.shape):
        raise PreconditionError(f"sigma_{r} is zero; r exceeds rank(A)")
    psi = s[:r] / (s[:r] ** 2 + eta**2)
    unique = r == s.size or bool(s[r - 1] > s[r])
    return RegularizedInverse("truncated_tikhonov", factors=(Vt[:r].T, psi, U[:, :r]),
                              unique=unique)


def tikhonov_inverse(A, eta: float) -> RegularizedInverse:
    """Full-rank Tikhonov inverse ``V diag(s / (s^2 + eta^2)) U^T``.

    A :class:`DiagonalizedOperator` is filtered in its transform domain and the
    result is again a :class:`DiagonalizedOperator`.
    """
    if eta <= 0:
        raise PreconditionError("eta must be positive")
    if isinstance(A, DiagonalizedOperator):
        s = A.spectrum
        return RegularizedInverse("tikhonov",
                                  operator=A.with_spectrum(s / (s**2 + eta**2), swap=True))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    U, s, Vt = _svd_thin(A)
    psi = s / (s**2 + eta**2)
    return RegularizedInverse("tikhonov", factors=(Vt.T, psi, U))


def orim0_inverse(A, M_xi, eta: float, r: int) -> RegularizedInverse:
    """Closed-form ORIM with zero mean, ``S = M_xi M_xi^T`` and ``P = 0``."""
    from .model import PriorModel

    A = np.atleast_2d(np.asarray(A, dtype=float))
    M_xi = np.atleast_2d(np.asarray(M_xi, dtype=float))
    n = A.shape[1]
    prior = PriorModel(np.zeros(n), M_xi @ M_xi.T, factor=M_xi)
    Z, inter = orim_closed_form(InverseProblem(A, eta, prior), r)
    return RegularizedInverse("orim0", matrix=Z.to_dense(), unique=inter.unique,
                              info={"X": Z.X, "Y": Z.Y})


def extended_svd(A, eta: float) -> ExtendedSvd:
    """Left singular vectors and the first ``m`` right blocks of ``[A, eta I]``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if eta < 0:
        raise PreconditionError("eta must be nonnegative")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"SVD did not converge: {exc}") from exc
    sig = np.zeros(m)
    sig[: min(m, n)] = s
    d = np.sqrt(sig**2 + eta**2)
    if np.any(d <= 0):
        raise PreconditionError("D is singular: eta = 0 with rank-deficient A")
    Sigma = np.zeros((m, n))
    Sigma[np.arange(min(m, n)), np.arange(min(m, n))] = s
    V11 = Vt.T @ Sigma.T / d
    V21 = eta * U / d
    return ExtendedSvd(np.diag(d), U, V11, V21)


def golub_kahan_inverse(A, b, k: int) -> RegularizedInverse:
    """``P = Q_k B_k^+ W_{k+1}^T`` from ``k`` Golub-Kahan steps on ``(A, b)``.

    ``P b`` is the ``k``-th LSQR iterate. The operator is stored factored as
    ``X Y^T`` with ``X = Q_k`` and ``Y = W_{k+1} (B_k^+)^T``.
    """
    bd = golub_kahan(A, b, k)
    Bp = pseudoinverse(bd.B, tol=1e-14)
    Z = LowRankMatrix(bd.Q, bd.W @ Bp.T)
    return RegularizedInverse("golub_kahan_lsqr", operator=aslinearoperator(Z),
                              info={"low_rank": Z, "bidiag": bd,
                                    "breakdown": bd.breakdown})
