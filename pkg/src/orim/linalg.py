"""Dense factorizations and matrix-free iterative kernels.

Everything here is a thin, contract-checked layer over LAPACK (through
numpy/scipy) plus two hand-written Krylov kernels: Golub-Kahan
bidiagonalization with full reorthogonalization and LSQR.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import FactorizationError, NotPositiveDefiniteError, PreconditionError

__all__ = [
    "LinearOperator",
    "MatrixOperator",
    "ZeroOperator",
    "IdentityOperator",
    "DiagonalizedOperator",
    "aslinearoperator",
    "adjoint_mismatch",
    "SvdResult",
    "EigResult",
    "Bidiagonalization",
    "LsqrResult",
    "CholeskyFactor",
    "svd",
    "truncated_svd",
    "pseudoinverse",
    "numerical_rank",
    "symmetric_eig",
    "lsqr",
    "golub_kahan",
    "cholesky",
    "spd_solve",
]


# Linear operators ============================================================
class LinearOperator:
    """A linear map accessed only through products with it and its transpose.

    ``apply`` and ``apply_transpose`` accept either a vector or a 2-D array
    whose columns are vectors. Subclasses (or callers) may supply block
    versions; otherwise blocks are applied column by column.
    """

    def __init__(
        self,
        shape: tuple[int, int],
        matvec: Callable[[np.ndarray], np.ndarray],
        rmatvec: Callable[[np.ndarray], np.ndarray],
        matmat: Callable[[np.ndarray], np.ndarray] | None = None,
        rmatmat: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        rows, cols = (int(s) for s in shape)
        if rows < 1 or cols < 1:
            raise PreconditionError(f"operator shape must be positive, got {shape}")
        self.shape = (rows, cols)
        self._matvec = matvec
        self._rmatvec = rmatvec
        self._matmat = matmat
        self._rmatmat = rmatmat

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            if v.shape[0] != self.cols:
                raise PreconditionError(
                    f"expected vector of length {self.cols}, got {v.shape[0]}")
            return np.asarray(self._matvec(v), dtype=float)
        if v.shape[0] != self.cols:
            raise PreconditionError(
                f"expected block with {self.cols} rows, got {v.shape[0]}")
        if self._matmat is not None:
            return np.asarray(self._matmat(v), dtype=float)
        out = np.empty((self.rows, v.shape[1]))
        for j in range(v.shape[1]):
            out[:, j] = self._matvec(v[:, j])
        return out

    def apply_transpose(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            if v.shape[0] != self.rows:
                raise PreconditionError(
                    f"expected vector of length {self.rows}, got {v.shape[0]}")
            return np.asarray(self._rmatvec(v), dtype=float)
        if v.shape[0] != self.rows:
            raise PreconditionError(
                f"expected block with {self.rows} rows, got {v.shape[0]}")
        if self._rmatmat is not None:
            return np.asarray(self._rmatmat(v), dtype=float)
        out = np.empty((self.cols, v.shape[1]))
        for j in range(v.shape[1]):
            out[:, j] = self._rmatvec(v[:, j])
        return out

    def __matmul__(self, v):
        return self.apply(v)

    @property
    def T(self) -> "LinearOperator":
        return LinearOperator(
            (self.cols, self.rows),
            self.apply_transpose,
            self.apply,
            matmat=self.apply_transpose,
            rmatmat=self.apply,
        )

    def to_dense(self, chunk: int = 512) -> np.ndarray:
        """Materialize the operator by applying it to identity blocks."""
        out = np.empty(self.shape)
        for start in range(0, self.cols, chunk):
            stop = min(start + chunk, self.cols)
            block = np.zeros((self.cols, stop - start))
            block[np.arange(start, stop), np.arange(stop - start)] = 1.0
            out[:, start:stop] = self.apply(block)
        return out

    def __repr__(self):
        return f"<{type(self).__name__} {self.rows}x{self.cols}>"


class MatrixOperator(LinearOperator):
    """Operator backed by an explicit dense or sparse matrix."""

    def __init__(self, matrix):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
        else:
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.matrix = matrix
        mt = matrix.T.tocsr() if sp.issparse(matrix) else matrix.T
        super().__init__(
            matrix.shape,
            matvec=lambda v: matrix @ v,
            rmatvec=lambda v: mt @ v,
            matmat=lambda v: matrix @ v,
            rmatmat=lambda v: mt @ v,
        )

    def to_dense(self, chunk: int = 512) -> np.ndarray:
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        return np.array(self.matrix)


class ZeroOperator(LinearOperator):
    """The zero map between R^cols and R^rows."""

    def __init__(self, rows: int, cols: int):
        super().__init__(
            (rows, cols),
            matvec=lambda v: np.zeros(rows),
            rmatvec=lambda v: np.zeros(cols),
            matmat=lambda v: np.zeros((rows, v.shape[1])),
            rmatmat=lambda v: np.zeros((cols, v.shape[1])),
        )

    def to_dense(self, chunk: int = 512) -> np.ndarray:
        return np.zeros(self.shape)


class IdentityOperator(LinearOperator):
    """The identity on R^n."""

    def __init__(self, n: int):
        ident = lambda v: np.array(v, dtype=float, copy=True)  # noqa: E731
        super().__init__((n, n), ident, ident, matmat=ident, rmatmat=ident)

    def to_dense(self, chunk: int = 512) -> np.ndarray:
        return np.eye(self.rows)


class DiagonalizedOperator(LinearOperator):
    """Square operator given as ``U diag(s) V^T`` with fast orthogonal transforms.

    Parameters
    ----------
    s : (n,) ndarray
        Spectrum (may carry signs, e.g. eigenvalues of a symmetric operator).
    apply_u, apply_ut, apply_v, apply_vt : callable
        Orthogonal transforms acting on vectors or on column blocks.
    """

    def __init__(self, s, apply_u, apply_ut, apply_v, apply_vt):
        s = np.asarray(s, dtype=float).ravel()
        self.spectrum = s
        self.apply_u, self.apply_ut = apply_u, apply_ut
        self.apply_v, self.apply_vt = apply_v, apply_vt
        n = s.size

        def fwd(v):
            w = apply_vt(v)
            return apply_u(w * (s if w.ndim == 1 else s[:, None]))

        def adj(v):
            w = apply_ut(v)
            return apply_v(w * (s if w.ndim == 1 else s[:, None]))

        super().__init__((n, n), fwd, adj, matmat=fwd, rmatmat=adj)

    def with_spectrum(self, s, swap=False) -> "DiagonalizedOperator":
        """Same transforms, new spectrum; ``swap`` exchanges the roles of U and V."""
        if swap:
            return DiagonalizedOperator(s, self.apply_v, self.apply_vt,
                                        self.apply_u, self.apply_ut)
        return DiagonalizedOperator(s, self.apply_u, self.apply_ut,
                                    self.apply_v, self.apply_vt)


def aslinearoperator(obj) -> LinearOperator:
    """Wrap ndarrays, sparse matrices and factored matrices as operators."""
    if isinstance(obj, LinearOperator):
        return obj
    if isinstance(obj, np.ndarray) or sp.issparse(obj):
        return MatrixOperator(obj)
    if hasattr(obj, "apply") and hasattr(obj, "apply_transpose") and hasattr(obj, "shape"):
        return LinearOperator(obj.shape, obj.apply, obj.apply_transpose,
                              matmat=obj.apply, rmatmat=obj.apply_transpose)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a linear operator")


def adjoint_mismatch(op: LinearOperator, trials: int = 20, seed: int = 0) -> float:
    """Largest relative gap between <A u, v> and <u, A^T v> over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.cols)
        v = rng.standard_normal(op.rows)
        au, atv = op.apply(u), op.apply_transpose(v)
        lhs, rhs = au @ v, u @ atv
        scale = max(np.linalg.norm(au) * np.linalg.norm(v),
                    np.linalg.norm(u) * np.linalg.norm(atv), np.finfo(float).tiny)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# Dense factorizations ========================================================
@dataclass(frozen=True)
class SvdResult:
    """Full SVD ``A = U diag(singular_values) V^T`` (note: ``V``, not ``V^T``)."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.singular_values.size
        return (self.U[:, :k] * self.singular_values) @ self.V[:, :k].T


@dataclass(frozen=True)
class EigResult:
    """Symmetric eigendecomposition with eigenvalues in nonincreasing order."""

    U: np.ndarray
    eigenvalues: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.eigenvalues) @ self.U.T


def _check_finite(A, name="A"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2:
        raise PreconditionError(f"{name} must be a matrix, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise PreconditionError(f"{name} has non-finite entries")
    return A


def svd(A) -> SvdResult:
    """Full singular value decomposition."""
    A = _check_finite(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"SVD did not converge: {exc}") from exc
    return SvdResult(U, s, Vt.T)


def truncated_svd(A, r: int):
    """Leading ``r`` singular triplets ``(U_r, s_r, V_r)``.

    ``U_r @ diag(s_r) @ V_r.T`` is a best rank-``r`` approximation of ``A`` in
    the Frobenius norm.
    """
    A = _check_finite(A)
    if not 1 <= r <= min(A.shape):
        raise PreconditionError(f"rank r={r} outside [1, {min(A.shape)}]")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"SVD did not converge: {exc}") from exc
    return U[:, :r], s[:r], Vt[:r].T


def numerical_rank(s, shape, tol=None) -> int:
    """Count singular values above ``tol`` (default ``max(m, n) * eps * s[0]``)."""
    s = np.asarray(s)
    if s.size == 0 or s[0] == 0:
        return 0
    if tol is None:
        tol = max(shape) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


def pseudoinverse(A, tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values ``<= tol * s_1`` count as zero."""
    if tol < 0:
        raise PreconditionError("tol must be nonnegative")
    A = _check_finite(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.T.shape)
    k = int(np.sum(s > tol * s[0]))
    return (Vt[:k].T / s[:k]) @ U[:, :k].T


def symmetric_eig(H, tol: float = 1e-8) -> EigResult:
    """Eigendecomposition of a (numerically) symmetric matrix, largest first."""
    H = _check_finite(H, "H")
    if H.shape[0] != H.shape[1]:
        raise PreconditionError(f"H must be square, got {H.shape}")
    norm = np.linalg.norm(H)
    if np.linalg.norm(H - H.T) > tol * max(norm, np.finfo(float).tiny):
        raise PreconditionError("H is not symmetric within tolerance")
    try:
        lam, U = np.linalg.eigh(0.5 * (H + H.T))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"eigendecomposition did not converge: {exc}") from exc
    return EigResult(U[:, ::-1].copy(), lam[::-1].copy())


# Cholesky ====================================================================
class CholeskyFactor:
    """Reusable Cholesky factor of an SPD matrix ``G = L L^T``."""

    def __init__(self, G):
        G = _check_finite(G, "G")
        if G.shape[0] != G.shape[1]:
            raise PreconditionError(f"G must be square, got {G.shape}")
        c, info = sla.lapack.dpotrf(0.5 * (G + G.T), lower=1, clean=1)
        if info > 0:
            raise NotPositiveDefiniteError(info - 1)
        if info < 0:
            raise FactorizationError(f"dpotrf: illegal argument {-info}")
        self.lower = c
        self.n = G.shape[0]

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x, info = sla.lapack.dpotrs(self.lower, rhs, lower=1)
        if info != 0:
            raise FactorizationError(f"dpotrs: illegal argument {-info}")
        return x


def cholesky(G) -> CholeskyFactor:
    return CholeskyFactor(G)


def spd_solve(G, rhs) -> np.ndarray:
    """Solve ``G X = rhs`` for symmetric positive definite ``G``.

    For repeated solves with the same ``G`` use :func:`cholesky` once and
    call ``.solve`` on the factor.
    """
    return CholeskyFactor(G).solve(rhs)


# Krylov kernels ==============================================================
@dataclass(frozen=True)
class Bidiagonalization:
    """Partial Golub-Kahan factorization ``A Q = W B``.

    ``B`` is the (k+1) x k lower-bidiagonal matrix with ``alphas`` on the
    diagonal and ``betas[1:]`` below it; ``betas[0] = ||b||``.
    On breakdown the factorization is truncated and ``breakdown`` is set; a
    vanishing ``beta_{k+1}`` leaves a zero last column in ``W``.
    """

    Q: np.ndarray
    W: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    breakdown: bool = False

    @property
    def k(self) -> int:
        return self.alphas.size

    @property
    def B(self) -> np.ndarray:
        k = self.k
        B = np.zeros((k + 1, k))
        B[np.arange(k), np.arange(k)] = self.alphas
        B[np.arange(1, k + 1), np.arange(k)] = self.betas[1:]
        return B


def golub_kahan(A, b, k: int, reorthogonalize: bool = True) -> Bidiagonalization:
    """Run ``k`` steps of Golub-Kahan bidiagonalization started from ``b``."""
    A = aslinearoperator(A)
    b = np.asarray(b, dtype=float)
    if k < 1:
        raise PreconditionError("k must be at least 1")
    beta1 = np.linalg.norm(b)
    if beta1 == 0:
        raise PreconditionError("starting vector b must be nonzero")
    m, n = A.shape
    Q = np.zeros((n, k))
    W = np.zeros((m, k + 1))
    alphas = np.zeros(k)
    betas = np.zeros(k + 1)
    betas[0] = beta1
    W[:, 0] = b / beta1

    q = A.apply_transpose(W[:, 0])
    scale = np.linalg.norm(q)
    for i in range(k):
        if i > 0:
            q = A.apply_transpose(W[:, i]) - betas[i] * Q[:, i - 1]
        if reorthogonalize and i > 0:
            q -= Q[:, :i] @ (Q[:, :i].T @ q)
            q -= Q[:, :i] @ (Q[:, :i].T @ q)
        alpha = np.linalg.norm(q)
        scale = max(scale, alpha, betas[i])
        if alpha <= 1e-13 * scale:
            return Bidiagonalization(Q[:, :i], W[:, : i + 1], alphas[:i],
                                     betas[: i + 1], breakdown=True)
        alphas[i] = alpha
        Q[:, i] = q / alpha

        w = A.apply(Q[:, i]) - alpha * W[:, i]
        if reorthogonalize:
            w -= W[:, : i + 1] @ (W[:, : i + 1].T @ w)
            w -= W[:, : i + 1] @ (W[:, : i + 1].T @ w)
        beta = np.linalg.norm(w)
        scale = max(scale, beta)
        if beta <= 1e-13 * scale:
            return Bidiagonalization(Q[:, : i + 1], W[:, : i + 2], alphas[: i + 1],
                                     betas[: i + 2], breakdown=True)
        betas[i + 1] = beta
        W[:, i + 1] = w / beta
    return Bidiagonalization(Q, W, alphas, betas)


@dataclass
class LsqrResult:
    """Outcome of :func:`lsqr`.

    ``normal_residual`` is the recurrence estimate of ``||C^T (C x - d)||``
    divided by ``||C^T d||``.
    """

    x: np.ndarray
    converged: bool
    iterations: int
    normal_residual: float
    residual_norm: float
    iterates: list = field(default_factory=list, repr=False)


def lsqr(C, d, tol: float = 1e-10, max_iter: int | None = None,
         keep_iterates: bool = False) -> LsqrResult:
    """Least squares ``min ||C x - d||_2`` by the Paige-Saunders LSQR recurrence.

    Stops when ``||C^T r|| <= tol * ||C^T d||`` or after ``max_iter`` steps;
    non-convergence is reported through ``converged`` rather than raised.
    """
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    C = aslinearoperator(C)
    d = np.asarray(d, dtype=float)
    m, n = C.shape
    if d.shape != (m,):
        raise PreconditionError(f"rhs has shape {d.shape}, expected ({m},)")
    if max_iter is None:
        max_iter = 2 * n
    x = np.zeros(n)
    iterates = []

    beta = np.linalg.norm(d)
    if beta == 0:
        return LsqrResult(x, True, 0, 0.0, 0.0, iterates)
    u = d / beta
    v = C.apply_transpose(u)
    alpha = np.linalg.norm(v)
    if alpha == 0:
        return LsqrResult(x, True, 0, 0.0, beta, iterates)
    v /= alpha
    atd = alpha * beta
    w = v.copy()
    phibar, rhobar = beta, alpha
    normal_res = 1.0
    itn = 0
    converged = False
    while itn < max_iter:
        itn += 1
        u = C.apply(v) - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u /= beta
        v = C.apply_transpose(u) - beta * v
        alpha = np.linalg.norm(v)
        if alpha > 0:
            v /= alpha

        rho = np.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar

        x += (phi / rho) * w
        w = v - (theta / rho) * w
        if keep_iterates:
            iterates.append(x.copy())

        normal_res = phibar * alpha * abs(c) / atd
        if normal_res <= tol or alpha == 0 or beta == 0:
            converged = True
            break
    return LsqrResult(x, converged, itn, normal_res, phibar, iterates)
