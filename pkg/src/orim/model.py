"""Problem and prior data types shared by the computational modules."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import PreconditionError
from .linalg import (
    CholeskyFactor,
    IdentityOperator,
    LinearOperator,
    MatrixOperator,
    ZeroOperator,
    aslinearoperator,
)

__all__ = [
    "PriorModel",
    "InverseProblem",
    "LowRankMatrix",
    "ClosedFormIntermediates",
    "prior_from_mean_cov",
    "prior_from_mean_diag",
    "identity_prior",
    "zero_initial_inverse",
]


def _block_diag_trace(op: LinearOperator, chunk: int = 512) -> float:
    total = 0.0
    n = op.cols
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        E = np.zeros((n, stop - start))
        idx = np.arange(stop - start)
        E[start + idx, idx] = 1.0
        total += np.sum(op.apply(E)[start + idx, idx])
    return float(total)


@dataclass(frozen=True, eq=False)
class PriorModel:
    """First and second moments of the unknown ``xi``.

    The canonical representation is the second moment
    ``S = M M^T = Gamma + mu mu^T``. ``second_moment`` is either a dense
    ``(n, n)`` array or a symmetric :class:`LinearOperator`; ``factor`` is an
    optional ``M`` with ``M M^T = S``. ``cov_diagonal``, when set, marks a
    diagonal covariance and enables matrix-free sampling and factoring.
    """

    mean: np.ndarray
    second_moment: np.ndarray | LinearOperator
    factor: np.ndarray | LinearOperator | None = None
    cov_diagonal: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.mean.size

    @property
    def is_dense(self) -> bool:
        return isinstance(self.second_moment, np.ndarray)

    def apply(self, v):
        """Product ``S v`` for a vector or column block."""
        if self.is_dense:
            return self.second_moment @ v
        return self.second_moment.apply(v)

    @cached_property
    def operator(self) -> LinearOperator:
        return aslinearoperator(self.second_moment)

    def dense(self) -> np.ndarray:
        if self.is_dense:
            return self.second_moment
        return self.second_moment.to_dense()

    @cached_property
    def trace(self) -> float:
        if self.is_dense:
            return float(np.trace(self.second_moment))
        if self.cov_diagonal is not None:
            return float(np.sum(self.cov_diagonal) + self.mean @ self.mean)
        return _block_diag_trace(self.operator)

    @cached_property
    def factor_operator(self) -> LinearOperator:
        """``M`` as an operator; built from ``S`` when no factor was supplied."""
        if self.factor is not None:
            return aslinearoperator(self.factor)
        if self.cov_diagonal is not None:
            root = np.sqrt(self.cov_diagonal)
            mu = self.mean
            n = self.n

            def fwd(v):
                if v.ndim == 1:
                    return root * v[:n] + mu * v[n]
                return root[:, None] * v[:n] + np.outer(mu, v[n])

            def adj(v):
                if v.ndim == 1:
                    return np.append(root * v, mu @ v)
                return np.vstack([root[:, None] * v, (mu @ v)[None, :]])

            return LinearOperator((n, n + 1), fwd, adj, matmat=fwd, rmatmat=adj)
        lam, U = np.linalg.eigh(self.dense())
        lam = np.clip(lam, 0.0, None)
        return MatrixOperator(U * np.sqrt(lam))

    def covariance_dense(self) -> np.ndarray:
        if self.cov_diagonal is not None:
            return np.diag(self.cov_diagonal)
        return self.dense() - np.outer(self.mean, self.mean)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` Gaussian samples ``N(mean, Gamma)`` as columns."""
        z = rng.standard_normal((self.n, size))
        if self.cov_diagonal is not None:
            return self.mean[:, None] + np.sqrt(self.cov_diagonal)[:, None] * z
        lam, U = np.linalg.eigh(self.covariance_dense())
        root = U * np.sqrt(np.clip(lam, 0.0, None))
        return self.mean[:, None] + root @ z


def _check_psd(S, what="second moment", full_rank=True):
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    top = max(lam[-1], np.finfo(float).tiny)
    if lam[0] < -1e-10 * top:
        raise PreconditionError(f"{what} is not positive semidefinite "
                                f"(min eigenvalue {lam[0]:.3e})")
    if full_rank and lam[0] <= S.shape[0] * np.finfo(float).eps * top:
        raise PreconditionError(f"{what} is rank deficient "
                                f"(min eigenvalue {lam[0]:.3e}, max {top:.3e})")


def prior_from_mean_cov(mean, cov, require_full_rank: bool = True) -> PriorModel:
    """Prior with second moment ``cov + mean mean^T`` (dense)."""
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = mean.size
    if cov.shape != (n, n):
        raise PreconditionError(f"cov has shape {cov.shape}, expected ({n}, {n})")
    if np.linalg.norm(cov - cov.T) > 1e-10 * max(np.linalg.norm(cov), 1e-300):
        raise PreconditionError("cov is not symmetric")
    _check_psd(cov, "covariance", full_rank=False)
    S = 0.5 * (cov + cov.T) + np.outer(mean, mean)
    _check_psd(S, full_rank=require_full_rank)
    return PriorModel(mean, S)


def prior_from_mean_diag(mean, variances) -> PriorModel:
    """Matrix-free prior with diagonal covariance ``diag(variances)``.

    Rank deficiency is allowed here: the rank-update algorithm only needs
    ``A S A^T + eta^2 I`` to be positive definite.
    """
    mean = np.asarray(mean, dtype=float).ravel()
    d = np.asarray(variances, dtype=float).ravel()
    if d.shape != mean.shape:
        raise PreconditionError("variances and mean must have equal length")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise PreconditionError("variances must be finite and nonnegative")
    n = mean.size

    def fwd(v):
        if v.ndim == 1:
            return d * v + mean * (mean @ v)
        return d[:, None] * v + np.outer(mean, mean @ v)

    S = LinearOperator((n, n), fwd, fwd, matmat=fwd, rmatmat=fwd)
    return PriorModel(mean, S, cov_diagonal=d)


def identity_prior(n: int) -> PriorModel:
    """Zero mean, identity covariance: ``S = I`` (matrix-free)."""
    ident = IdentityOperator(n)
    return PriorModel(np.zeros(n), ident, factor=ident, cov_diagonal=np.ones(n))


def zero_initial_inverse(n: int, m: int) -> LinearOperator:
    """The zero ``n x m`` initial inverse."""
    return ZeroOperator(n, m)


@dataclass(frozen=True, eq=False)
class InverseProblem:
    """Bayes-risk problem data: forward model, noise level, prior, initial inverse.

    ``forward`` may be an ndarray, sparse matrix or :class:`LinearOperator`;
    likewise ``initial_inverse`` (``None`` means the zero matrix).
    """

    forward: object
    eta: float
    prior: PriorModel
    initial_inverse: object = None

    def __post_init__(self):
        A = aslinearoperator(self.forward)
        object.__setattr__(self, "forward", A)
        m, n = A.shape
        P = self.initial_inverse
        if P is None:
            P = ZeroOperator(n, m)
        elif isinstance(P, LowRankMatrix):
            pass
        else:
            P = aslinearoperator(P)
        object.__setattr__(self, "initial_inverse", P)
        if P.shape != (n, m):
            raise PreconditionError(f"initial inverse has shape {P.shape}, "
                                    f"expected ({n}, {m})")
        if self.prior.n != n:
            raise PreconditionError(f"prior has dimension {self.prior.n}, expected {n}")
        if not np.isfinite(self.eta) or self.eta < 0:
            raise PreconditionError("eta must be finite and nonnegative")
        if n > m:
            warnings.warn("n > m: closed-form theory is stated for n <= m; "
                          "formulas are applied as written", stacklevel=3)

    @property
    def shape(self) -> tuple[int, int]:
        return self.forward.shape

    @property
    def m(self) -> int:
        return self.forward.rows

    @property
    def n(self) -> int:
        return self.forward.cols

    @property
    def has_zero_initial(self) -> bool:
        return isinstance(self.initial_inverse, ZeroOperator)

    def apply_gram(self, y):
        """``G y`` with ``G = A S A^T + eta^2 I``."""
        A = self.forward
        return A.apply(self.prior.apply(A.apply_transpose(y))) + self.eta**2 * y

    def apply_SAt(self, y):
        """``S A^T y``."""
        return self.prior.apply(self.forward.apply_transpose(y))

    def apply_AS(self, x):
        """``A S x``."""
        return self.forward.apply(self.prior.apply(x))

    def apply_P(self, b):
        return self.initial_inverse.apply(b)

    def apply_Pt(self, v):
        return self.initial_inverse.apply_transpose(v)

    @cached_property
    def forward_dense(self) -> np.ndarray:
        return self.forward.to_dense()

    @cached_property
    def initial_dense(self) -> np.ndarray:
        return self.initial_inverse.to_dense()

    @cached_property
    def gram_dense(self) -> np.ndarray:
        prior = self.prior
        if isinstance(self.forward, MatrixOperator) and sp.issparse(self.forward.matrix):
            return self._sparse_gram(self.forward.matrix)
        A = self.forward_dense
        if prior.is_dense:
            G = A @ prior.second_moment @ A.T
            G = 0.5 * (G + G.T)
        elif prior.factor is not None or prior.cov_diagonal is not None:
            # cheap factor: G = (A M)(A M)^T as a symmetric rank-k update
            AM = np.asfortranarray(prior.factor_operator.apply_transpose(A.T).T)
            G = sla.blas.dsyrk(1.0, AM)
            G = G + np.triu(G, 1).T
        else:
            G = A @ prior.apply(A.T)
            G = 0.5 * (G + G.T)
        G[np.diag_indices_from(G)] += self.eta**2
        return G

    def _sparse_gram(self, B) -> np.ndarray:
        prior = self.prior
        if isinstance(prior.factor, IdentityOperator):
            G = (B @ B.T).toarray()
        elif prior.cov_diagonal is not None:
            Bmu = B @ prior.mean
            G = (B @ sp.diags(prior.cov_diagonal) @ B.T).toarray() + np.outer(Bmu, Bmu)
        else:
            G = B @ prior.apply(B.T.toarray())
        G = 0.5 * (G + G.T)
        G[np.diag_indices_from(G)] += self.eta**2
        return G

    @cached_property
    def gram_factor(self) -> CholeskyFactor:
        return CholeskyFactor(self.gram_dense)

    def with_initial(self, P) -> "InverseProblem":
        return InverseProblem(self.forward, self.eta, self.prior, P)


@dataclass(frozen=True, eq=False)
class LowRankMatrix:
    """Factored matrix ``Z = X Y^T`` with ``X`` (n, r) and ``Y`` (m, r)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[1] != Y.shape[1]:
            raise PreconditionError("X and Y must have the same number of columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def empty(cls, n: int, m: int) -> "LowRankMatrix":
        return cls(np.zeros((n, 0)), np.zeros((m, 0)))

    @property
    def rank(self) -> int:
        return self.X.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.X.shape[0], self.Y.shape[0])

    def to_dense(self) -> np.ndarray:
        return self.X @ self.Y.T

    def apply(self, b):
        return self.X @ (self.Y.T @ b)

    def apply_transpose(self, v):
        return self.Y @ (self.X.T @ v)

    def append(self, x, y) -> "LowRankMatrix":
        return LowRankMatrix(np.column_stack([self.X, x]), np.column_stack([self.Y, y]))

    def truncate(self, r: int) -> "LowRankMatrix":
        return LowRankMatrix(self.X[:, :r], self.Y[:, :r])

    def stores_compactly(self) -> bool:
        """True while factors take no more memory than the dense matrix."""
        n, m = self.shape
        return self.rank <= n * m / (n + m)

    def as_operator(self) -> LinearOperator:
        return aslinearoperator(self)


@dataclass(frozen=True, eq=False)
class ClosedFormIntermediates:
    """Matrices built while evaluating the closed-form ORIM.

    ``G = A S A^T + eta^2 I``, ``F = (I - P A) S A^T - eta^2 P`` and
    ``H = F G^{-1} F^T``; ``unique`` is ``lambda_r > lambda_{r+1}``.
    """

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    eig: object
    unique: bool = True
    rank_F: int = field(default=0)
