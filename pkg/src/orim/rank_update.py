"""Low-rank ORIM updates by successive rank-1 corrections.

The outer loop appends one pair ``(x, y)`` at a time to ``Z = X Y^T``; each
pair is found by alternating exact minimization over ``x`` (closed form,
matrix-vector products only) and ``y`` (a least-squares solve).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, FactorizationError, PreconditionError
from .linalg import LinearOperator, lsqr
from .model import InverseProblem, LowRankMatrix
from .risk import RiskCache, bayes_risk, incremental_risk

__all__ = [
    "UpdateConfig",
    "RankRecord",
    "UpdateTrace",
    "RankOnePair",
    "solve_x",
    "solve_y",
    "rank_one_alternating",
    "orim_update",
]

INIT_STRATEGIES = ("ones", "random_orthogonal")
Y_SOLVERS = ("lsqr", "dense")


@dataclass
class UpdateConfig:
    """Tolerances and limits for :func:`orim_update`.

    ``y_solver`` selects how the ``y`` half-step is solved: ``"lsqr"`` on the
    stacked least-squares system (matrix-free) or ``"dense"`` with a cached
    Cholesky factor of ``A S A^T + eta^2 I``.
    """

    outer_tol: float = 1e-6
    outer_max_rank: int = 20
    inner_tol: float = 1e-6
    inner_max_iter: int = 100
    lsqr_tol: float = 1e-10
    lsqr_max_iter: int | None = None
    init_strategy: str = "random_orthogonal"
    seed: int = 0
    y_solver: str = "lsqr"
    max_retries: int = 5

    def __post_init__(self):
        for name in ("outer_tol", "inner_tol", "lsqr_tol"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"{name} must be positive")
        if self.outer_max_rank < 0 or self.inner_max_iter < 1:
            raise PreconditionError("iteration limits must be positive")
        if self.init_strategy not in INIT_STRATEGIES:
            raise PreconditionError(f"init_strategy must be one of {INIT_STRATEGIES}")
        if self.y_solver not in Y_SOLVERS:
            raise PreconditionError(f"y_solver must be one of {Y_SOLVERS}")


@dataclass
class RankRecord:
    rank: int
    f: float
    inner_iterations: int
    seconds: float


@dataclass
class UpdateTrace:
    f0: float
    records: list[RankRecord] = field(default_factory=list)
    termination: str = ""
    rejected_f: float | None = None

    @property
    def f_values(self) -> list[float]:
        return [self.f0] + [rec.f for rec in self.records]

    @property
    def final_f(self) -> float:
        return self.f_values[-1]


class RankOnePair(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    f: float
    iterations: int
    history: list
    converged: bool


def solve_x(problem: InverseProblem, X, Y, y, Gy=None):
    """Unconstrained minimizer over ``x`` for fixed ``y``.

    ``x = [S A^T y - (P + X Y^T) G y] / (y^T G y)``.
    """
    if Gy is None:
        Gy = problem.apply_gram(y)
    denom = float(y @ Gy)
    if not denom > 0:
        raise PreconditionError("y^T G y must be positive (is y zero or eta zero?)")
    num = problem.apply_SAt(y) - problem.apply_P(Gy)
    if X is not None and X.shape[1]:
        num -= X @ (Y.T @ Gy)
    return num / denom


def _stacked_operator(problem: InverseProblem) -> LinearOperator:
    # [M^T A^T; eta I] : R^m -> R^(p+m)
    A, M, eta = problem.forward, problem.prior.factor_operator, problem.eta
    p = M.cols
    m = problem.m

    def fwd(y):
        return np.concatenate([M.apply_transpose(A.apply_transpose(y)), eta * y])

    def adj(v):
        return A.apply(M.apply(v[:p])) + eta * v[p:]

    return LinearOperator((p + m, m), fwd, adj)


def solve_y(problem: InverseProblem, x, method: str = "lsqr", tol: float = 1e-10,
            max_iter: int | None = None, operator: LinearOperator | None = None,
            Ptx=None, ASx=None):
    """Minimizer over ``y`` for a unit ``x`` orthogonal to the current ``X``.

    ``y = G^{-1} A S x - P^T x``. With ``method="lsqr"`` this is the
    least-squares solution of ``[M^T A^T; eta I] y = [M^T (x - A^T P^T x); -eta P^T x]``;
    if LSQR does not converge the dense Cholesky route is used instead.
    ``Ptx`` and ``ASx`` may be passed in when already computed.
    """
    if Ptx is None:
        Ptx = problem.apply_Pt(x)
    if method == "dense":
        if ASx is None:
            ASx = problem.apply_AS(x)
        return problem.gram_factor.solve(ASx) - Ptx
    if method != "lsqr":
        raise PreconditionError(f"unknown y solver {method!r}")
    C = operator if operator is not None else _stacked_operator(problem)
    M = problem.prior.factor_operator
    rhs = np.concatenate([M.apply_transpose(x - problem.forward.apply_transpose(Ptx)),
                          -problem.eta * Ptx])
    if max_iter is None:
        max_iter = 20 * problem.m
    res = lsqr(C, rhs, tol=tol, max_iter=max_iter)
    if res.converged:
        return res.x
    try:
        return problem.gram_factor.solve(problem.apply_AS(x) if ASx is None else ASx) - Ptx
    except (FactorizationError, MemoryError) as exc:
        raise ConvergenceError(
            f"LSQR did not converge in {res.iterations} steps and no dense "
            f"fallback is available") from exc


def _initial_y(problem, Y, strategy, rng):
    m = problem.m
    if strategy == "ones":
        return np.ones(m)
    y = rng.standard_normal(m)
    if Y is not None and Y.shape[1]:
        Qy, _ = np.linalg.qr(Y)
        y -= Qy @ (Qy.T @ y)
        y -= Qy @ (Qy.T @ y)
    return y


def _project_out(X, x):
    if X is None or not X.shape[1]:
        return x
    x = x - X @ (X.T @ x)
    return x - X @ (X.T @ x)


def rank_one_alternating(problem: InverseProblem, X, Y, config: UpdateConfig | None = None,
                         f_current: float | None = None, rng=None,
                         operator: LinearOperator | None = None) -> RankOnePair:
    """Best rank-1 correction ``x y^T`` to ``X Y^T`` by alternating minimization.

    Each sweep computes ``x`` in closed form, projects it onto the orthogonal
    complement of ``X`` and normalizes it, then solves for ``y``. Returns
    ``x`` with unit norm orthogonal to ``X``.

    Raises
    ------
    ConvergenceError
        When ``x`` collapses to zero after projection for every retry.
    """
    config = config or UpdateConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if X is None:
        X = np.zeros((problem.n, 0))
        Y = np.zeros((problem.m, 0))
    if f_current is None:
        f_current = bayes_risk(problem, LowRankMatrix(X, Y))
    if config.y_solver == "lsqr" and operator is None:
        operator = _stacked_operator(problem)

    if config.y_solver == "dense":
        G = problem.gram_dense
        gram = lambda v: G @ v  # noqa: E731
    else:
        gram = problem.apply_gram

    strategy = config.init_strategy
    for attempt in range(config.max_retries + 1):
        y = _initial_y(problem, Y, strategy, rng)
        Gy = gram(y)
        x_prev = None
        f_prev = f_current
        history = []
        degenerate = False
        converged = False
        it = 0
        for it in range(1, config.inner_max_iter + 1):
            x_raw = solve_x(problem, X, Y, y, Gy)
            raw_norm = np.linalg.norm(x_raw)
            x = _project_out(X, x_raw)
            nx = np.linalg.norm(x)
            if nx <= 1e-12 * max(raw_norm, np.finfo(float).tiny) or nx == 0:
                degenerate = True
                break
            x /= nx
            Ptx = problem.apply_Pt(x)
            ASx = problem.apply_AS(x)
            y_new = solve_y(problem, x, method=config.y_solver, tol=config.lsqr_tol,
                            max_iter=config.lsqr_max_iter, operator=operator,
                            Ptx=Ptx, ASx=ASx)
            Gy = gram(y_new)
            # risk change of x y^T, see rank_one_delta
            f_new = f_current + float(Gy @ (y_new + 2 * Ptx) - 2 * y_new @ ASx)
            history.append(f_new)
            dy = np.linalg.norm(y_new - y) / max(np.linalg.norm(y_new), np.finfo(float).tiny)
            dx = np.inf if x_prev is None else np.linalg.norm(x - x_prev)
            small_step = max(dx, dy) < config.inner_tol
            # gain is measured between sweeps, not against the starting risk
            small_gain = it > 1 and (f_prev - f_new) < config.inner_tol * abs(f_new)
            y, x_prev, f_prev = y_new, x, f_new
            if small_step or small_gain:
                converged = True
                break
        if not degenerate:
            return RankOnePair(x_prev, y, f_prev, it, history, converged)
        strategy = "random_orthogonal"
    raise ConvergenceError(
        f"x collapsed to zero after orthogonalization in {config.max_retries + 1} attempts")


def orim_update(problem: InverseProblem, config: UpdateConfig | None = None):
    """Low-rank ORIM update ``Z = X Y^T`` to the initial inverse of ``problem``.

    Rank-1 pairs are appended until the relative decrease of the risk falls
    below ``config.outer_tol`` (the pair that fails the test is discarded) or
    ``config.outer_max_rank`` is reached.

    Returns
    -------
    Z : LowRankMatrix
    trace : UpdateTrace
    """
    config = config or UpdateConfig()
    if not problem.eta > 0:
        raise PreconditionError("orim_update requires eta > 0")
    rng = np.random.default_rng(config.seed)
    cache = RiskCache.from_problem(problem)
    trace = UpdateTrace(cache.f_current)
    n, m = problem.n, problem.m
    X = np.zeros((n, 0))
    Y = np.zeros((m, 0))
    operator = _stacked_operator(problem) if config.y_solver == "lsqr" else None
    trace.termination = "max_rank"
    while X.shape[1] < config.outer_max_rank:
        t0 = time.perf_counter()
        try:
            pair = rank_one_alternating(problem, X, Y, config, cache.f_current, rng,
                                        operator=operator)
        except ConvergenceError:
            trace.termination = "inner_failure"
            break
        f_old = cache.f_current
        if f_old - pair.f < config.outer_tol * abs(pair.f):
            trace.termination = "tolerance"
            trace.rejected_f = pair.f
            break
        incremental_risk(cache, problem, pair.x, pair.y, delta=pair.f - f_old)
        X = np.column_stack([X, pair.x])
        Y = np.column_stack([Y, pair.y])
        trace.records.append(RankRecord(X.shape[1], cache.f_current, pair.iterations,
                                        time.perf_counter() - t0))
    return LowRankMatrix(X, Y), trace
