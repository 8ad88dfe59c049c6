import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_problem
from orim.errors import PreconditionError
from orim.model import (
    InverseProblem,
    LowRankMatrix,
    PriorModel,
    identity_prior,
    prior_from_mean_cov,
    prior_from_mean_diag,
    zero_initial_inverse,
)
from orim.risk import (
    RiskCache,
    bayes_risk,
    factored_risk,
    incremental_risk,
    monte_carlo_risk,
    rank_one_delta,
    risk_of_zero,
)

seeds = st.integers(0, 2**32 - 1)


# priors ---------------------------------------------------------------------
def test_prior_zero_mean_identity_cov():
    pr = prior_from_mean_cov(np.zeros(3), np.eye(3))
    assert np.allclose(pr.dense(), np.eye(3))


def test_prior_mean_e1():
    e1 = np.array([1.0, 0, 0])
    assert np.allclose(prior_from_mean_cov(e1, np.eye(3)).dense(), np.eye(3) + np.outer(e1, e1))


def test_prior_diag_of_mean():
    mu = np.array([0.2, 0.5, 0.9])
    pr = prior_from_mean_cov(mu, np.diag(mu))
    assert np.allclose(pr.dense(), np.diag(mu) + np.outer(mu, mu))
    # the matrix-free variant represents the same second moment
    assert np.allclose(prior_from_mean_diag(mu, mu).operator.to_dense(), pr.dense())


def test_prior_rejects_rank_deficiency():
    with pytest.raises(PreconditionError):
        prior_from_mean_cov(np.zeros(2), np.diag([1.0, 0.0]))


def test_prior_rejects_indefinite():
    with pytest.raises(PreconditionError):
        prior_from_mean_cov(np.zeros(2), np.diag([1.0, -1.0]))


def test_prior_factor_consistency():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 7))
    pr = PriorModel(np.zeros(5), M @ M.T, factor=M)
    F = pr.factor_operator.to_dense()
    S = pr.dense()
    assert np.linalg.norm(F @ F.T - S) <= 1e-10 * np.linalg.norm(S)
    lam = np.linalg.eigvalsh(S)
    assert lam.min() >= -1e-12 * lam.max()


def test_diag_prior_factor_matches():
    mu, d = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.0, 2.0])
    pr = prior_from_mean_diag(mu, d)
    F = pr.factor_operator.to_dense()
    assert np.allclose(F @ F.T, np.diag(d) + np.outer(mu, mu))


def test_zero_initial_inverse():
    P = zero_initial_inverse(4, 6)
    assert np.array_equal(P.apply(np.ones(6)), np.zeros(4))
    assert np.array_equal(P.apply_transpose(np.ones(4)), np.zeros(6))


def test_problem_validation():
    with pytest.raises(PreconditionError):
        InverseProblem(np.eye(3), -1.0, identity_prior(3))
    with pytest.raises(PreconditionError):
        InverseProblem(np.eye(3), 0.1, identity_prior(4))
    with pytest.raises(PreconditionError):
        InverseProblem(np.eye(3), 0.1, identity_prior(3), np.zeros((2, 3)))


def test_problem_flags_wide_regime():
    with pytest.warns(UserWarning):
        InverseProblem(np.ones((2, 3)), 0.1, identity_prior(3))


def test_low_rank_storage_bound():
    Z = LowRankMatrix(np.zeros((10, 3)), np.zeros((6, 3)))
    assert Z.stores_compactly()  # 3 <= 60/16
    assert not LowRankMatrix(np.zeros((10, 4)), np.zeros((2, 4))).stores_compactly()


# risk -----------------------------------------------------------------------
def test_risk_identity_prior_no_noise():
    pb = InverseProblem(np.eye(4), 0.0, identity_prior(4))
    assert bayes_risk(pb, np.zeros((4, 4))) == pytest.approx(4.0)


def test_risk_exact_inverse_is_zero():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    pb = InverseProblem(A, 0.0, identity_prior(5))
    assert bayes_risk(pb, np.linalg.inv(A)) == pytest.approx(0.0, abs=1e-10)


def test_risk_of_zero_cases():
    pb = InverseProblem(np.ones((3, 3)), 0.7, identity_prior(3))
    assert risk_of_zero(pb) == pytest.approx(3.0)
    rng = np.random.default_rng(2)
    L = rng.standard_normal((3, 3))
    S = L @ L.T + np.eye(3)
    pb = InverseProblem(np.ones((3, 3)), 0.7, PriorModel(np.zeros(3), S))
    assert risk_of_zero(pb) == pytest.approx(np.trace(S))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 30), st.integers(2, 20))
def test_three_evaluation_routes_agree(seed, m, n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pb, M = random_problem(seed, m, n)
    rng = np.random.default_rng(seed + 7)
    r = min(3, n)
    X, _ = np.linalg.qr(rng.standard_normal((n, r)))
    Y = rng.standard_normal((m, r))
    ref = factored_risk(pb, LowRankMatrix(X, Y), M)
    assert abs(bayes_risk(pb, LowRankMatrix(X, Y)) - ref) <= 1e-10 * ref
    assert abs(bayes_risk(pb, X @ Y.T) - ref) <= 1e-10 * ref
    cache = RiskCache.from_problem(pb)
    assert abs(cache.f_current - factored_risk(pb, None, M)) <= 1e-10 * cache.f_current
    for j in range(r):
        f = incremental_risk(cache, pb, X[:, j], Y[:, j])
    assert abs(f - ref) <= 1e-10 * ref


def test_risk_of_zero_operator_route():
    # an initial inverse given only as an operator goes through probing
    pb, M = random_problem(3, 9, 7)
    from orim.linalg import LinearOperator
    P = pb.initial_dense
    op = LinearOperator(P.shape, lambda v: P @ v, lambda v: P.T @ v)
    pb2 = InverseProblem(pb.forward, pb.eta, pb.prior, op)
    assert risk_of_zero(pb2) == pytest.approx(risk_of_zero(pb), rel=1e-12)
    assert risk_of_zero(pb) == pytest.approx(factored_risk(pb, None, M), rel=1e-12)


def test_zero_initial_matches_p0_objective():
    pb, M = random_problem(4, 8, 6, with_P=False)
    Z = np.random.default_rng(5).standard_normal((6, 8))
    A = pb.forward_dense
    direct = np.linalg.norm(Z @ A @ M - M) ** 2 + pb.eta**2 * np.linalg.norm(Z) ** 2
    assert bayes_risk(pb, Z) == pytest.approx(direct, rel=1e-10)


def test_identity_prior_objective():
    # zero mean, identity covariance: ||Z A - I||^2 + eta^2 ||Z||^2
    rng = np.random.default_rng(6)
    A = rng.standard_normal((7, 5))
    pb = InverseProblem(A, 0.3, identity_prior(5))
    for _ in range(5):
        Z = rng.standard_normal((5, 7))
        ref = np.linalg.norm(Z @ A - np.eye(5)) ** 2 + 0.09 * np.linalg.norm(Z) ** 2
        assert bayes_risk(pb, Z) == pytest.approx(ref, rel=1e-10)


def test_refactorization_invariance():
    pb, _ = random_problem(8, 10, 6)
    rng = np.random.default_rng(9)
    X, Y = rng.standard_normal((6, 3)), rng.standard_normal((10, 3))
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    f1 = bayes_risk(pb, LowRankMatrix(X, Y))
    f2 = bayes_risk(pb, LowRankMatrix(X @ Q, Y @ Q))
    assert f1 == pytest.approx(f2, rel=1e-12)


def test_incremental_zero_y_keeps_f():
    pb, _ = random_problem(10, 6, 5)
    cache = RiskCache.from_problem(pb)
    f0 = cache.f_current
    x = np.eye(5)[0]
    assert incremental_risk(cache, pb, x, np.zeros(6)) == pytest.approx(f0)


def test_incremental_first_step_formula():
    pb, _ = random_problem(11, 6, 5, with_P=False)
    cache = RiskCache.from_problem(pb)
    x = np.eye(5)[2]
    y = np.arange(6.0)
    expected = cache.f_current + y @ pb.apply_gram(y) - 2 * y @ pb.apply_AS(x)
    assert incremental_risk(cache, pb, x, y) == pytest.approx(expected, rel=1e-12)


def test_incremental_ten_steps():
    pb, M = random_problem(12, 12, 10)
    rng = np.random.default_rng(13)
    X, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    Y = rng.standard_normal((12, 10))
    cache = RiskCache.from_problem(pb)
    for j in range(10):
        f = incremental_risk(cache, pb, X[:, j], Y[:, j])
        ref = factored_risk(pb, LowRankMatrix(X[:, : j + 1], Y[:, : j + 1]), M)
        assert abs(f - ref) <= 1e-10 * ref


def test_incremental_preconditions():
    pb, _ = random_problem(14, 6, 5)
    cache = RiskCache.from_problem(pb)
    with pytest.raises(PreconditionError):
        incremental_risk(cache, pb, 2 * np.eye(5)[0], np.ones(6))
    incremental_risk(cache, pb, np.eye(5)[0], np.ones(6))
    with pytest.raises(PreconditionError):
        incremental_risk(cache, pb, np.eye(5)[0], np.ones(6))


def test_rank_one_delta_matches_difference():
    pb, _ = random_problem(15, 7, 5)
    x = np.eye(5)[1]
    y = np.linspace(-1, 1, 7)
    d = rank_one_delta(pb, x, y)
    assert d == pytest.approx(bayes_risk(pb, np.outer(x, y)) - risk_of_zero(pb), rel=1e-10)


# monte carlo oracle -------------------------------------------------------------
def test_mc_exact_inverse_noiseless():
    rng = np.random.default_rng(16)
    A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    pb = InverseProblem(A, 0.0, identity_prior(4))
    assert monte_carlo_risk(pb, np.linalg.inv(A), samples=200) == pytest.approx(0, abs=1e-18)


def test_mc_zero_identity():
    pb = InverseProblem(np.eye(6), 0.0, identity_prior(6))
    est, se = monte_carlo_risk(pb, None, samples=20_000, seed=1, return_stderr=True)
    assert abs(est - 6.0) <= 4 * se


def test_mc_within_three_standard_errors():
    pb, _ = random_problem(17, 8, 6)
    Z = 0.1 * np.random.default_rng(18).standard_normal((6, 8))
    exact = bayes_risk(pb, Z)
    est, se = monte_carlo_risk(pb, Z, samples=10_000, seed=3, return_stderr=True)
    assert abs(est - exact) <= 3 * se


def test_mc_error_shrinks_with_samples():
    pb, _ = random_problem(19, 8, 6)
    exact = risk_of_zero(pb)
    errs = {}
    for N in (500, 50_000):
        e = [abs(monte_carlo_risk(pb, None, samples=N, seed=s) - exact) for s in range(8)]
        errs[N] = np.sqrt(np.mean(np.square(e)))
    # 100x samples should cut the rms error roughly 10x
    assert errs[50_000] < errs[500] / 4
