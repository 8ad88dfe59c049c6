"""Random problem builders shared by the test modules."""

import numpy as np

from orim.model import InverseProblem, PriorModel


def random_prior(rng, n, p=None, mean_scale=1.0):
    """Dense prior with explicit factor ``M = [M_xi mu]`` of full row rank."""
    p = n + 2 if p is None else p
    M_xi = rng.standard_normal((n, p)) / np.sqrt(p)
    mu = mean_scale * rng.standard_normal(n)
    M = np.column_stack([M_xi, mu])
    return PriorModel(mu, M @ M.T, factor=M), M


def random_problem(seed, m, n, eta=0.1, with_P=True, mean_scale=1.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    prior, M = random_prior(rng, n, mean_scale=mean_scale)
    P = 0.3 * rng.standard_normal((n, m)) if with_P else None
    return InverseProblem(A, eta, prior, P), M
