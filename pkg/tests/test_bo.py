import numpy as np
import pytest
from scipy.stats import norm as normal

from oracles import improvement_samples
from stiffctl.bo import (
    ConstantPrior,
    Normalizer,
    SearchSpace,
    StiffnessPrior,
    ehvi_mc,
    pibo_weight,
    suggest,
    true_front_hypervolume,
)
from stiffctl.core import RandomStream
from stiffctl.pareto import pareto_indices


class FixedModel:
    """Predictive moments that do not depend on the candidate."""

    def __init__(self, mean, var):
        self.mean, self.var = np.asarray(mean, float), np.asarray(var, float)

    def predict(self, U):
        n = len(np.atleast_2d(U))
        return np.tile(self.mean, (n, 1)), np.tile(self.var, (n, 1))


def random_front(rng, k):
    P = rng.random((k, 2))
    return P[pareto_indices(P)]


# -- search space ---------------------------------------------------------------


def test_search_space_round_trip_and_bounds():
    sp = SearchSpace(3, 2, 10.0, 1000.0)
    assert sp.d == 6
    u = np.random.default_rng(0).random((50, 6))
    np.testing.assert_allclose(sp.to_unit(sp.from_unit(u)), u, atol=1e-12)
    assert sp.from_unit(np.zeros(6)).tolist() == [10.0] * 6
    assert sp.from_unit(np.ones(6)).tolist() == [1000.0] * 6
    assert sp.from_unit(np.full(6, 0.5))[0] == pytest.approx(100.0)
    assert sp.params(np.full(6, 0.5)).K.shape == (3, 2)


# -- prior ------------------------------------------------------------------------


def test_prior_width_and_floor():
    p = StiffnessPrior(np.array([100.0, 10.0, 1000.0, 505.0]))
    np.testing.assert_allclose(p.sigma, [90.0, 0.99, 0.99, 495.0])
    k = np.array([[200.0, 50.0, 900.0, 505.0]])
    # 40 sigma out on the floored factor: the density underflows but the log stays finite
    assert np.isfinite(p.log_density(k)).all()
    assert p.log_density(np.array([[5.0, 50.0, 900.0, 505.0]]))[0] == -np.inf


def test_log_kernel_is_density_ratio_to_mode():
    rng = np.random.default_rng(4)
    mean = rng.uniform(10, 1000, 3)
    p = StiffnessPrior(mean, scale=123.0)
    k = rng.uniform(10, 1000, (20, 3))
    want = np.log(np.prod(normal.pdf(k, mean, p.sigma), axis=1) / np.prod(normal.pdf(mean, mean, p.sigma)))
    np.testing.assert_allclose(p.log_kernel(k), want, rtol=1e-12)
    assert p.log_kernel(mean) == 0.0
    assert p.log_kernel(np.array([5.0, 50.0, 50.0])) == -np.inf
    assert np.all(ConstantPrior(0.2).log_kernel(k) == 0.0)


def test_prior_samples_stay_in_bounds():
    p = StiffnessPrior(np.array([30.0, 900.0]))
    S = p.sample(np.random.default_rng(0), 5000)
    assert S.min() >= 10.0 and S.max() <= 1000.0
    # truncated at the nearer bound with sigma = 20: the median stays near the mean
    assert abs(np.median(S[:, 0]) - 30.0) < 5.0


@pytest.mark.parametrize("trial", range(20))
def test_pibo_weight_matches_independent_density(trial):
    rng = np.random.default_rng(trial)
    mean = rng.uniform(10, 1000, 4)
    beta = rng.choice([0.5, 1.0, 10.0])
    prior = StiffnessPrior(mean, beta=beta)
    theta = rng.uniform(10, 1000, 4)
    n = int(rng.integers(1, 50))
    sigma = np.maximum(np.minimum(1000 - mean, mean - 10), 0.99)
    ref = np.prod(normal.pdf(theta, mean, sigma)) ** (beta / n)
    assert abs(pibo_weight(theta, prior, n) - ref) <= 1e-12


def test_pibo_weight_examples():
    theta = np.array([120.0, 300.0])
    prior = StiffnessPrior(np.array([100.0, 400.0]), beta=3.0)
    assert pibo_weight(theta, StiffnessPrior(np.array([100.0, 400.0]), beta=0.0), 5) == 1.0
    assert pibo_weight(theta, None, 1) == 1.0
    assert pibo_weight(theta, prior, 3) == pytest.approx(float(prior.density(theta)), rel=1e-14)
    assert abs(pibo_weight(theta, prior, 10**6) - 1.0) < 1e-4
    with pytest.raises(ValueError):
        pibo_weight(theta, prior, 0)


# -- EHVI ----------------------------------------------------------------------------


@pytest.mark.parametrize("trial", range(10))
def test_ehvi_degenerate_variance_equals_deterministic_gain(trial):
    rng = np.random.default_rng(trial)
    front = random_front(rng, int(rng.integers(1, 6)))
    mu = rng.random(2) * 1.2
    got = ehvi_mc(np.zeros(1), FixedModel(mu, [1e-12, 1e-12]), front, (0.0, 0.0), stream=RandomStream(trial, "e"))
    want = improvement_samples(mu[None], front, (0.0, 0.0))[0]
    assert abs(got - want) <= 1e-6


def test_ehvi_vanishes_for_deeply_dominated_mean():
    front = np.array([[0.8, 0.3], [0.4, 0.9]])
    sd = 0.01
    mu = np.array([0.3 - 10 * sd, 0.2 - 10 * sd])
    assert ehvi_mc(np.zeros(1), FixedModel(mu, [sd ** 2] * 2), front, (0.0, 0.0)) < 1e-6


@pytest.mark.parametrize("trial", range(5))
def test_ehvi_matches_high_resolution_monte_carlo(trial):
    rng = np.random.default_rng(100 + trial)
    front = random_front(rng, 2)
    while len(front) < 2:
        front = random_front(rng, 2)
    mu = rng.uniform(0.0, 1.0, 2)
    n_small = 512
    got = ehvi_mc(np.zeros(1), FixedModel(mu, [1.0, 1.0]), front, (0.0, 0.0), n_samples=n_small,
                  stream=RandomStream(trial, "ehvi"))
    Y = mu + rng.standard_normal((10**6, 2))
    g = improvement_samples(Y, front, (0.0, 0.0))
    se = g.std() * np.sqrt(1 / n_small + 1 / len(g))
    assert abs(got - g.mean()) <= 3 * se


def test_ehvi_is_non_negative_and_deterministic():
    rng = np.random.default_rng(0)
    front = random_front(rng, 4)
    m = FixedModel([0.2, 0.1], [0.3, 0.05])
    a = ehvi_mc(np.zeros(1), m, front, (0.0, 0.0), stream=RandomStream(1, "x"))
    b = ehvi_mc(np.zeros(1), m, front, (0.0, 0.0), stream=RandomStream(1, "x"))
    assert a == b and a >= 0.0


# -- suggest --------------------------------------------------------------------------


def toy_data(n=6, seed=0):
    """Two competing objectives over a 2-entry stiffness vector."""
    sp = SearchSpace(1, 2)
    rng = np.random.default_rng(seed)
    U = rng.random((n, 2))
    K = sp.from_unit(U)
    Y = np.stack([-((K[:, 0] - 300.0) / 300.0) ** 2 - ((K[:, 1] - 600.0) / 600.0) ** 2, -K.sum(axis=1)], axis=1)
    norm = Normalizer((-10.0, -2000.0), (0.0, -20.0))
    return sp, U, Y, norm


def test_huge_beta_pulls_suggestion_to_prior_mode():
    sp, U, Y, norm = toy_data()
    prior = StiffnessPrior(np.array([150.0, 75.0]), beta=1e6)
    s = suggest(U, Y, sp, norm, prior, 1, RandomStream(0, "s"))
    assert np.linalg.norm(s.u - sp.to_unit(prior.mode)) <= 0.05


def test_constant_prior_gives_unweighted_suggestion():
    sp, U, Y, norm = toy_data()
    for seed in range(5):
        a = suggest(U, Y, sp, norm, None, 3, RandomStream(seed, "s"))
        b = suggest(U, Y, sp, norm, ConstantPrior(0.37, beta=1.0), 3, RandomStream(seed, "s"))
        np.testing.assert_array_equal(a.u, b.u)


def test_rescaled_prior_leaves_argmax_unchanged():
    sp, U, Y, norm = toy_data(seed=3)
    for seed in range(10):
        p1 = StiffnessPrior(np.array([200.0, 500.0]), beta=1.0)
        p2 = StiffnessPrior(np.array([200.0, 500.0]), beta=1.0, scale=1e7)
        a = suggest(U, Y, sp, norm, p1, 2, RandomStream(seed, "s"))
        b = suggest(U, Y, sp, norm, p2, 2, RandomStream(seed, "s"))
        np.testing.assert_array_equal(a.u, b.u)


def test_beta_zero_equals_no_prior():
    sp, U, Y, norm = toy_data()
    a = suggest(U, Y, sp, norm, StiffnessPrior(np.array([50.0, 50.0]), beta=0.0), 1, RandomStream(2, "s"))
    b = suggest(U, Y, sp, norm, None, 1, RandomStream(2, "s"))
    np.testing.assert_array_equal(a.u, b.u)


def test_suggest_falls_back_when_surrogate_cannot_fit():
    sp, U, Y, norm = toy_data()
    Y = Y.copy()
    Y[0, 0] = np.nan
    prior = StiffnessPrior(np.array([100.0, 200.0]))
    s = suggest(U, Y, sp, norm, prior, 1, RandomStream(0, "s"))
    assert s.fallback
    np.testing.assert_allclose(s.u, sp.to_unit(prior.mode))
    s = suggest(U, Y, sp, norm, None, 1, RandomStream(0, "s"))
    assert s.fallback and np.all(s.u == 0.5)


def test_one_dimensional_problem_reaches_true_front():
    sp = SearchSpace(1, 1)

    def f(U):
        k = sp.from_unit(U)[:, 0]
        return np.stack([-k, -(k - 700.0) ** 2], axis=1)

    norm = Normalizer((-1000.0, -700.0 ** 2), (-10.0, 0.0))
    grid = np.linspace(0, 1, 20001)[:, None]
    true_hv = true_front_hypervolume(f(grid), norm)
    U = np.random.default_rng(0).random((4, 1))
    for n in range(1, 31):
        s = suggest(U, f(U), sp, norm, None, n, RandomStream(n, "1d"))
        U = np.vstack([U, s.u[None]])
    assert true_front_hypervolume(f(U), norm) >= 0.95 * true_hv
