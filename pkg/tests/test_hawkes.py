import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdin.errors import FutureEventInHistory, InfeasibleConfig, NonConvergence, ValidationError
from tdin.hawkes import (FitOptions, HawkesIntensity, HawkesParams, fit_hawkes_mle,
                         hawkes_intensity, hawkes_intensity_naive, hawkes_nll, hawkes_nll_grad,
                         simulate_hawkes)
from tdin.ppcore import EventSequence, expected_next_time, log_likelihood


def seq(times, window):
    return EventSequence(np.asarray(times, dtype=float), window)


def random_sequence(rng, n, span):
    return seq(np.unique(rng.uniform(0.0, span, n)), (0.0, span))


@pytest.fixture(scope="module")
def stationary_sample():
    return simulate_hawkes(HawkesParams(0.2, 0.5, 1.0), (0.0, 14000.0), seed=5)


class TestParams:
    @pytest.mark.parametrize("mu,a,beta", [(-0.1, 0.5, 1.0), (0.1, -0.5, 1.0), (0.1, 0.5, 0.0)])
    def test_invalid(self, mu, a, beta):
        with pytest.raises(ValidationError):
            HawkesParams(mu, a, beta)

    def test_json(self):
        p = HawkesParams(0.2, 0.5, 1.5)
        assert HawkesParams.from_json(p.to_json()) == p

    def test_non_stationary_simulation(self):
        with pytest.raises(InfeasibleConfig):
            simulate_hawkes(HawkesParams(0.2, 1.5, 1.0), (0.0, 10.0), seed=0)


class TestIntensity:
    def test_pure_poisson(self):
        assert hawkes_intensity(HawkesParams(1.0, 0.0, 1.0), [0.5, 2.0], 5.0) == 1.0

    def test_single_event(self):
        value = hawkes_intensity(HawkesParams(0.5, 0.8, 1.0), [1.0], 2.0)
        assert value == pytest.approx(0.5 + 0.8 * math.exp(-1), abs=1e-12)
        assert value == pytest.approx(0.7943, abs=1e-4)

    def test_empty_history(self):
        assert hawkes_intensity(HawkesParams(0.3, 0.8, 1.0), [], 1.0) == 0.3

    def test_future_event(self):
        with pytest.raises(FutureEventInHistory):
            hawkes_intensity(HawkesParams(0.3, 0.8, 1.0), [1.0, 2.0], 1.5)

    def test_recursion_matches_naive(self):
        rng = np.random.default_rng(0)
        p = HawkesParams(0.3, 0.9, 1.7)
        for _ in range(50):
            times = np.sort(rng.uniform(0, 20, rng.integers(0, 60)))
            t = 20.0 + rng.exponential()
            assert hawkes_intensity(p, times, t) == pytest.approx(
                hawkes_intensity_naive(p, times, t), abs=1e-10)

    def test_bound_dominates(self):
        p = HawkesParams(0.3, 0.9, 1.7)
        hist = seq([1.0, 1.5], (0.0, 10.0))
        lam = HawkesIntensity(p)
        grid = np.linspace(1.6, 9.0, 50)
        assert np.all(lam(hist, grid) <= lam.bound(hist, 1.6) + 1e-12)


class TestNLL:
    def test_poisson_reduction(self):
        nll = hawkes_nll(HawkesParams(2.0, 0.0, 1.0), seq([0.3, 0.7], (0.0, 1.0)))
        assert nll == pytest.approx(2 - 2 * math.log(2), abs=1e-12)

    def test_empty(self):
        assert hawkes_nll(HawkesParams(1.0, 0.5, 1.0), seq([], (0.0, 1.0))) == pytest.approx(1.0)

    def test_matches_generic_path(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = HawkesParams(rng.uniform(0.05, 2), rng.uniform(0, 2), rng.uniform(0.2, 3))
            s = random_sequence(rng, int(rng.integers(0, 25)), 10.0)
            generic = -log_likelihood(s, HawkesIntensity(p))
            assert hawkes_nll(p, s) == pytest.approx(generic, abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(mu=st.floats(0.05, 2.0), a=st.floats(0.05, 2.0), beta=st.floats(0.2, 3.0),
           seed=st.integers(0, 10_000))
    def test_gradient_finite_difference(self, mu, a, beta, seed):
        s = random_sequence(np.random.default_rng(seed), 20, 10.0)
        x = np.array([mu, a, beta])
        g = hawkes_nll_grad(HawkesParams(*x), s)
        eps = 1e-5
        fd = np.empty(3)
        for i in range(3):
            up, dn = x.copy(), x.copy()
            up[i] += eps
            dn[i] -= eps
            fd[i] = (hawkes_nll(HawkesParams(*up), s) - hawkes_nll(HawkesParams(*dn), s)) / (2 * eps)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
        assert np.all(rel < 1e-4)


class TestSimulation:
    def test_stationary_rate(self):
        # mean rate 0.4 with cluster-inflated variance mu T / (1 - n)^3
        p, span = HawkesParams(0.2, 0.5, 1.0), 2000.0
        counts = simulate_hawkes(p, (0.0, span), seed=9)
        sd = math.sqrt(p.mu * span / (1 - p.branching_ratio) ** 3) / span
        assert abs(len(counts) / span - 0.4) < 3 * sd

    def test_seeded(self):
        p = HawkesParams(0.5, 0.5, 1.0)
        a, b = simulate_hawkes(p, (0.0, 50.0), seed=4), simulate_hawkes(p, (0.0, 50.0), seed=4)
        np.testing.assert_array_equal(a.times, b.times)

    def test_true_parameters_beat_perturbed(self, stationary_sample):
        s = EventSequence(stationary_sample.times[stationary_sample.times < 5000.0], (0.0, 5000.0))
        assert len(s) >= 2000
        truth = HawkesParams(0.2, 0.5, 1.0)
        base = hawkes_nll(truth, s)
        for scale in (0.5, 1.5):
            for field in ("mu", "a", "beta"):
                kw = {"mu": 0.2, "a": 0.5, "beta": 1.0}
                kw[field] *= scale
                assert hawkes_nll(HawkesParams(**kw), s) > base


class TestFit:
    def test_parameter_recovery(self, stationary_sample):
        assert len(stationary_sample) >= 5000
        fit = fit_hawkes_mle(stationary_sample, HawkesParams(0.5, 0.2, 2.0))
        for got, want in zip((fit.mu, fit.a, fit.beta), (0.2, 0.5, 1.0)):
            assert abs(got - want) / want < 0.10

    def test_nested_poisson(self):
        s = simulate_hawkes(HawkesParams(0.5, 0.0, 1.0), (0.0, 2000.0), seed=2)
        fit = fit_hawkes_mle(s, HawkesParams(0.4, 0.3, 1.0))
        assert fit.a < 0.05

    def test_descent_from_truth(self, stationary_sample):
        truth = HawkesParams(0.2, 0.5, 1.0)
        fit = fit_hawkes_mle(stationary_sample, truth, FitOptions(max_iter=300))
        assert hawkes_nll(fit, stationary_sample) <= hawkes_nll(truth, stationary_sample)

    def test_too_few_events(self):
        with pytest.raises(ValidationError):
            fit_hawkes_mle(seq([1.0, 2.0], (0.0, 3.0)), HawkesParams(0.5, 0.1, 1.0))

    def test_strict_non_convergence(self, stationary_sample):
        with pytest.raises(NonConvergence) as info:
            fit_hawkes_mle(stationary_sample, HawkesParams(0.5, 0.2, 2.0),
                           FitOptions(max_iter=3, strict=True))
        assert isinstance(info.value.best, HawkesParams)


def first_event_monte_carlo(p, t_c, n, seed):
    """Vectorised thinning for the first event after an event at t_c."""
    rng = np.random.default_rng(seed)
    bound = p.mu + p.a
    t = np.full(n, t_c)
    done = np.zeros(n, dtype=bool)
    while not done.all():
        live = ~done
        t[live] += rng.exponential(1.0 / bound, live.sum())
        lam = p.mu + p.a * np.exp(-p.beta * (t[live] - t_c))
        done[live] = rng.uniform(0.0, bound, live.sum()) <= lam
    return t


class TestExpectedNextTime:
    def test_monte_carlo(self):
        p = HawkesParams(0.5, 0.8, 1.0)
        t_c, horizon = 1.0, 60.0
        hist = seq([t_c], (0.0, horizon))
        pred = expected_next_time(HawkesIntensity(p), t_c, horizon, history=hist)
        draws = np.minimum(first_event_monte_carlo(p, t_c, 100_000, seed=0), horizon)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(pred - draws.mean()) < 2 * se
