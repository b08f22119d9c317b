import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from hamcmc.analysis import (
    acceptance_from_mu,
    autocorrelation,
    empirical_delta_stats,
    equilibrium_acceptance,
    integrated_autocorrelation,
    optimal_acceptance,
    scaling_cost,
    summarize,
    tune_scale,
)
from hamcmc.model import CanonicalDensity, KineticSpec
from hamcmc.samplers import TrajectoryPlan, run_chain
from hamcmc.targets import ReplicatedTarget, make_figure_targets


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 50.0))
def test_acceptance_from_mu_matches_normal_cdf(mu):
    assert acceptance_from_mu(mu) == pytest.approx(2 * norm.cdf(-math.sqrt(mu / 2)), abs=1e-14)


def test_acceptance_from_mu_edges():
    assert acceptance_from_mu(0.0) == 1.0
    with pytest.raises(ValueError):
        acceptance_from_mu(-1.0)


@pytest.mark.parametrize("method, expected", [("rwm", 0.23), ("hmc", 0.65), ("lmc", 0.57)])
def test_optimal_acceptance(method, expected):
    mu, a = optimal_acceptance(method)
    assert a == pytest.approx(expected, abs=0.01)
    assert a == pytest.approx(acceptance_from_mu(mu))


@pytest.mark.parametrize("start", [1e-3, 0.1, 1.0, 10.0, 50.0])
def test_optimal_acceptance_does_not_depend_on_start(start):
    assert optimal_acceptance("hmc", start=start)[1] == pytest.approx(optimal_acceptance("hmc")[1], abs=1e-5)


def test_optimal_acceptance_rejects_bad_input():
    with pytest.raises(ValueError):
        optimal_acceptance("nuts")
    with pytest.raises(ValueError):
        optimal_acceptance("hmc", start=0.0)


def test_optimal_acceptance_is_a_minimum_of_cost():
    mu, _ = optimal_acceptance("hmc")
    best = scaling_cost(mu, "hmc").cost
    assert scaling_cost(0.8 * mu, "hmc").cost > best
    assert scaling_cost(1.25 * mu, "hmc").cost > best


def test_scaling_cost_edges():
    assert scaling_cost(0.0, "rwm").cost == math.inf
    with pytest.raises(ValueError):
        scaling_cost(1.0, "nuts")


def test_autocorrelation_of_alternating_series():
    rho = autocorrelation(np.tile([1.0, -1.0], 50))
    assert rho[0] == pytest.approx(1.0)
    assert rho[1] == pytest.approx(-0.99)


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = rng.standard_normal() / math.sqrt(1 - phi**2)
    noise = rng.standard_normal(n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + noise[i]
    return x


@pytest.mark.parametrize("phi", [0.0, 0.5, 0.9])
def test_integrated_autocorrelation_of_ar1(phi):
    tau = integrated_autocorrelation(_ar1(phi, 100_000, 1))
    assert tau == pytest.approx((1 + phi) / (1 - phi), rel=0.1)


def test_integrated_autocorrelation_antithetic_series_below_one():
    assert integrated_autocorrelation(_ar1(-0.5, 50_000, 2)) < 1.0


@pytest.mark.parametrize("series", [np.ones(500), np.arange(50.0), np.zeros((10, 10))])
def test_integrated_autocorrelation_rejects_bad_series(series):
    with pytest.raises(ValueError):
        integrated_autocorrelation(series)


def test_empirical_delta_stats_identity_at_equilibrium():
    target = make_figure_targets("gauss2d_95")
    canonical = CanonicalDensity(target, KineticSpec.unit(2))
    start = target.draw(np.random.default_rng(0))
    chain = run_chain(start, canonical, TrajectoryPlan((0.2, 0.3), (10, 20)), "hmc", 4000, 3)
    stats = empirical_delta_stats(chain)
    assert stats["exp_neg_mean"] == pytest.approx(1.0, abs=0.05)
    assert stats["mean"] > 0
    assert stats["n"] == 4000 and stats["n_nonfinite"] == 0


def test_empirical_delta_stats_array_input():
    stats = empirical_delta_stats(np.array([0.5, -0.5, np.inf]))
    assert stats["mean"] == 0.0
    assert stats["n_nonfinite"] == 1
    with pytest.raises(ValueError):
        empirical_delta_stats(np.array([]))
    with pytest.raises(ValueError):
        empirical_delta_stats(np.array([np.inf]))


def test_summarize_discards_burn_in():
    canonical = CanonicalDensity(make_figure_targets("gauss1d"), KineticSpec.unit(1))
    chain = run_chain([5.0], canonical, TrajectoryPlan((0.5, 0.7), (3, 5)), "hmc", 2000, 4)
    report = summarize(chain, burn_in=200)
    assert report.n_samples == 1800
    assert abs(report.means[0]) < 0.15
    assert report.sds[0] == pytest.approx(1.0, abs=0.1)
    assert report.tau[0] > 0 and report.ess[0] <= 1800
    assert report.gradient_evals == chain.gradient_evals[-1]
    assert report.rejection_rate == pytest.approx(1 - chain.acceptance[200:].mean())


def test_summarize_short_or_stuck_chain_gives_nan_tau():
    canonical = CanonicalDensity(make_figure_targets("gauss1d"), KineticSpec.unit(1))
    chain = run_chain([0.0], canonical, TrajectoryPlan.fixed(0.5, 3), "hmc", 50, 5)
    assert np.isnan(summarize(chain).tau[0])
    stuck = run_chain([1.0], canonical, TrajectoryPlan.fixed(2.5, 100), "hmc", 150, 5)
    report = summarize(stuck)
    assert np.isnan(report.tau[0]) and report.divergences == 150
    with pytest.raises(ValueError):
        summarize(chain, burn_in=50)


def test_equilibrium_acceptance_limits():
    target = ReplicatedTarget.gaussian(10)
    rng = np.random.default_rng(6)
    q = target.draw(rng, 500)
    noise = rng.standard_normal(q.shape)
    assert equilibrium_acceptance(target, "hmc", 1e-4, q, noise, 3) == pytest.approx(1.0, abs=1e-6)
    assert equilibrium_acceptance(target, "rwm", 1e-6, q, noise) == pytest.approx(1.0, abs=1e-4)
    assert equilibrium_acceptance(target, "rwm", 5.0, q, noise) < 0.05
    with pytest.raises(ValueError):
        equilibrium_acceptance(target, "nuts", 0.1, q, noise)


@pytest.mark.parametrize("method", ["hmc", "rwm", "lmc"])
def test_tune_scale_hits_target_acceptance(method):
    target = ReplicatedTarget.gaussian(32)
    scale, acc = tune_scale(target, method, 0.6, np.random.default_rng(7), n_draws=1000)
    assert acc == pytest.approx(0.6, abs=1e-3)
    assert scale > 0


def test_tune_scale_rejects_bad_target_acceptance():
    with pytest.raises(ValueError):
        tune_scale(ReplicatedTarget.gaussian(4), "hmc", 1.0, np.random.default_rng(0))
