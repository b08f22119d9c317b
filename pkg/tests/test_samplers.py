import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamcmc.acceptance import moment_test
from hamcmc.integrators import SplitScheme, leapfrog_trajectory
from hamcmc.model import CanonicalDensity, KineticSpec, PhaseState, TargetDensity
from hamcmc.samplers import (
    Reservoir,
    Shortcut,
    TrajectoryPlan,
    hmc_proposal,
    lmc_acceptance_mh,
    lmc_acceptance_phase,
    partial_refresh,
    run_chain,
    rwm_accept_probability,
    rwm_iteration,
    shortcut_trajectory,
)
from hamcmc.targets import GaussianTarget, make_figure_targets


def unit(target):
    return CanonicalDensity(target, KineticSpec.unit(target.dim))


GAUSS1D = unit(make_figure_targets("gauss1d"))
GAUSS2D = unit(make_figure_targets("gauss2d_95"))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(eps_range=(0.0, 0.1)),
        dict(eps_range=(0.2, 0.1)),
        dict(eps_range=(0.1, 0.1), steps_range=(0, 3)),
        dict(eps_range=(0.1, 0.1), steps_range=(4, 3)),
        dict(eps_range=(0.1, 0.1), window=0),
        dict(eps_range=(0.1, 0.1), alpha_temp=0.0),
        dict(eps_range=(0.1, 0.1), alpha_ref=1.5),
        dict(eps_range=(0.1, 0.1), window=2, window_weights=[1.0]),
        dict(eps_range=(0.1, 0.1), window=2, window_weights=[1.0, 0.0]),
    ],
)
def test_plan_validation(kwargs):
    with pytest.raises(ValueError):
        TrajectoryPlan(**kwargs)


def test_fixed_plan_consumes_no_random_numbers():
    rng = np.random.default_rng(1)
    before = rng.bit_generator.state
    assert TrajectoryPlan.fixed(0.2, 7).draw(rng) == (0.2, 7)
    assert rng.bit_generator.state == before


def test_plan_draws_within_ranges():
    plan = TrajectoryPlan((0.1, 0.2), (3, 5))
    rng = np.random.default_rng(2)
    draws = [plan.draw(rng) for _ in range(500)]
    eps = np.array([d[0] for d in draws])
    steps = {d[1] for d in draws}
    assert eps.min() >= 0.1 and eps.max() <= 0.2
    assert steps == {3, 4, 5}


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(mode="terminate"),
        dict(mode="terminate", threshold=0.0),
        dict(mode="reverse", lower=0.1),
        dict(mode="reverse", lower=0.5, upper=0.1),
        dict(mode="reverse", group_size=0, lower=0.1, upper=0.5),
        dict(mode="sideways", threshold=1.0),
    ],
)
def test_shortcut_validation(kwargs):
    with pytest.raises(ValueError):
        Shortcut(**kwargs)


def _same_chain(a, b):
    return np.array_equal(a.positions, b.positions) and np.array_equal(a.accepted, b.accepted)


def test_langevin_equals_single_step_hmc():
    plan = TrajectoryPlan.fixed(0.8, 1)
    assert _same_chain(run_chain([0.5, 0.5], GAUSS2D, plan, "lmc", 200, 4),
                       run_chain([0.5, 0.5], GAUSS2D, plan, "hmc", 200, 4))


def test_ghmc_with_full_refresh_equals_hmc():
    plan = TrajectoryPlan((0.1, 0.3), (3, 8), alpha_ref=0.0)
    assert _same_chain(run_chain([0.5, 0.5], GAUSS2D, plan, "ghmc", 200, 5),
                       run_chain([0.5, 0.5], GAUSS2D, plan, "hmc", 200, 5))


def test_windowed_width_one_equals_hmc():
    plan = TrajectoryPlan((0.1, 0.3), (3, 8))
    assert _same_chain(run_chain([0.5, 0.5], GAUSS2D, plan, "windowed", 200, 6),
                       run_chain([0.5, 0.5], GAUSS2D, plan, "hmc", 200, 6))


def test_tempered_alpha_one_equals_hmc():
    plan = TrajectoryPlan((0.1, 0.3), (3, 8))
    assert _same_chain(run_chain([0.5, 0.5], GAUSS2D, plan, "tempered", 200, 7),
                       run_chain([0.5, 0.5], GAUSS2D, plan, "hmc", 200, 7))


def test_ghmc_persistent_momentum_changes_chain():
    base = TrajectoryPlan.fixed(0.2, 2, alpha_ref=0.0)
    persistent = TrajectoryPlan.fixed(0.2, 2, alpha_ref=0.95)
    assert not _same_chain(run_chain([0.5, 0.5], GAUSS2D, base, "ghmc", 50, 8),
                           run_chain([0.5, 0.5], GAUSS2D, persistent, "ghmc", 50, 8))


def test_chain_is_deterministic_and_records_costs():
    plan = TrajectoryPlan((0.1, 0.3), (3, 8))
    a = run_chain([0.0, 0.0], GAUSS2D, plan, "hmc", 100, 11)
    b = run_chain([0.0, 0.0], GAUSS2D, plan, "hmc", 100, 11)
    assert _same_chain(a, b)
    assert len(a) == 100
    assert np.all(np.diff(a.gradient_evals) >= 4)
    assert a.kernel == "hmc"
    assert 0.0 <= a.rejection_rate <= 1.0


@pytest.mark.parametrize("kwargs", [dict(n_iterations=0), dict(initial_q=[0.0])])
def test_run_chain_validation(kwargs):
    args = dict(initial_q=[0.0, 0.0], canonical=GAUSS2D, plan=TrajectoryPlan.fixed(0.1, 2),
                kernel="hmc", n_iterations=5, seed=0)
    args.update(kwargs)
    with pytest.raises(ValueError):
        run_chain(**args)


def test_unknown_kernel():
    with pytest.raises(ValueError):
        run_chain([0.0], GAUSS1D, TrajectoryPlan.fixed(0.1, 2), "nuts", 5, 0)


def test_hmc_proposal_returns_flipped_endpoint():
    state = PhaseState([-1.5, -1.55], [-1.0, 1.0])
    proposal, prob = hmc_proposal(state, GAUSS2D, 0.25, 25)
    traj = leapfrog_trajectory(state, GAUSS2D.target, GAUSS2D.kinetic, 0.25, 25)
    np.testing.assert_array_equal(proposal.p, -traj.state.p)
    assert prob == pytest.approx(math.exp(-traj.delta_h))


def test_divergent_proposals_are_rejected():
    chain = run_chain([1.0], GAUSS1D, TrajectoryPlan.fixed(2.5, 100), "hmc", 20, 3)
    assert chain.divergence_count == 20
    assert not chain.accepted.any()
    assert np.all(chain.positions == 1.0)


def test_rwm_accept_probability():
    target = make_figure_targets("gauss1d")
    assert rwm_accept_probability(target, [0.0], [1.0]) == pytest.approx(math.exp(-0.5))
    assert rwm_accept_probability(target, [1.0], [0.0]) == 1.0


def test_rwm_iteration_validation_and_moves():
    target = make_figure_targets("gauss1d")
    with pytest.raises(ValueError):
        rwm_iteration([0.0], target, (0.0, 1.0), np.random.default_rng(0))
    out = rwm_iteration([0.0], target, (0.5, 0.5), np.random.default_rng(0))
    assert out.gradient_evals == 0


def test_rwm_block_counts_fraction_of_updates():
    plan = TrajectoryPlan((0.5, 0.5), (10, 10))
    chain = run_chain([0.0], GAUSS1D, plan, "rwm", 50, 2)
    assert set(np.round(chain.acceptance * 10)) <= set(range(11))
    assert 0.0 < chain.acceptance.mean() < 1.0
    assert chain.gradient_evals[-1] == 0


def test_partial_refresh_preserves_momentum_distribution():
    kinetic = KineticSpec([4.0])
    rng = np.random.default_rng(3)
    p = 2.0 * rng.standard_normal((20_000, 1))
    out = np.array([partial_refresh(row, 0.9, kinetic, rng) for row in p])
    assert out.var() == pytest.approx(4.0, rel=0.05)
    with pytest.raises(ValueError):
        partial_refresh(p[0], 1.1, kinetic, rng)


def test_partial_refresh_extremes():
    rng = np.random.default_rng(0)
    p = np.array([0.3, -0.2])
    np.testing.assert_array_equal(partial_refresh(p, 1.0, KineticSpec.unit(2), rng), p)
    np.testing.assert_array_equal(partial_refresh(p, -1.0, KineticSpec.unit(2), rng), -p)


@settings(max_examples=50, deadline=None)
@given(
    q=st.lists(st.floats(-2, 2), min_size=2, max_size=2),
    p=st.lists(st.floats(-2, 2), min_size=2, max_size=2),
    masses=st.lists(st.floats(0.5, 2.0), min_size=2, max_size=2),
    eps=st.floats(0.05, 1.0),
)
def test_langevin_acceptance_forms_agree(q, p, masses, eps):
    target = make_figure_targets("mixture_fig9")
    kinetic = KineticSpec(masses)
    q_star, phase = lmc_acceptance_phase(target, kinetic, q, p, eps)
    assert lmc_acceptance_mh(target, kinetic, q, q_star, eps) == pytest.approx(phase, abs=1e-12)


def test_reservoir_selects_in_proportion_to_weights():
    rng = np.random.default_rng(4)
    weights = [1.0, 2.0, 3.0, 4.0]
    counts = np.zeros(4)
    for _ in range(20_000):
        res = Reservoir()
        for i, w in enumerate(weights):
            res.add(i, math.log(w), rng)
        counts[res.item] += 1
    np.testing.assert_allclose(counts / counts.sum(), np.array(weights) / 10, atol=0.015)


def test_reservoir_total_and_zero_weights():
    res = Reservoir()
    res.add("a", -np.inf, None)
    assert res.item is None and res.count == 0
    res.add("a", math.log(2.0), None)
    res.add("b", math.log(3.0), None)
    assert res.item == "a"
    assert res.log_total == pytest.approx(math.log(5.0))


def test_windowed_rejects_too_short_trajectories():
    plan = TrajectoryPlan.fixed(0.2, 2, window=5)
    with pytest.raises(ValueError):
        run_chain([0.0], GAUSS1D, plan, "windowed", 1, 0)


def test_windowed_acceptance_beats_hmc_at_large_stepsize():
    target = make_figure_targets("gauss2d_95")
    plan_h = TrajectoryPlan((0.4, 0.45), (10, 12))
    plan_w = TrajectoryPlan((0.4, 0.45), (10, 12), window=4)
    hmc = run_chain([0.0, 0.0], unit(target), plan_h, "hmc", 1000, 12)
    windowed = run_chain([0.0, 0.0], unit(target), plan_w, "windowed", 1000, 12)
    assert windowed.accept_prob.mean() > hmc.accept_prob.mean()


def test_terminate_shortcut_aborts_on_large_step_error():
    target = make_figure_targets("gauss1d")
    traj = shortcut_trajectory(PhaseState([1.0], [1.0]), target, KineticSpec.unit(1), 1.9, 20,
                               Shortcut("terminate", threshold=0.05))
    assert traj.aborted
    assert traj.steps_taken < 20
    calm = shortcut_trajectory(PhaseState([1.0], [1.0]), target, KineticSpec.unit(1), 0.05, 20,
                               Shortcut("terminate", threshold=0.05))
    assert not calm.aborted and calm.steps_taken == 20


def test_reverse_shortcut_rounds_steps_up_and_is_reversible():
    target = make_figure_targets("gauss1d")
    shortcut = Shortcut("reverse", group_size=3, lower=0.01, upper=0.3)
    start = PhaseState([0.4], [0.9])
    traj = shortcut_trajectory(start, target, KineticSpec.unit(1), 0.6, 7, shortcut)
    back = shortcut_trajectory(traj.state.flipped(), target, KineticSpec.unit(1), 0.6, 7, shortcut)
    np.testing.assert_allclose(back.state.flipped().q, start.q, atol=1e-12)
    np.testing.assert_allclose(back.state.flipped().p, start.p, atol=1e-12)


def test_reverse_shortcut_without_walls_matches_leapfrog():
    target = make_figure_targets("gauss1d")
    shortcut = Shortcut("reverse", group_size=2, lower=0.0, upper=100.0)
    start = PhaseState([0.4], [0.9])
    a = shortcut_trajectory(start, target, KineticSpec.unit(1), 0.3, 8, shortcut)
    b = leapfrog_trajectory(start, target, KineticSpec.unit(1), 0.3, 8)
    np.testing.assert_allclose(a.state.q, b.state.q, atol=1e-12)
    np.testing.assert_allclose(a.state.p, b.state.p, atol=1e-12)


@pytest.mark.parametrize(
    "kernel, kwargs",
    [
        ("hmc", dict(eps_range=(0.4, 0.6), steps_range=(2, 4))),
        ("ghmc", dict(eps_range=(0.3, 0.5), steps_range=(1, 3), alpha_ref=0.8)),
        ("windowed", dict(eps_range=(0.4, 0.6), steps_range=(3, 4), window=3)),
        ("windowed", dict(eps_range=(0.4, 0.6), steps_range=(3, 4), window=3,
                          window_weights=np.array([1.0, 2.0, 1.0]))),
        ("tempered", dict(eps_range=(0.4, 0.6), steps_range=(2, 4), alpha_temp=1.05)),
        ("lmc", dict(eps_range=(0.9, 1.1))),
        ("rwm", dict(eps_range=(1.5, 2.5), steps_range=(3, 3))),
    ],
)
def test_kernels_sample_standard_normal(kernel, kwargs):
    chain = run_chain([0.0], GAUSS1D, TrajectoryPlan(**kwargs), kernel, 8000, 21)
    ok, note = moment_test(chain.positions[:, 0])
    assert ok, note


def test_split_plan_samples_standard_normal():
    parts = [(lambda q: 0.25 * float(q @ q), lambda q: 0.5 * q)] * 2
    target = TargetDensity(1, lambda q: 0.5 * float(q @ q), lambda q: q, split_parts=parts)
    plan = TrajectoryPlan((0.4, 0.6), (2, 4), split=SplitScheme("nested_cheap_expensive", inner_count=3))
    chain = run_chain([0.0], unit(target), plan, "hmc", 8000, 22)
    ok, note = moment_test(chain.positions[:, 0])
    assert ok, note


def test_constrained_hmc_samples_uniform_box():
    target = TargetDensity(2, lambda q: 0.0, lambda q: np.zeros(2), lower=[0.0, -1.0], upper=[1.0, 3.0])
    chain = run_chain([0.5, 0.5], unit(target), TrajectoryPlan((0.5, 1.5), (3, 6)), "hmc", 6000, 23)
    assert chain.positions.min(axis=0) == pytest.approx([0.0, -1.0], abs=0.01)
    np.testing.assert_allclose(chain.positions.mean(axis=0), [0.5, 1.0], atol=0.05)
    np.testing.assert_allclose(chain.positions.var(axis=0), [1 / 12, 16 / 12], rtol=0.1)


def test_truncated_gaussian_mean():
    target = GaussianTarget([0.0], [1.0], lower=[0.0])
    chain = run_chain([0.5], unit(target), TrajectoryPlan((0.3, 0.5), (3, 6)), "hmc", 8000, 24)
    assert chain.positions.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=0.05)


def test_mixture_chain_tracks_mode_switches():
    canonical = unit(make_figure_targets("mixture_fig9"))
    chain = run_chain([0.0, 0.0], canonical, TrajectoryPlan.fixed(0.6, 20, alpha_temp=1.5), "tempered", 200, 9)
    assert chain.moved_mode is not None
    assert chain.moved_mode.sum() > 0
    plain = run_chain([0.0, 0.0], GAUSS2D, TrajectoryPlan.fixed(0.2, 5), "hmc", 5, 9)
    assert plain.moved_mode is None


@pytest.mark.parametrize("kernel", ["hmc", "lmc", "ghmc", "tempered", "rwm"])
def test_rejection_keeps_position(kernel):
    plan = TrajectoryPlan((0.9, 1.3), (2, 5), alpha_ref=0.5, alpha_temp=1.1)
    chain = run_chain([0.5, -0.5], GAUSS2D, plan, kernel, 400, 30)
    previous = np.vstack([[0.5, -0.5], chain.positions[:-1]])
    rejected = ~chain.accepted
    assert rejected.any()
    np.testing.assert_array_equal(chain.positions[rejected], previous[rejected])


def test_jittered_stepsize_is_constant_within_trajectory():
    from hamcmc.samplers import propose

    plan = TrajectoryPlan((0.1, 0.5), (10, 10))
    rng = np.random.default_rng(31)
    eps, L = plan.draw(rng)
    traj = propose(PhaseState([0.3], [1.0]), GAUSS1D, plan, eps, L, rng, record=True)
    q, p = traj.path_q[:, 0], traj.path_p[:, 0]
    # for U = q^2 / 2 each step satisfies q1 = q0 + e p0 - e^2 q0 / 2 with the drawn e
    residual = q[:-1] + eps * p[:-1] - 0.5 * eps**2 * q[:-1] - q[1:]
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)


def test_windowed_reject_can_move_position():
    plan = TrajectoryPlan((0.5, 0.6), (6, 8), window=3)
    chain = run_chain([0.5, -0.5], GAUSS2D, plan, "windowed", 500, 32)
    previous = np.vstack([[0.5, -0.5], chain.positions[:-1]])
    moved = np.any(chain.positions != previous, axis=1)
    assert np.any(moved & ~chain.accepted)


def test_tempering_heats_first_half():
    from hamcmc.integrators import tempered_trajectory

    target = make_figure_targets("gauss2d_95")
    rng = np.random.default_rng(33)
    for _ in range(20):
        start = PhaseState(target.draw(rng), rng.standard_normal(2))
        traj = tempered_trajectory(start, target, KineticSpec.unit(2), 0.02, 40, 1.02, record=True)
        assert traj.energies[20] > traj.energies[0]
