"""End-to-end verification checks, one per acceptance criterion.

Each ``check_*`` function runs a deterministic experiment and returns a
:class:`CheckResult`. They are shared by the ``selftest`` command and the test
suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import integrated_autocorrelation, optimal_acceptance, tune_scale
from .integrators import (
    DIVERGENCE_THRESHOLD,
    SplitScheme,
    euler_step,
    leapfrog_step,
    leapfrog_trajectory,
    modified_euler_step,
    split_trajectory,
    stability_eigenvalues,
    tempered_trajectory,
)
from .model import CanonicalDensity, KineticSpec, PhaseState, TargetDensity
from .samplers import (
    Reservoir,
    Shortcut,
    TrajectoryPlan,
    lmc_acceptance_mh,
    lmc_acceptance_phase,
    run_chain,
)
from .targets import GaussianTarget, ReplicatedTarget, make_figure_targets


@dataclass
class CheckResult:
    criterion: int
    title: str
    passed: bool
    parts: list[tuple[str, bool]] = field(default_factory=list)
    seconds: float = 0.0
    budget: float = math.inf

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = "; ".join(f"{text} [{'ok' if ok else 'FAIL'}]" for text, ok in self.parts)
        return (
            f"{status} criterion {self.criterion} ({self.title}): {detail}; "
            f"runtime {self.seconds:.1f}s (budget {self.budget:g}s)"
        )


class _Parts:
    def __init__(self):
        self.items: list[tuple[str, bool]] = []

    def within(self, label: str, value: float, expected: float, tol: float) -> None:
        ok = bool(abs(value - expected) <= tol)
        self.items.append((f"{label}={value:.4g} (want {expected:g}+-{tol:g})", ok))

    def add(self, label: str, ok: bool) -> None:
        self.items.append((label, bool(ok)))


def _timed(criterion: int, title: str, budget: float, body: Callable[[_Parts], None]) -> CheckResult:
    parts = _Parts()
    start = time.perf_counter()
    body(parts)
    seconds = time.perf_counter() - start
    within_budget = seconds <= budget
    passed = all(ok for _, ok in parts.items) and within_budget
    return CheckResult(criterion, title, passed, parts.items, seconds, budget)


def _unit(target: TargetDensity) -> CanonicalDensity:
    return CanonicalDensity(target, KineticSpec.unit(target.dim))


def check_fig3_trajectory() -> CheckResult:
    def body(parts):
        target = make_figure_targets("gauss2d_95")
        start = PhaseState([-1.50, -1.55], [-1.0, 1.0])
        traj = leapfrog_trajectory(start, target, KineticSpec.unit(2), 0.25, 25)
        parts.within("delta_H", traj.delta_h, 0.41, 0.02)
        parts.within("accept", math.exp(-traj.delta_h), 0.66, 0.02)

    return _timed(1, "trajectory energy error", 1.0, body)


def check_stability() -> CheckResult:
    def body(parts):
        below = max(stability_eigenvalues(1.0, 1.99))
        above = max(stability_eigenvalues(1.0, 2.01))
        parts.add(f"max|lambda|(1.99)={below:.12g} == 1", abs(below - 1.0) < 1e-12)
        parts.add(f"max|lambda|(2.01)={above:.4g} > 1", above > 1.0)
        target, kinetic = make_figure_targets("gauss1d"), KineticSpec.unit(1)
        turning = PhaseState([1.0], [0.0])
        stable = leapfrog_trajectory(turning, target, kinetic, 1.9, 1000)
        worst = float(np.max(np.abs(stable.energies - stable.energies[0])))
        parts.add(f"max|dH| over 1000 steps at 1.9 = {worst:.3g} < 1", worst < 1.0 and not stable.divergent)
        start = PhaseState([0.0], [1.0])
        swing = leapfrog_trajectory(start, target, kinetic, 1.9, 1000)
        bound = float(np.max(np.abs(swing.energies - swing.energies[0])))
        parts.add(f"from (0, 1) the error stays bounded at {bound:.3g}", not swing.divergent)
        unstable = leapfrog_trajectory(start, target, kinetic, 2.2, 200)
        parts.add(
            f"eps 2.2 passes the {DIVERGENCE_THRESHOLD:g} guard after {unstable.steps_taken} steps",
            unstable.divergent,
        )

    return _timed(2, "stability threshold", 1.0, body)


def check_optimal_acceptance() -> CheckResult:
    def body(parts):
        for method, expected in (("rwm", 0.23), ("hmc", 0.65), ("lmc", 0.57)):
            parts.within(f"a*({method})", optimal_acceptance(method)[1], expected, 0.01)

    return _timed(3, "optimal acceptance rates", 1.0, body)


def check_2d_rejection() -> CheckResult:
    def body(parts):
        canonical = _unit(make_figure_targets("gauss2d_98"))
        start = np.array([-1.50, -1.55])
        hmc = run_chain(start, canonical, TrajectoryPlan.fixed(0.18, 20), "hmc", 10_000, 4)
        rwm = run_chain(start, canonical, TrajectoryPlan.fixed(0.18, 1), "rwm", 10_000, 4)
        parts.within("HMC rejection", hmc.rejection_rate, 0.09, 0.03)
        parts.within("RWM rejection", rwm.rejection_rate, 0.37, 0.03)

    return _timed(4, "2D correlated Gaussian", 10.0, body)


def check_100d() -> CheckResult:
    def body(parts):
        target = make_figure_targets("gauss100d")
        canonical = _unit(target)
        start = target.draw(np.random.default_rng(5))
        hmc = run_chain(start, canonical, TrajectoryPlan((0.0104, 0.0156), (150, 150)), "hmc", 1000, 5)
        rwm = run_chain(start, canonical, TrajectoryPlan((0.0176, 0.0264), (150, 150)), "rwm", 1000, 5)
        parts.within("HMC rejection", hmc.rejection_rate, 0.13, 0.05)
        parts.within("RWM rejection", rwm.rejection_rate, 0.75, 0.05)
        err_hmc = float(np.sqrt(np.mean(hmc.positions.mean(axis=0) ** 2)))
        err_rwm = float(np.sqrt(np.mean(rwm.positions.mean(axis=0) ** 2)))
        ratio = err_rwm / err_hmc
        parts.add(f"RMS mean error ratio RWM/HMC={ratio:.3g} >= 3", ratio >= 3.0)

    return _timed(5, "100-dimensional Gaussian", 120.0, body)


def check_tempering() -> CheckResult:
    def body(parts):
        canonical = _unit(make_figure_targets("mixture_fig9"))
        start = np.zeros(2)
        long = run_chain(start, canonical, TrajectoryPlan.fixed(0.3, 200, alpha_temp=1.04), "tempered", 2000, 9)
        short = run_chain(start, canonical, TrajectoryPlan.fixed(0.6, 20, alpha_temp=1.5), "tempered", 2000, 9)
        plain = run_chain(start, canonical, TrajectoryPlan.fixed(0.3, 200), "hmc", 2000, 9)
        parts.within("switch rate (0.3, 200, 1.04)", long.moved_mode.mean(), 0.11, 0.04)
        parts.within("switch rate (0.6, 20, 1.5)", short.moved_mode.mean(), 0.06, 0.03)
        rate = plain.moved_mode.mean()
        parts.add(f"untempered switch rate={rate:.4g} < 0.005", rate < 0.005)

    return _timed(6, "tempered trajectories", 60.0, body)


def _jacobian(fn, x, h=1e-5):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.array(cols).T


def _global_error(stepper, eps):
    target, kinetic = make_figure_targets("gauss1d"), KineticSpec.unit(1)
    state = PhaseState([0.0], [1.0])
    n = int(round(1.0 / eps))
    for _ in range(n):
        state = stepper(state, target, kinetic, eps).state
    exact = np.array([math.sin(n * eps), math.cos(n * eps)])
    return float(np.hypot(*(np.concatenate([state.q, state.p]) - exact)))


def check_integrator_properties() -> CheckResult:
    def body(parts):
        kinetic = KineticSpec.unit(2)
        gauss = make_figure_targets("gauss2d_95")
        mixture = make_figure_targets("mixture_fig9")
        box = GaussianTarget([0.0, 0.0], [1.0, 1.0], lower=[-0.5, -1.0], upper=[0.7, 1.0])
        nested_parts = [
            (lambda q: 0.5 * float(q @ q), lambda q: q),
            (lambda q: 0.05 * float(np.sum(q**4)), lambda q: 0.2 * q**3),
        ]
        nested = TargetDensity(
            2, lambda q: sum(u(q) for u, _ in nested_parts),
            lambda q: sum(g(q) for _, g in nested_parts), split_parts=nested_parts,
        )
        scheme = SplitScheme("nested_cheap_expensive", inner_count=3)
        runs = {
            "leapfrog": lambda s: leapfrog_trajectory(s, gauss, kinetic, 0.2, 30),
            "split": lambda s: split_trajectory(s, nested, kinetic, 0.2, 30, scheme),
            "constrained": lambda s: leapfrog_trajectory(s, box, kinetic, 0.2, 30),
            "tempered": lambda s: tempered_trajectory(s, mixture, kinetic, 0.2, 31, 1.05),
        }
        rng = np.random.default_rng(7)
        worst = 0.0
        for run in runs.values():
            for _ in range(5):
                start = PhaseState(rng.uniform(-0.4, 0.4, 2), rng.standard_normal(2))
                end = run(start).state
                back = run(end.flipped()).state.flipped()
                worst = max(worst, float(np.max(np.abs(np.concatenate([back.q - start.q, back.p - start.p])))))
        parts.add(f"reversibility error {worst:.2g} <= 1e-10", worst <= 1e-10)

        def flow(runner):
            def fn(x):
                end = runner(PhaseState(x[:2], x[2:]))
                return np.concatenate([end.q, end.p])
            return fn

        worst_det = 0.0
        for name, run in runs.items():
            if name == "constrained":
                continue  # reflection makes the map piecewise; checked away from the walls below
            fn = flow(lambda s, run=run: run(s).state)
            for _ in range(3):
                x = np.concatenate([rng.uniform(-0.4, 0.4, 2), rng.standard_normal(2)])
                worst_det = max(worst_det, abs(abs(np.linalg.det(_jacobian(fn, x))) - 1.0))
        parts.add(f"|det J| deviation {worst_det:.2g} <= 1e-6", worst_det <= 1e-6)

        J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
        J_inv = np.linalg.inv(J)
        step = flow(lambda s: leapfrog_step(s, mixture, kinetic, 0.3).state)
        worst_sym = 0.0
        for _ in range(5):
            x = np.concatenate([rng.uniform(-1, 1, 2), rng.standard_normal(2)])
            B = _jacobian(step, x)
            worst_sym = max(worst_sym, float(np.max(np.abs(B.T @ J_inv @ B - J_inv))))
        parts.add(f"symplectic residual {worst_sym:.2g} <= 1e-5", worst_sym <= 1e-5)

        for name, stepper, expected, tol in (
            ("leapfrog", leapfrog_step, 4.0, 0.8),
            ("euler", euler_step, 2.0, 0.4),
            ("modified euler", modified_euler_step, 2.0, 0.4),
        ):
            ratio = _global_error(stepper, 0.02) / _global_error(stepper, 0.01)
            parts.within(f"{name} error ratio", ratio, expected, tol)

    return _timed(7, "integrator properties", 10.0, body)


def moment_test(samples: np.ndarray, sigmas: float = 5.0) -> tuple[bool, str]:
    """Check mean 0, variance 1 and fourth moment 3 using autocorrelation-aware errors."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    ok, notes = True, []
    for power, expected in ((1, 0.0), (2, 1.0), (4, 3.0)):
        series = x**power
        tau = integrated_autocorrelation(series)
        se = series.std() * math.sqrt(tau / n)
        z = (series.mean() - expected) / se
        ok &= abs(z) <= sigmas
        notes.append(f"m{power} z={z:+.1f}")
    return bool(ok), " ".join(notes)


STATIONARITY_CASES = {
    "hmc": ("hmc", dict(eps_range=(0.4, 0.6), steps_range=(2, 4))),
    "lmc": ("lmc", dict(eps_range=(0.9, 1.1))),
    "ghmc a=0": ("ghmc", dict(eps_range=(0.4, 0.6), steps_range=(2, 4), alpha_ref=0.0)),
    "ghmc a=0.5": ("ghmc", dict(eps_range=(0.3, 0.5), steps_range=(1, 3), alpha_ref=0.5)),
    "ghmc a=0.9": ("ghmc", dict(eps_range=(0.2, 0.4), steps_range=(1, 3), alpha_ref=0.9)),
    "windowed W=2": ("windowed", dict(eps_range=(0.4, 0.6), steps_range=(2, 4), window=2)),
    "windowed W=5": ("windowed", dict(eps_range=(0.4, 0.6), steps_range=(4, 5), window=5)),
    "tempered a=1": ("tempered", dict(eps_range=(0.4, 0.6), steps_range=(2, 4), alpha_temp=1.0)),
    "tempered a=1.02": ("tempered", dict(eps_range=(0.4, 0.6), steps_range=(2, 4), alpha_temp=1.02)),
    "shortcut terminate": (
        "hmc",
        dict(eps_range=(0.5, 1.9), steps_range=(2, 4), shortcut=Shortcut("terminate", threshold=0.4)),
    ),
    "shortcut reverse": (
        "hmc",
        dict(
            eps_range=(0.5, 1.9), steps_range=(2, 4),
            shortcut=Shortcut("reverse", group_size=2, lower=0.01, upper=0.3),
        ),
    ),
}


def check_stationarity(n_iterations: int = 50_000) -> CheckResult:
    def body(parts):
        canonical = _unit(make_figure_targets("gauss1d"))
        for i, (label, (kernel, kwargs)) in enumerate(STATIONARITY_CASES.items()):
            chain = run_chain([0.0], canonical, TrajectoryPlan(**kwargs), kernel, n_iterations, 100 + i)
            ok, note = moment_test(chain.positions[:, 0])
            parts.add(f"{label}: {note}", ok)

    return _timed(8, "stationary distribution", 60.0, body)


def check_lmc_equivalence() -> CheckResult:
    def body(parts):
        rng = np.random.default_rng(9)
        worst = 0.0
        targets = [make_figure_targets("gauss2d_95"), make_figure_targets("mixture_fig9")]
        for i in range(100):
            target = targets[i % 2]
            kinetic = KineticSpec(rng.uniform(0.5, 2.0, 2))
            q, p, eps = rng.uniform(-2, 2, 2), rng.standard_normal(2), rng.uniform(0.05, 1.0)
            q_star, phase = lmc_acceptance_phase(target, kinetic, q, p, eps)
            mh = lmc_acceptance_mh(target, kinetic, q, q_star, eps)
            worst = max(worst, abs(phase - mh))
        parts.add(f"max |phase - MH| = {worst:.2g} <= 1e-12", worst <= 1e-12)

    return _timed(9, "Langevin acceptance forms", 1.0, body)


def windowed_tuning(
    eps_grid=None, trajectory_time: float = 1.95, window: int = 10, n_iterations: int = 400
) -> tuple[float, float]:
    """Grid-tune the stepsize of windowed HMC on the 100-D Gaussian.

    The trajectory time is held fixed and the stepsize maximizing
    acceptance times stepsize (distance moved per gradient) is chosen.
    Returns that stepsize and its mean acceptance probability.
    """
    target = make_figure_targets("gauss100d")
    canonical = _unit(target)
    start = target.draw(np.random.default_rng(10))
    grid = np.arange(0.0150, 0.01951, 0.0005) if eps_grid is None else eps_grid
    best = (-1.0, 0.0, 0.0)
    for eps in grid:
        L = int(round(trajectory_time / eps))
        plan = TrajectoryPlan((0.9 * eps, 1.1 * eps), (L, L), window=window)
        chain = run_chain(start, canonical, plan, "windowed", n_iterations, 10)
        a = float(chain.accept_prob.mean())
        if a * eps > best[0]:
            best = (a * eps, float(eps), a)
    return best[1], best[2]


def check_windowed() -> CheckResult:
    def body(parts):
        canonical = _unit(make_figure_targets("gauss2d_95"))
        plan = TrajectoryPlan((0.15, 0.3), (5, 15))
        plain = run_chain([1.0, 0.5], canonical, plan, "hmc", 300, 11)
        windowed = run_chain([1.0, 0.5], canonical, plan, "windowed", 300, 11)
        same = np.array_equal(plain.positions, windowed.positions) and np.array_equal(
            plain.accepted, windowed.accepted
        )
        parts.add("W=1 identical to HMC", same)
        rng = np.random.default_rng(12)
        hits = 0
        for _ in range(10_000):
            res = Reservoir()
            res.add(1, math.log(1.0), rng)
            res.add(2, math.log(3.0), rng)
            hits += res.item == 2
        parts.within("reservoir P(second)", hits / 10_000, 0.75, 0.02)
        eps, acc = windowed_tuning()
        parts.within(f"tuned acceptance (eps={eps:.4g})", acc, 0.85, 0.05)

    return _timed(10, "windowed HMC", 120.0, body)


def scaling_slopes(dims=(16, 64, 256), seed: int = 13) -> dict[str, float]:
    """Log-log slope of the tuned scale against dimension for HMC and RWM."""
    slopes = {}
    seeds = np.random.SeedSequence(seed).spawn(len(dims))
    for method in ("hmc", "rwm"):
        a_star = optimal_acceptance(method)[1]
        scales = [
            tune_scale(ReplicatedTarget.gaussian(d), method, a_star, np.random.default_rng(s),
                       trajectory_time=1.5)[0]
            for d, s in zip(dims, seeds)
        ]
        slopes[method] = float(np.polyfit(np.log(dims), np.log(scales), 1)[0])
    return slopes


def check_scaling() -> CheckResult:
    def body(parts):
        slopes = scaling_slopes()
        parts.within("HMC slope", slopes["hmc"], -0.25, 0.08)
        parts.within("RWM slope", slopes["rwm"], -0.5, 0.1)

    return _timed(11, "scaling with dimension", 300.0, body)


CHECKS = {
    1: check_fig3_trajectory,
    2: check_stability,
    3: check_optimal_acceptance,
    4: check_2d_rejection,
    5: check_100d,
    6: check_tempering,
    7: check_integrator_properties,
    8: check_stationarity,
    9: check_lmc_equivalence,
    10: check_windowed,
    11: check_scaling,
}
