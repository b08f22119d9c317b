"""Markov chain kernels built on the integrators.

Every kernel takes a :class:`~hamcmc.model.PhaseState` and a numpy
``Generator`` and returns an :class:`IterationOutcome`. Random numbers are
consumed in a fixed order (momentum, stepsize, step count, kernel-specific
draws, acceptance uniform) so that kernels which coincide mathematically
also coincide draw for draw. Fixed stepsize or step-count ranges consume no
random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .integrators import (
    DIVERGENCE_THRESHOLD,
    Dynamics,
    SplitScheme,
    Trajectory,
    leapfrog_trajectory,
    split_trajectory,
    tempered_trajectory,
)
from .model import CanonicalDensity, KineticSpec, PhaseState, TargetDensity, sample_momentum

KERNELS = ("hmc", "lmc", "ghmc", "windowed", "tempered", "rwm")


@dataclass(frozen=True)
class Shortcut:
    """Early exit rules for trajectories with a poorly chosen stepsize.

    Attributes:
        mode: ``"terminate"`` rejects as soon as one step changes ``H`` by more
            than ``threshold``. ``"reverse"`` checks groups of ``group_size``
            steps and turns back when the standard deviation of the group's
            ``k + 1`` energies falls outside ``[lower, upper]``.
        threshold: Per-step limit for terminate mode.
        group_size: ``k`` for reverse mode.
        lower: Smallest acceptable group standard deviation (reverse mode).
        upper: Largest acceptable group standard deviation (reverse mode).
    """

    mode: str
    threshold: Optional[float] = None
    group_size: int = 1
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if self.mode == "terminate":
            if self.threshold is None or not self.threshold > 0:
                raise ValueError("terminate mode needs a positive threshold")
        elif self.mode == "reverse":
            if self.group_size < 1:
                raise ValueError("group size must be at least 1")
            if self.lower is None or self.upper is None:
                raise ValueError("reverse mode needs both lower and upper thresholds")
            if self.lower > self.upper:
                raise ValueError("reverse mode needs lower <= upper")
        else:
            raise ValueError(f"unknown shortcut mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    """Integrator settings shared by the Hamiltonian kernels.

    ``eps_range`` and ``steps_range`` are closed intervals sampled uniformly
    once per trajectory. For random-walk Metropolis the same fields give the
    proposal standard deviation and the number of updates per iteration.
    """

    eps_range: tuple[float, float]
    steps_range: tuple[int, int] = (1, 1)
    window: int = 1
    alpha_temp: float = 1.0
    alpha_ref: float = 0.0
    shortcut: Optional[Shortcut] = None
    window_weights: Optional[np.ndarray] = None
    split: Optional[SplitScheme] = None

    def __post_init__(self):
        lo, hi = (float(v) for v in self.eps_range)
        if not lo > 0:
            raise ValueError("stepsize range must be strictly positive")
        if lo > hi:
            raise ValueError("stepsize range needs lo <= hi")
        object.__setattr__(self, "eps_range", (lo, hi))
        l_lo, l_hi = (int(v) for v in self.steps_range)
        if l_lo < 1:
            raise ValueError("trajectories need at least one step")
        if l_lo > l_hi:
            raise ValueError("step range needs lo <= hi")
        object.__setattr__(self, "steps_range", (l_lo, l_hi))
        if int(self.window) < 1:
            raise ValueError("window width must be at least 1")
        if not self.alpha_temp > 0:
            raise ValueError("tempering factor must be positive")
        if not -1.0 <= self.alpha_ref <= 1.0:
            raise ValueError("refresh coefficient must lie in [-1, 1]")
        if self.window_weights is not None:
            w = np.asarray(self.window_weights, dtype=np.float64)
            if w.shape != (self.window,):
                raise ValueError(f"need {self.window} window weights, got shape {w.shape}")
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValueError("window weights must be positive and finite")
            object.__setattr__(self, "window_weights", w)

    @classmethod
    def fixed(cls, eps: float, steps: int, **kwargs) -> "TrajectoryPlan":
        return cls((eps, eps), (steps, steps), **kwargs)

    def draw(self, rng: np.random.Generator) -> tuple[float, int]:
        lo, hi = self.eps_range
        eps = lo if lo == hi else lo + (hi - lo) * rng.random()
        l_lo, l_hi = self.steps_range
        steps = l_lo if l_lo == l_hi else int(rng.integers(l_lo, l_hi + 1))
        return eps, steps


@dataclass
class IterationOutcome:
    """Result of one Markov chain transition."""

    state: PhaseState
    accepted: bool
    delta_h: float
    gradient_evals: int
    divergent: bool = False
    accept_prob: float = float("nan")
    moved_mode: Optional[bool] = None


def _accept_probability(delta_h: float, divergent: bool) -> float:
    if divergent or not np.isfinite(delta_h):
        return 0.0
    return 1.0 if delta_h <= 0 else math.exp(-delta_h)


def _moved(target: TargetDensity, q0, q1, accepted: bool) -> Optional[bool]:
    classify = getattr(target, "classify", None)
    if classify is None:
        return None
    return bool(accepted and classify(q0) != classify(q1))


def shortcut_trajectory(
    state: PhaseState,
    target: TargetDensity,
    kinetic: KineticSpec,
    eps,
    L: int,
    shortcut: Shortcut,
) -> Trajectory:
    """Leapfrog trajectory with the terminate or reverse shortcut applied.

    In reverse mode the step count is rounded up to a whole number of groups.
    A failed group acts as a wall: the trajectory stays at the start of that
    group with its motion reversed, and the group still uses up its share of
    the step budget. Groups already simulated are replayed from the cache, so
    once walls are found on both sides the remaining steps cost nothing.
    """
    if L < 1:
        raise ValueError("a trajectory needs at least one step")
    if shortcut.mode == "terminate":
        return _terminate_trajectory(state, target, kinetic, eps, L, shortcut.threshold)
    return _reverse_trajectory(state, target, kinetic, eps, L, shortcut)


def _terminate_trajectory(state, target, kinetic, eps, L, threshold) -> Trajectory:
    dyn = Dynamics(target, kinetic)
    q, p = state.q, state.p
    g = dyn.grad(q)
    evals = 1
    h0 = h_prev = dyn.energy(q, p)
    energies = [h0]
    for _ in range(L):
        q, p, g = dyn.step(q, p, g, eps)
        evals += 1
        h = dyn.energy(q, p)
        energies.append(h)
        if not np.isfinite(h) or abs(h - h_prev) > threshold:
            divergent = not np.isfinite(h) or abs(h - h0) > DIVERGENCE_THRESHOLD
            return Trajectory(
                PhaseState(q, p), float(h - h0), evals, divergent, np.array(energies),
                steps_taken=len(energies) - 1, aborted=True,
            )
        h_prev = h
    return Trajectory(
        PhaseState(q, p), float(h - h0), evals, False, np.array(energies), steps_taken=L
    )


def _reverse_trajectory(state, target, kinetic, eps, L, shortcut: Shortcut) -> Trajectory:
    dyn = Dynamics(target, kinetic)
    k = shortcut.group_size
    n_groups = -(-L // k)
    g0 = dyn.grad(state.q)
    evals = 1
    h0 = dyn.energy(state.q, state.p)
    # line position -> (q, p in forward orientation, H, gradient)
    cache = {0: (state.q, state.p, h0, g0)}
    hi = lo = 0
    walls = {1: None, -1: None}
    x, d = 0, 1

    def explore(x, d):
        q, p, _, g = cache[x]
        p = p if d == 1 else -p
        new, hs = [], [cache[x][2]]
        for _ in range(k):
            q, p, g = dyn.step(q, p, g, eps)
            h = dyn.energy(q, p)
            hs.append(h)
            new.append((q, p if d == 1 else -p, h, g))
            if not np.isfinite(h):
                break
        return new, hs

    for _ in range(n_groups):
        target_x = x + d * k
        if lo <= target_x <= hi:
            x = target_x
            continue
        if walls[d] is not None:
            d = -d
            continue
        new, hs = explore(x, d)
        evals += len(new)
        ok = False
        if len(hs) == k + 1 and all(map(math.isfinite, hs)):
            mean = sum(hs) / len(hs)
            spread = math.sqrt(sum((h - mean) ** 2 for h in hs) / len(hs))
            ok = shortcut.lower <= spread <= shortcut.upper
        if ok:
            for j, entry in enumerate(new, start=1):
                cache[x + d * j] = entry
            hi, lo = max(hi, target_x), min(lo, target_x)
            x = target_x
        else:
            walls[d] = x
            d = -d
    q, p, h, _ = cache[x]
    final = PhaseState(q, p if d == 1 else -p)
    return Trajectory(
        final, float(h - h0), evals, False, np.array([h0, h]), steps_taken=n_groups * k
    )


def propose(
    state: PhaseState,
    canonical: CanonicalDensity,
    plan: TrajectoryPlan,
    eps,
    L: int,
    rng: Optional[np.random.Generator] = None,
    *,
    record: bool = False,
) -> Trajectory:
    """Simulate the trajectory a plan calls for, starting from ``state``."""
    target, kinetic = canonical.target, canonical.kinetic
    if plan.split is not None:
        return split_trajectory(state, target, kinetic, eps, L, plan.split, rng=rng, record=record)
    if plan.shortcut is not None:
        return shortcut_trajectory(state, target, kinetic, eps, L, plan.shortcut)
    if plan.alpha_temp != 1.0:
        return tempered_trajectory(state, target, kinetic, eps, L, plan.alpha_temp, record=record)
    return leapfrog_trajectory(state, target, kinetic, eps, L, record=record)


def hmc_proposal(
    state: PhaseState,
    canonical: CanonicalDensity,
    eps,
    L: int,
    plan: Optional[TrajectoryPlan] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[PhaseState, float]:
    """Proposal and acceptance probability for a given starting momentum."""
    plan = plan or TrajectoryPlan.fixed(float(np.max(eps)), L)
    traj = propose(state, canonical, plan, eps, L, rng)
    prob = 0.0 if traj.aborted else _accept_probability(traj.delta_h, traj.divergent)
    return traj.state.flipped(), prob


def _metropolis(
    start: PhaseState,
    p_start: np.ndarray,
    traj: Trajectory,
    target: TargetDensity,
    rng: np.random.Generator,
) -> IterationOutcome:
    prob = 0.0 if traj.aborted else _accept_probability(traj.delta_h, traj.divergent)
    u = rng.random()
    accepted = bool(u < prob)
    if accepted:
        new = traj.state.flipped()
    else:
        new = PhaseState(start.q, p_start)
    return IterationOutcome(
        new,
        accepted,
        traj.delta_h,
        traj.gradient_evals,
        traj.divergent,
        prob,
        _moved(target, start.q, new.q, accepted),
    )


def hmc_iteration(
    state: PhaseState,
    canonical: CanonicalDensity,
    plan: TrajectoryPlan,
    rng: np.random.Generator,
) -> IterationOutcome:
    """Standard HMC: fresh momentum, one trajectory, Metropolis accept.

    The trajectory honours the plan's split scheme, shortcut and tempering
    factor, and the target's constraints and surrogate.
    """
    p = sample_momentum(canonical.kinetic, rng)
    eps, L = plan.draw(rng)
    traj = propose(PhaseState(state.q, p), canonical, plan, eps, L, rng)
    return _metropolis(state, p, traj, canonical.target, rng)


def tempered_hmc_iteration(
    state: PhaseState,
    canonical: CanonicalDensity,
    plan: TrajectoryPlan,
    rng: np.random.Generator,
) -> IterationOutcome:
    """HMC whose trajectories heat and then cool the momentum."""
    p = sample_momentum(canonical.kinetic, rng)
    eps, L = plan.draw(rng)
    traj = tempered_trajectory(
        PhaseState(state.q, p), canonical.target, canonical.kinetic, eps, L, plan.alpha_temp
    )
    return _metropolis(state, p, traj, canonical.target, rng)


def langevin_iteration(
    state: PhaseState,
    canonical: CanonicalDensity,
    eps: float,
    rng: np.random.Generator,
) -> IterationOutcome:
    """Langevin Monte Carlo: HMC with a single leapfrog step."""
    if not eps > 0:
        raise ValueError("stepsize must be positive")
    p = sample_momentum(canonical.kinetic, rng)
    traj = leapfrog_trajectory(PhaseState(state.q, p), canonical.target, canonical.kinetic, eps, 1)
    return _metropolis(state, p, traj, canonical.target, rng)


def lmc_acceptance_phase(
    target: TargetDensity, kinetic: KineticSpec, q, p, eps: float
) -> tuple[np.ndarray, float]:
    """Langevin proposal from ``(q, p)`` and its acceptance via phase-space energies."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    p_half = p - 0.5 * eps * target.gradient(q)
    q_star = q + eps * kinetic.velocity(p_half)
    p_star = p_half - 0.5 * eps * target.gradient(q_star)
    log_ratio = -(target.potential(q_star) - target.potential(q)) - (
        kinetic.energy(p_star) - kinetic.energy(p)
    )
    return q_star, min(1.0, math.exp(log_ratio))


def lmc_acceptance_mh(
    target: TargetDensity, kinetic: KineticSpec, q, q_star, eps: float
) -> float:
    """Acceptance of a Langevin proposal written as a Metropolis-Hastings ratio.

    The proposal is Gaussian with mean ``q - eps**2 / 2 * grad U(q) / m`` and
    per-coordinate variance ``eps**2 / m``.
    """
    q = np.asarray(q, dtype=np.float64)
    q_star = np.asarray(q_star, dtype=np.float64)
    inv_m = kinetic.inv_masses
    var = eps * eps * inv_m

    def log_proposal(to, frm):
        mean = frm - 0.5 * eps * eps * inv_m * target.gradient(frm)
        return -0.5 * float(np.sum((to - mean) ** 2 / var))

    log_ratio = (
        -(target.potential(q_star) - target.potential(q))
        + log_proposal(q, q_star)
        - log_proposal(q_star, q)
    )
    return min(1.0, math.exp(log_ratio))


def partial_refresh(
    p, alpha_ref: float, kinetic: KineticSpec, rng: np.random.Generator
) -> np.ndarray:
    """``alpha * p + sqrt(1 - alpha**2) * n`` with ``n`` drawn like a fresh momentum."""
    if not -1.0 <= alpha_ref <= 1.0:
        raise ValueError("refresh coefficient must lie in [-1, 1]")
    n = sample_momentum(kinetic, rng)
    return alpha_ref * np.asarray(p, dtype=np.float64) + math.sqrt(1.0 - alpha_ref**2) * n


def ghmc_iteration(
    state: PhaseState,
    canonical: CanonicalDensity,
    plan: TrajectoryPlan,
    rng: np.random.Generator,
) -> IterationOutcome:
    """HMC with partial momentum refreshment.

    The momentum is partly refreshed, a trajectory is proposed and accepted or
    rejected as usual, and the momentum is then always negated. After an
    acceptance the two negations cancel; after a rejection the motion reverses.
    """
    p = partial_refresh(state.p, plan.alpha_ref, canonical.kinetic, rng)
    eps, L = plan.draw(rng)
    traj = propose(PhaseState(state.q, p), canonical, plan, eps, L, rng)
    out = _metropolis(state, p, traj, canonical.target, rng)
    out.state = out.state.flipped()
    return out


class Reservoir:
    """Keeps one item from a stream, chosen with probability proportional to weight.

    Weights are given on the log scale. Only the running log total and the
    current pick are stored.
    """

    def __init__(self):
        self.log_total = -np.inf
        self.item = None
        self.count = 0

    def add(self, item, log_weight: float, rng: Optional[np.random.Generator]) -> None:
        if log_weight == -np.inf:
            return
        if self.log_total == -math.inf:
            new_total = log_weight
        else:
            top = max(self.log_total, log_weight)
            new_total = top + math.log1p(math.exp(-abs(self.log_total - log_weight)))
        if self.item is None:
            self.item = item
        elif rng is not None and rng.random() < math.exp(log_weight - new_total):
            self.item = item
        self.log_total = new_total
        self.count += 1


def windowed_hmc_iteration(
    state: PhaseState,
    canonical: CanonicalDensity,
    plan: TrajectoryPlan,
    rng: np.random.Generator,
) -> IterationOutcome:
    """HMC that accepts or rejects whole windows of states at the trajectory ends.

    The current state is placed at a random offset ``s`` inside the reject
    window (drawn by the window weights when given), and the trajectory runs
    ``s`` steps backward and ``L - s`` forward. Trajectory index ``i`` in the
    reject window gets weight ``w[i]``; index ``L - j`` in the accept window
    gets ``w[j]``. The accept window is chosen with probability
    ``min(1, sum_acc w P / sum_rej w P)`` and a state inside the chosen window
    is picked in proportion to ``w P``. Reported ``delta_h`` is minus the log
    of that ratio.
    """
    W = int(plan.window)
    target, kinetic = canonical.target, canonical.kinetic
    p0 = sample_momentum(kinetic, rng)
    eps, L = plan.draw(rng)
    if L < W - 1:
        raise ValueError(f"trajectory of {L} steps is too short for windows of {W}")
    weights = plan.window_weights
    if W == 1:
        s = 0
    elif weights is None:
        s = int(rng.integers(W))
    else:
        s = int(rng.choice(W, p=weights / weights.sum()))
    log_w = np.zeros(W) if weights is None else np.log(weights)
    select_rng = rng if W > 1 else None

    dyn = Dynamics(target, kinetic)
    g0 = dyn.grad(state.q)
    evals = 1
    h0 = dyn.energy(state.q, p0)
    reject, accept = Reservoir(), Reservoir()
    divergent = False

    def visit(i, q, p, h):
        lp = -(h - h0) if np.isfinite(h) else -np.inf
        if i <= W - 1:
            reject.add((q, p), log_w[i] + lp, select_rng)
        if i >= L - W + 1:
            accept.add((q, p), log_w[L - i] + lp, select_rng)

    visit(s, state.q, p0, h0)
    for direction, n_steps in ((-1, s), (1, L - s)):
        q, p, g = state.q, direction * p0, g0
        for j in range(1, n_steps + 1):
            q, p, g = dyn.step(q, p, g, eps)
            evals += 1
            h = dyn.energy(q, p)
            if not np.isfinite(h) or abs(h - h0) > DIVERGENCE_THRESHOLD:
                divergent = True
                break
            visit(s + direction * j, q, direction * p, h)

    log_ratio = accept.log_total - reject.log_total
    prob = 0.0 if accept.item is None else (1.0 if log_ratio >= 0 else math.exp(log_ratio))
    u = rng.random()
    accepted = bool(u < prob)
    q_new, p_new = accept.item if accepted else reject.item
    delta = -log_ratio if np.isfinite(log_ratio) else np.inf
    return IterationOutcome(
        PhaseState(q_new, -p_new if accepted else p_new),
        accepted,
        float(delta),
        evals,
        divergent,
        prob,
        _moved(target, state.q, q_new, not np.array_equal(q_new, state.q)),
    )


def rwm_accept_probability(target: TargetDensity, q, q_star) -> float:
    """``min(1, exp(U(q) - U(q*)))`` for a symmetric proposal."""
    du = target.potential(np.asarray(q_star, dtype=np.float64)) - target.potential(
        np.asarray(q, dtype=np.float64)
    )
    return _accept_probability(du, False)


def rwm_iteration(
    state_q,
    target: TargetDensity,
    proposal_sd_range: tuple[float, float],
    rng: np.random.Generator,
) -> IterationOutcome:
    """One random-walk Metropolis update with an isotropic Gaussian proposal."""
    lo, hi = proposal_sd_range
    if not (lo > 0 and lo <= hi):
        raise ValueError("proposal sd range must be positive with lo <= hi")
    q = np.asarray(state_q, dtype=np.float64)
    sd = lo if lo == hi else lo + (hi - lo) * rng.random()
    q_star = q + sd * rng.standard_normal(q.size)
    du = target.potential(q_star) - target.potential(q)
    prob = _accept_probability(du, False)
    accepted = bool(rng.random() < prob)
    new_q = q_star if accepted else q
    return IterationOutcome(
        PhaseState(new_q, np.zeros_like(q)),
        accepted,
        float(du),
        0,
        False,
        prob,
        _moved(target, q, new_q, accepted),
    )


@dataclass
class ChainRecord:
    """Everything recorded while running a chain.

    ``acceptance`` is the fraction of proposals accepted within each iteration;
    it is 0 or 1 except for random-walk chains that make several updates per
    iteration. ``gradient_evals`` is cumulative.
    """

    positions: np.ndarray
    delta_h: np.ndarray
    accepted: np.ndarray
    acceptance: np.ndarray
    divergent: np.ndarray
    gradient_evals: np.ndarray
    accept_prob: np.ndarray
    moved_mode: Optional[np.ndarray] = None
    kernel: str = ""

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def rejection_rate(self) -> float:
        return float(1.0 - np.mean(self.acceptance))

    @property
    def divergence_count(self) -> int:
        return int(np.sum(self.divergent))


def _kernel_fn(kernel: str) -> Callable:
    table = {
        "hmc": hmc_iteration,
        "ghmc": ghmc_iteration,
        "windowed": windowed_hmc_iteration,
        "tempered": tempered_hmc_iteration,
    }
    if kernel == "lmc":
        return lambda state, canonical, plan, rng: langevin_iteration(
            state, canonical, plan.draw(rng)[0], rng
        )
    if kernel not in table:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {', '.join(KERNELS)}")
    return table[kernel]


def _rwm_block(state, canonical, plan, rng) -> tuple[IterationOutcome, float]:
    n_updates = plan.steps_range[0]
    if plan.steps_range[0] != plan.steps_range[1]:
        n_updates = int(rng.integers(plan.steps_range[0], plan.steps_range[1] + 1))
    q0 = q = state.q
    hits = 0
    du_total = 0.0
    for _ in range(n_updates):
        out = rwm_iteration(q, canonical.target, plan.eps_range, rng)
        hits += out.accepted
        if out.accepted:
            du_total += out.delta_h
        q = out.state.q
    moved = _moved(canonical.target, q0, q, hits > 0)
    outcome = IterationOutcome(
        PhaseState(q, state.p), hits > 0, du_total, 0, False, hits / n_updates, moved
    )
    return outcome, hits / n_updates


def run_chain(
    initial_q,
    canonical: CanonicalDensity,
    plan: TrajectoryPlan,
    kernel: str,
    n_iterations: int,
    seed: int,
) -> ChainRecord:
    """Run ``n_iterations`` transitions of ``kernel`` from ``initial_q``.

    The result depends only on the arguments. For ``"rwm"`` the plan's
    stepsize range is the proposal standard deviation range and its step
    range the number of updates that make up one iteration.
    """
    if n_iterations < 1:
        raise ValueError("need at least one iteration")
    rng = np.random.default_rng(seed)
    q0 = np.asarray(initial_q, dtype=np.float64)
    if q0.shape != (canonical.dim,):
        raise ValueError(f"initial position must have length {canonical.dim}")
    state = PhaseState(q0, sample_momentum(canonical.kinetic, rng))
    fn = None if kernel == "rwm" else _kernel_fn(kernel)

    n, d = n_iterations, canonical.dim
    positions = np.empty((n, d))
    delta_h = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    acceptance = np.empty(n)
    divergent = np.zeros(n, dtype=bool)
    evals = np.empty(n, dtype=np.int64)
    probs = np.empty(n)
    moved = np.zeros(n, dtype=bool)
    track_modes = hasattr(canonical.target, "classify")
    total = 0
    for i in range(n):
        if fn is None:
            out, frac = _rwm_block(state, canonical, plan, rng)
        else:
            out = fn(state, canonical, plan, rng)
            frac = float(out.accepted)
        state = out.state
        positions[i] = state.q
        delta_h[i] = out.delta_h
        accepted[i] = out.accepted
        acceptance[i] = frac
        divergent[i] = out.divergent
        total += out.gradient_evals
        evals[i] = total
        probs[i] = out.accept_prob
        moved[i] = bool(out.moved_mode)
    return ChainRecord(
        positions, delta_h, accepted, acceptance, divergent, evals, probs,
        moved if track_modes else None, kernel,
    )
