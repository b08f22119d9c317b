"""Discretizations of Hamiltonian dynamics.

All trajectory functions count gradient evaluations, record the Hamiltonian
after every step and stop early once the energy error passes
:data:`DIVERGENCE_THRESHOLD`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import KineticSpec, NonFiniteEnergyError, PhaseState, TargetDensity

DIVERGENCE_THRESHOLD = 1000.0
MAX_REFLECTIONS = 1_000_000

FlowMap = Callable[[np.ndarray, np.ndarray, float], tuple[np.ndarray, np.ndarray]]


@dataclass
class StepReport:
    state: PhaseState
    hamiltonian_value: float
    gradient_evals: int


@dataclass
class Trajectory:
    """Outcome of simulating one trajectory.

    ``energies`` holds ``H`` at the start and after each completed step, so its
    length is one more than the number of steps actually taken. ``path_q`` and
    ``path_p`` are filled only when the caller asks for a recording.
    ``aborted`` marks trajectories cut short by a rule that forces rejection.
    """

    state: PhaseState
    delta_h: float
    gradient_evals: int
    divergent: bool = False
    energies: np.ndarray = field(default_factory=lambda: np.empty(0))
    path_q: Optional[np.ndarray] = None
    path_p: Optional[np.ndarray] = None
    steps_taken: int = 0
    aborted: bool = False

    def __iter__(self):
        # allows ``state, dh, evals = trajectory``
        return iter((self.state, self.delta_h, self.gradient_evals))


class Dynamics:
    """Leapfrog machinery bound to one target and kinetic energy.

    Works on raw arrays to keep per-step overhead low. ``eps`` may be a scalar
    or a per-coordinate vector.
    """

    def __init__(
        self,
        target: TargetDensity,
        kinetic: KineticSpec,
        gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        if target.dim != kinetic.dim:
            raise ValueError(
                f"target has {target.dim} coordinates, kinetic energy {kinetic.dim}"
            )
        self.target = target
        self.kinetic = kinetic
        self.grad = gradient if gradient is not None else target.dynamics_gradient()
        self.inv_m = kinetic.inv_masses
        self.unit_mass = kinetic.is_unit
        self.potential = target.potential
        self.constrained = target.constrained
        self.lower = target.lower
        self.upper = target.upper

    def energy(self, q: np.ndarray, p: np.ndarray) -> float:
        if self.unit_mass:
            return self.potential(q) + 0.5 * float(np.dot(p, p))
        return self.potential(q) + 0.5 * float(np.dot(p * p, self.inv_m))

    def drift(self, q: np.ndarray, p: np.ndarray, eps) -> tuple[np.ndarray, np.ndarray]:
        q_new = q + eps * p if self.unit_mass else q + eps * p * self.inv_m
        if self.constrained:
            return reflect(q_new, p, self.lower, self.upper)
        return q_new, p

    def step(self, q, p, g, eps):
        """One leapfrog step reusing the gradient ``g`` already known at ``q``."""
        p = p - (0.5 * eps) * g
        q, p = self.drift(q, p, eps)
        g = self.grad(q)
        p = p - (0.5 * eps) * g
        return q, p, g


def reflect(q_new, p, lower, upper):
    """Fold positions back into ``[lower, upper]``, negating momenta per bounce."""
    q_new = np.array(q_new, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    for _ in range(MAX_REFLECTIONS):
        above = q_new > upper
        if above.any():
            q_new[above] = 2.0 * upper[above] - q_new[above]
            p[above] = -p[above]
        below = q_new < lower
        if below.any():
            q_new[below] = 2.0 * lower[below] - q_new[below]
            p[below] = -p[below]
        if not (above.any() or below.any()):
            return q_new, p
    raise RuntimeError(f"position still infeasible after {MAX_REFLECTIONS} reflections")


def _check_eps(eps):
    if isinstance(eps, float):
        if eps == 0.0:
            raise ValueError("stepsize must be non-zero")
    elif np.any(np.asarray(eps) == 0):
        raise ValueError("stepsize must be non-zero")


def _report(q, p, target, kinetic, evals) -> StepReport:
    state = PhaseState(q, p)
    h = target.potential(q) + kinetic.energy(p)
    return StepReport(state, h, evals)


def _grad_checked(target: TargetDensity, q: np.ndarray) -> np.ndarray:
    g = target.gradient(q)
    if not np.all(np.isfinite(g)):
        raise NonFiniteEnergyError(f"gradient not finite at q={q}")
    return g


def euler_step(state: PhaseState, target: TargetDensity, kinetic: KineticSpec, eps) -> StepReport:
    """Plain Euler: momentum and position both updated from the old state."""
    _check_eps(eps)
    g = _grad_checked(target, state.q)
    p_new = state.p - eps * g
    q_new = state.q + eps * kinetic.velocity(state.p)
    return _report(q_new, p_new, target, kinetic, 1)


def modified_euler_step(
    state: PhaseState, target: TargetDensity, kinetic: KineticSpec, eps
) -> StepReport:
    """Euler with the position update using the freshly updated momentum."""
    _check_eps(eps)
    g = _grad_checked(target, state.q)
    p_new = state.p - eps * g
    q_new = state.q + eps * kinetic.velocity(p_new)
    return _report(q_new, p_new, target, kinetic, 1)


def leapfrog_step(state: PhaseState, target: TargetDensity, kinetic: KineticSpec, eps) -> StepReport:
    """Half kick, drift, half kick."""
    _check_eps(eps)
    p_half = state.p - 0.5 * eps * _grad_checked(target, state.q)
    q_new = state.q + eps * kinetic.velocity(p_half)
    p_new = p_half - 0.5 * eps * _grad_checked(target, q_new)
    return _report(q_new, p_new, target, kinetic, 2)


def constrained_position_update(
    state_after_half_kick: PhaseState,
    kinetic: KineticSpec,
    eps,
    constraints: Optional[tuple[Sequence[float], Sequence[float]]] = None,
) -> PhaseState:
    """Full position step of leapfrog that bounces off box walls.

    Args:
        state_after_half_kick: Position and half-step momentum.
        kinetic: Supplies the masses.
        eps: Stepsize.
        constraints: ``(lower, upper)`` bounds; use infinities for open sides.
    """
    q, p = state_after_half_kick.q, state_after_half_kick.p
    q_new = q + eps * kinetic.velocity(p)
    if constraints is None:
        return PhaseState(q_new, p)
    dim = q.size
    lower = np.broadcast_to(np.asarray(constraints[0], dtype=np.float64), (dim,))
    upper = np.broadcast_to(np.asarray(constraints[1], dtype=np.float64), (dim,))
    if np.any(lower >= upper):
        raise ValueError("constraints need lower < upper")
    return PhaseState(*reflect(q_new, p, lower, upper))


def _run(
    dyn: Dynamics,
    q: np.ndarray,
    p: np.ndarray,
    n_steps: int,
    step: Callable,
    g: np.ndarray,
    evals: int,
    record: bool,
) -> Trajectory:
    """Drive ``step`` for ``n_steps`` with energy tracking and divergence guard."""
    h0 = dyn.energy(q, p)
    energies = np.empty(n_steps + 1)
    energies[0] = h0
    if record:
        path_q = np.empty((n_steps + 1, q.size))
        path_p = np.empty((n_steps + 1, q.size))
        path_q[0], path_p[0] = q, p
    divergent = not np.isfinite(h0)
    taken = 0
    while taken < n_steps and not divergent:
        q, p, g, used = step(q, p, g, taken)
        evals += used
        taken += 1
        h = dyn.energy(q, p)
        energies[taken] = h
        if record:
            path_q[taken], path_p[taken] = q, p
        if not np.isfinite(h) or abs(h - h0) > DIVERGENCE_THRESHOLD:
            divergent = True
    energies = energies[: taken + 1]
    delta = energies[-1] - h0 if np.isfinite(h0) else np.inf
    out = Trajectory(
        PhaseState(q, p), float(delta), evals, divergent, energies, steps_taken=taken
    )
    if record:
        out.path_q = path_q[: taken + 1]
        out.path_p = path_p[: taken + 1]
    return out


def leapfrog_trajectory(
    state: PhaseState,
    target: TargetDensity,
    kinetic: KineticSpec,
    eps,
    L: int,
    *,
    record: bool = False,
) -> Trajectory:
    """``L`` leapfrog steps sharing gradients between adjacent half kicks.

    Costs ``L + 1`` gradient evaluations. Box constraints on the target are
    handled by reflection; a surrogate on the target drives the dynamics while
    energies use the exact potential.
    """
    if L < 1:
        raise ValueError("a trajectory needs at least one step")
    _check_eps(eps)
    dyn = Dynamics(target, kinetic)

    def step(q, p, g, _i):
        q, p, g = dyn.step(q, p, g, eps)
        return q, p, g, 1

    return _run(dyn, state.q, state.p, L, step, dyn.grad(state.q), 1, record)


@dataclass(frozen=True)
class SplitScheme:
    """How to split the potential for :func:`split_trajectory`.

    Attributes:
        kind: ``"analytic_substep"``, ``"nested_cheap_expensive"`` or
            ``"data_subsets"``.
        inner_count: Number of inner steps (nested) or data subsets.
        analytic_solver: Exact flow ``(q, p, t) -> (q, p)`` of ``U0 + K``.
        randomize_order: Draw a fresh subset order for every trajectory.
    """

    kind: str
    inner_count: int = 1
    analytic_solver: Optional[FlowMap] = None
    randomize_order: bool = True

    KINDS = ("analytic_substep", "nested_cheap_expensive", "data_subsets")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown split kind {self.kind!r}")
        if self.inner_count < 1:
            raise ValueError("inner_count must be at least 1")
        if self.kind == "analytic_substep" and self.analytic_solver is None:
            raise ValueError("analytic split needs an exact flow solver")


def gaussian_flow(mean, variances, masses) -> FlowMap:
    """Exact flow of ``sum((q-mean)**2 / 2 var) + sum(p**2 / 2 m)``.

    Each coordinate rotates in phase space at angular frequency
    ``1 / sqrt(var * m)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    omega = 1.0 / np.sqrt(variances * masses)
    m_omega = masses * omega

    def flow(q, p, t):
        x = q - mean
        c, s = np.cos(omega * t), np.sin(omega * t)
        return mean + x * c + p / m_omega * s, -m_omega * x * s + p * c

    return flow


def split_trajectory(
    state: PhaseState,
    target: TargetDensity,
    kinetic: KineticSpec,
    eps,
    L: int,
    scheme: SplitScheme,
    *,
    rng: Optional[np.random.Generator] = None,
    order: Optional[Sequence[int]] = None,
    record: bool = False,
) -> Trajectory:
    """Trajectory from a splitting of the Hamiltonian.

    ``gradient_evals`` counts evaluations of the expensive part only: ``U1``
    for the analytic and nested kinds, any subset potential for data subsets.
    ``order`` fixes the subset order for data subsets; otherwise it is drawn
    from ``rng`` when ``scheme.randomize_order`` is set.
    """
    if L < 1:
        raise ValueError("a trajectory needs at least one step")
    _check_eps(eps)
    parts = target.split_parts
    dyn = Dynamics(target, kinetic)

    if scheme.kind in ("analytic_substep", "nested_cheap_expensive"):
        if len(parts) != 2:
            raise ValueError(f"{scheme.kind} needs split parts [U0, U1], got {len(parts)}")
        grad0, grad1 = parts[0][1], parts[1][1]

        if scheme.kind == "analytic_substep":
            solver = scheme.analytic_solver

            def middle(q, p):
                return solver(q, p, eps)

        else:
            inner = Dynamics(target, kinetic, gradient=grad0)
            n_inner = scheme.inner_count
            h = eps / n_inner

            def middle(q, p):
                g0 = grad0(q)
                for _ in range(n_inner):
                    q, p, g0 = inner.step(q, p, g0, h)
                return q, p

        def step(q, p, g, _i):
            p = p - (0.5 * eps) * g
            q, p = middle(q, p)
            g = grad1(q)
            p = p - (0.5 * eps) * g
            return q, p, g, 1

        return _run(dyn, state.q, state.p, L, step, grad1(state.q), 1, record)

    n_sub = scheme.inner_count
    if len(parts) != n_sub:
        raise ValueError(f"data_subsets with {n_sub} subsets needs {n_sub} split parts")
    if order is None:
        if scheme.randomize_order:
            if rng is None:
                raise ValueError("randomized subset order needs an rng")
            order = rng.permutation(n_sub)
        else:
            order = np.arange(n_sub)
    order = [int(i) for i in order]
    h = eps / n_sub
    scaled = [Dynamics(target, kinetic, gradient=_scaled(parts[m][1], n_sub)) for m in order]

    def step(q, p, _g, _i):
        for sub in scaled:
            q, p, _ = sub.step(q, p, sub.grad(q), h)
        return q, p, None, 2 * n_sub

    return _run(dyn, state.q, state.p, L, step, None, 0, record)


def _scaled(grad, factor):
    return lambda q: factor * grad(q)


def tempered_trajectory(
    state: PhaseState,
    target: TargetDensity,
    kinetic: KineticSpec,
    eps,
    L: int,
    alpha: float,
    *,
    record: bool = False,
) -> Trajectory:
    """Leapfrog trajectory that heats the momentum, then cools it back down.

    Steps in the first half multiply ``p`` by ``sqrt(alpha)`` before the first
    half kick and after the second; steps in the second half divide at the same
    places. With odd ``L`` the middle step multiplies before and divides after.
    The overall map keeps unit Jacobian determinant.
    """
    if L < 1:
        raise ValueError("a trajectory needs at least one step")
    if not alpha > 0:
        raise ValueError("tempering factor must be positive")
    dyn = Dynamics(target, kinetic)
    root = math.sqrt(alpha)
    half = L // 2
    middle = L % 2 == 1

    def step(q, p, g, i):
        if i < half:
            before, after = root, root
        elif middle and i == half:
            before, after = root, 1.0 / root
        else:
            before, after = 1.0 / root, 1.0 / root
        p = p * before
        q, p, g = dyn.step(q, p, g, eps)
        return q, p * after, g, 1

    return _run(dyn, state.q, state.p, L, step, dyn.grad(state.q), 1, record)


def stability_eigenvalues(sigma: float, eps: float) -> tuple[float, float]:
    """Eigenvalue magnitudes of one leapfrog step for ``q**2/2sigma**2 + p**2/2``.

    Returned smallest first. Both equal one exactly when ``eps < 2 sigma``.
    """
    if not (sigma > 0 and eps > 0):
        raise ValueError("sigma and eps must be positive")
    r = eps / sigma
    centre = 1.0 - r * r / 2.0
    spread = r * np.sqrt(complex(r * r / 4.0 - 1.0))
    mags = sorted((abs(centre + spread), abs(centre - spread)))
    return float(mags[0]), float(mags[1])


def leapfrog_matrix(sigma: float, eps: float) -> np.ndarray:
    """One leapfrog step for the 1D Gaussian as a 2x2 linear map of ``(q, p)``."""
    a = 1.0 - eps * eps / (2.0 * sigma**2)
    return np.array(
        [[a, eps], [-eps / sigma**2 + eps**3 / (4.0 * sigma**4), a]], dtype=np.float64
    )
