"""Phase states, target densities, kinetic energies and the Hamiltonian."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ScalarFn = Callable[[np.ndarray], float]
VectorFn = Callable[[np.ndarray], np.ndarray]


class NonFiniteEnergyError(ValueError):
    """Raised when an energy or gradient evaluates to NaN or infinity."""


def _as_vector(x, name: str) -> np.ndarray:
    if type(x) is np.ndarray and x.ndim == 1 and x.dtype == np.float64:
        return x
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Position ``q`` and momentum ``p`` of equal length."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q, p = self.q, self.p
        if (
            type(q) is np.ndarray
            and type(p) is np.ndarray
            and q.dtype == np.float64
            and p.dtype == np.float64
            and q.ndim == 1
            and q.shape == p.shape
            and q.size
        ):
            return
        q = _as_vector(q, "q")
        p = _as_vector(p, "p")
        if q.shape != p.shape:
            raise ValueError(f"q and p differ in length: {q.size} != {p.size}")
        if q.size < 1:
            raise ValueError("phase state needs at least one dimension")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.q.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p)))

    def flipped(self) -> "PhaseState":
        """Same position, negated momentum."""
        return PhaseState(self.q, -self.p)


class TargetDensity:
    """A distribution over ``q`` given through its potential energy ``U(q)``.

    The potential is minus the log density up to an additive constant.
    Positions outside the optional box constraints get infinite potential.

    Args:
        dim: Number of position coordinates.
        potential: Function mapping ``q`` to ``U(q)``.
        gradient: Function mapping ``q`` to the gradient of ``U``.
        lower: Per-coordinate lower bounds (``-inf`` where unbounded).
        upper: Per-coordinate upper bounds (``+inf`` where unbounded).
        split_parts: Ordered ``(potential, gradient)`` pairs whose potentials
            sum to ``potential``.
        surrogate: Cheaper ``(potential, gradient)`` pair used in place of the
            exact one when simulating trajectories. Acceptance decisions always
            use the exact potential.
        name: Optional identifier.
    """

    def __init__(
        self,
        dim: int,
        potential: ScalarFn,
        gradient: VectorFn,
        *,
        lower: Optional[Sequence[float]] = None,
        upper: Optional[Sequence[float]] = None,
        split_parts: Optional[Sequence[tuple[ScalarFn, VectorFn]]] = None,
        surrogate: Optional[tuple[ScalarFn, VectorFn]] = None,
        name: str = "",
    ):
        if int(dim) < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self._potential = potential
        self._gradient = gradient
        self.lower = self._bound(lower, -np.inf)
        self.upper = self._bound(upper, np.inf)
        both = np.isfinite(self.lower) & np.isfinite(self.upper)
        if np.any(self.lower[both] >= self.upper[both]):
            raise ValueError("every doubly bounded coordinate needs lower < upper")
        self._constrained = bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))
        self.split_parts = tuple(split_parts) if split_parts else ()
        self.surrogate = surrogate
        self.name = name

    def _bound(self, values, fill: float) -> np.ndarray:
        if values is None:
            return np.full(self.dim, fill)
        arr = np.broadcast_to(np.asarray(values, dtype=np.float64), (self.dim,)).copy()
        arr.setflags(write=False)
        return arr

    @property
    def constrained(self) -> bool:
        return self._constrained

    def feasible(self, q: np.ndarray) -> bool:
        return bool(np.all(q >= self.lower) and np.all(q <= self.upper))

    def potential(self, q: np.ndarray) -> float:
        if self._constrained and not self.feasible(q):
            return np.inf
        return float(self._potential(q))

    def gradient(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(self._gradient(q), dtype=np.float64)

    def dynamics_gradient(self) -> VectorFn:
        """Gradient used to simulate trajectories (the surrogate's if present)."""
        if self.surrogate is not None:
            return self.surrogate[1]
        return self.gradient

    def __repr__(self) -> str:
        label = self.name or "anonymous"
        return f"TargetDensity({label!r}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class KineticSpec:
    """Diagonal mass matrix; ``K(p) = sum(p**2 / (2 m))``."""

    masses: np.ndarray = field()

    def __post_init__(self):
        m = _as_vector(self.masses, "masses")
        if m.size < 1:
            raise ValueError("kinetic energy needs at least one mass")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("masses must be positive and finite")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "_inv_masses", 1.0 / m)
        object.__setattr__(self, "_sqrt_masses", np.sqrt(m))
        object.__setattr__(self, "is_unit", bool(np.all(m == 1.0)))

    @classmethod
    def unit(cls, dim: int) -> "KineticSpec":
        return cls(np.ones(dim))

    @property
    def dim(self) -> int:
        return self.masses.size

    @property
    def inv_masses(self) -> np.ndarray:
        return self._inv_masses

    def energy(self, p: np.ndarray) -> float:
        return float(0.5 * np.dot(p * p, self._inv_masses))

    def velocity(self, p: np.ndarray) -> np.ndarray:
        return p * self._inv_masses


@dataclass(frozen=True, eq=False)
class CanonicalDensity:
    """Joint density ``exp(-(U(q) + K(p)) / T)`` over phase space.

    Samplers fix ``temperature`` at one; it is kept so other temperatures
    can be represented.
    """

    target: TargetDensity
    kinetic: KineticSpec
    temperature: float = 1.0

    def __post_init__(self):
        if self.target.dim != self.kinetic.dim:
            raise ValueError(
                f"target has {self.target.dim} coordinates but kinetic energy has "
                f"{self.kinetic.dim}"
            )
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def dim(self) -> int:
        return self.target.dim

    def energy(self, q: np.ndarray, p: np.ndarray) -> float:
        """``U(q) + K(p)`` without validation; may be infinite."""
        return self.target.potential(q) + self.kinetic.energy(p)

    def log_density(self, q: np.ndarray, p: np.ndarray) -> float:
        return -self.energy(q, p) / self.temperature


def hamiltonian(state: PhaseState, target: TargetDensity, kinetic: KineticSpec) -> float:
    """Total energy ``U(q) + K(p)`` of a phase state."""
    if state.dim != target.dim or state.dim != kinetic.dim:
        raise ValueError(
            f"dimension mismatch: state {state.dim}, target {target.dim}, "
            f"kinetic {kinetic.dim}"
        )
    u = target.potential(state.q)
    if not np.isfinite(u):
        raise NonFiniteEnergyError(f"potential is {u} at q={state.q}")
    return u + kinetic.energy(state.p)


def sample_momentum(kinetic: KineticSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw ``p`` with independent ``Normal(0, m_i)`` coordinates."""
    z = rng.standard_normal(kinetic.dim)
    return z if kinetic.is_unit else kinetic._sqrt_masses * z


def check_gradient(target: TargetDensity, q, h: float = 1e-5) -> float:
    """Largest scaled gap between the analytic gradient and central differences.

    Each coordinate contributes ``|g_i - fd_i| / (1 + |g_i|)``.
    """
    if not h > 0:
        raise ValueError("finite-difference step must be positive")
    q = _as_vector(q, "q")
    analytic = target.gradient(q)
    worst = 0.0
    for i in range(q.size):
        step = np.zeros_like(q)
        step[i] = h
        up = target.potential(q + step)
        down = target.potential(q - step)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteEnergyError(f"potential not finite around coordinate {i}")
        fd = (up - down) / (2.0 * h)
        worst = max(worst, abs(analytic[i] - fd) / (1.0 + abs(analytic[i])))
    return worst
