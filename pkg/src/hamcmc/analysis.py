"""Scaling theory for large dimension and chain diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_ndtr

from .samplers import ChainRecord

COST_EXPONENTS = {"rwm": 1.0, "hmc": 0.25, "lmc": 1.0 / 3.0}
LOG_MU_BOUNDS = (-10.0, 5.0)


@dataclass(frozen=True)
class ScalingResult:
    mu: float
    acceptance: float
    cost: float
    method: str


@dataclass
class DiagnosticsReport:
    """Summary statistics of a chain after burn-in.

    ``tau`` and ``ess`` are NaN for coordinates whose trace is constant.
    """

    n_samples: int
    means: np.ndarray
    sds: np.ndarray
    rejection_rate: float
    tau: np.ndarray
    ess: np.ndarray
    gradient_evals: int
    divergences: int
    delta_h_mean: float
    delta_h_var: float


def acceptance_from_mu(mu: float) -> float:
    """Large-dimension acceptance rate ``2 Phi(-sqrt(mu / 2))`` for mean energy error ``mu``."""
    if mu < 0:
        raise ValueError("mean energy error must be non-negative")
    return math.erfc(math.sqrt(mu) / 2.0)


def scaling_cost(mu: float, method: str) -> ScalingResult:
    """Cost per independent point, up to a constant, at mean energy error ``mu``."""
    if method not in COST_EXPONENTS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(COST_EXPONENTS)}")
    a = acceptance_from_mu(mu)
    cost = 1.0 / (a * mu ** COST_EXPONENTS[method]) if mu > 0 else math.inf
    return ScalingResult(mu, a, cost, method)


def optimal_acceptance(method: str, start: Optional[float] = None) -> tuple[float, float]:
    """Mean energy error and acceptance rate that minimize the method's cost.

    Golden-section search over ``log(mu)``. Without ``start`` the search is
    bracketed by ``LOG_MU_BOUNDS`` around ``mu = 1``; with ``start`` the
    bracket is grown downhill from that point.
    """
    if method not in COST_EXPONENTS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(COST_EXPONENTS)}")
    if start is not None and not start > 0:
        raise ValueError("starting point must be positive")
    lo, hi = LOG_MU_BOUNDS
    exponent = COST_EXPONENTS[method]

    def log_cost(log_mu):
        log_a = math.log(2.0) + log_ndtr(-math.sqrt(math.exp(log_mu) / 2.0))
        return -log_a - exponent * log_mu

    if start is None:
        bracket = (lo, 0.0, hi)
    else:
        bracket = (math.log(start), math.log(start) + 0.5)
    res = minimize_scalar(log_cost, bracket=bracket, method="golden", tol=1e-6)
    mu = math.exp(res.x)
    return mu, acceptance_from_mu(mu)


def autocorrelation(series: np.ndarray) -> np.ndarray:
    """Sample autocorrelation at every lag, via FFT."""
    x = np.asarray(series, dtype=np.float64)
    x = x - x.mean()
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / acov[0]


def integrated_autocorrelation(series) -> float:
    """``1 + 2 sum(rho_k)`` truncated by the initial positive sequence rule.

    Autocorrelations are summed in adjacent pairs ``rho_{2m} + rho_{2m+1}``
    until the first pair that is not positive.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("need a one-dimensional series of at least 100 values")
    if np.ptp(x) == 0:
        raise ValueError("autocorrelation is undefined for a constant series")
    rho = autocorrelation(x)
    n_pairs = (rho.size - 1) // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    nonpositive = np.flatnonzero(pairs <= 0)
    stop = nonpositive[0] if nonpositive.size else n_pairs
    # sum of pairs from lag 0 counts rho_0 = 1 once, so tau = 2 * sum - 1
    tau = 2.0 * pairs[:stop].sum() - 1.0
    return float(max(tau, 1.0 / x.size))


def empirical_delta_stats(chain) -> dict:
    """Moments of the energy error over all proposals, accepted or not.

    Accepts a :class:`ChainRecord` or a plain array of energy errors.
    Non-finite values (divergent trajectories) are left out and counted.
    """
    values = chain.delta_h if isinstance(chain, ChainRecord) else np.asarray(chain, float)
    if values.size == 0:
        raise ValueError("no energy errors recorded")
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ValueError("every recorded energy error is non-finite")
    return {
        "mean": float(finite.mean()),
        "var": float(finite.var()),
        "exp_neg_mean": float(np.mean(np.exp(-finite))),
        "n": int(finite.size),
        "n_nonfinite": int(values.size - finite.size),
    }


def summarize(chain: ChainRecord, burn_in: int = 0) -> DiagnosticsReport:
    """Diagnostics for the iterations after ``burn_in``."""
    n = len(chain)
    if n == 0:
        raise ValueError("empty chain")
    if not 0 <= burn_in < n:
        raise ValueError("burn-in must leave at least one iteration")
    pos = chain.positions[burn_in:]
    kept = pos.shape[0]
    tau = np.full(pos.shape[1], np.nan)
    if kept >= 100:
        for j in range(pos.shape[1]):
            if np.ptp(pos[:, j]) > 0:
                tau[j] = integrated_autocorrelation(pos[:, j])
    ess = np.minimum(kept / tau, kept)
    finite = chain.delta_h[burn_in:][np.isfinite(chain.delta_h[burn_in:])]
    return DiagnosticsReport(
        n_samples=kept,
        means=pos.mean(axis=0),
        sds=pos.std(axis=0, ddof=1) if kept > 1 else np.zeros(pos.shape[1]),
        rejection_rate=float(1.0 - chain.acceptance[burn_in:].mean()),
        tau=tau,
        ess=ess,
        gradient_evals=int(chain.gradient_evals[-1]),
        divergences=int(chain.divergent[burn_in:].sum()),
        delta_h_mean=float(finite.mean()) if finite.size else float("nan"),
        delta_h_var=float(finite.var()) if finite.size else float("nan"),
    )


def equilibrium_acceptance(target, method: str, scale: float, q, noise, n_steps: int = 1) -> float:
    """Mean acceptance probability at equilibrium on a replicated target.

    Each row of ``q`` is an exact draw from the target and the matching row of
    ``noise`` is standard normal. For ``"rwm"`` the noise times ``scale`` is
    the proposal step; otherwise it is the momentum and ``n_steps`` leapfrog
    steps of size ``scale`` are taken (one step for ``"lmc"``). Unit masses.
    Keeping ``q`` and ``noise`` fixed across calls gives common random numbers.
    """
    u, du = target.u, target.du
    q = np.asarray(q, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if method == "rwm":
        delta = np.sum(u(q + scale * noise) - u(q), axis=1)
    elif method in ("hmc", "lmc"):
        steps = 1 if method == "lmc" else n_steps
        p = noise
        h0 = np.sum(u(q), axis=1) + 0.5 * np.sum(p * p, axis=1)
        x = q
        g = du(x)
        for _ in range(steps):
            p = p - 0.5 * scale * g
            x = x + scale * p
            g = du(x)
            p = p - 0.5 * scale * g
        delta = np.sum(u(x), axis=1) + 0.5 * np.sum(p * p, axis=1) - h0
    else:
        raise ValueError(f"unknown method {method!r}")
    with np.errstate(over="ignore"):
        return float(np.mean(np.minimum(1.0, np.exp(-delta))))


def tune_scale(
    target,
    method: str,
    acceptance: float,
    rng: np.random.Generator,
    *,
    n_draws: int = 2000,
    trajectory_time: float = 1.0,
    initial: float = 0.5,
) -> tuple[float, float]:
    """Stepsize (or proposal sd) giving the requested equilibrium acceptance.

    Hamiltonian trajectories use ``max(1, round(trajectory_time / scale))``
    steps. The root is found with Brent's method on ``log(scale)`` after
    expanding a bracket from ``initial``.
    """
    from scipy.optimize import brentq

    if not 0 < acceptance < 1:
        raise ValueError("target acceptance must lie strictly between 0 and 1")
    q = target.draw(rng, n_draws)
    noise = rng.standard_normal(q.shape)

    def gap(log_scale):
        scale = math.exp(log_scale)
        steps = max(1, int(round(trajectory_time / scale)))
        return equilibrium_acceptance(target, method, scale, q, noise, steps) - acceptance

    lo = hi = math.log(initial)
    for _ in range(60):
        if gap(lo) > 0:
            break
        lo -= 1.0
    else:
        raise RuntimeError("could not find a scale with high enough acceptance")
    for _ in range(60):
        if gap(hi) < 0:
            break
        hi += 1.0
    else:
        raise RuntimeError("could not find a scale with low enough acceptance")
    log_scale = brentq(gap, lo, hi, xtol=1e-6)
    return math.exp(log_scale), gap(log_scale) + acceptance
