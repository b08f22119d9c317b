"""Experiment distributions and linear reparameterizations."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import TargetDensity

FIGURE_TARGETS = ("gauss1d", "gauss2d_95", "gauss2d_98", "gauss100d", "mixture_fig9")


class GaussianTarget(TargetDensity):
    """Multivariate Gaussian with potential ``(q-mu)' inv(S) (q-mu) / 2``.

    The normalizing constant is dropped. Diagonal covariances are detected and
    handled elementwise.
    """

    def __init__(self, mean, covariance, *, name: str = "", lower=None, upper=None):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        cov = np.asarray(covariance, dtype=np.float64)
        if cov.ndim == 1:
            cov = np.diag(cov)
        dim = mean.size
        if cov.shape != (dim, dim):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {dim}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        factor = cho_factor(cov, lower=True)  # raises LinAlgError if not positive definite
        self.mean = mean
        self.covariance = cov
        self.log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
        self.cholesky = np.tril(factor[0])
        self.centered = not np.any(mean)
        self.diagonal = bool(np.count_nonzero(cov - np.diag(np.diag(cov))) == 0)
        if self.diagonal:
            self.precision_diag = 1.0 / np.diag(cov)
            self.precision = np.diag(self.precision_diag)
        else:
            self.precision = cho_solve(factor, np.eye(dim))
            self.precision = 0.5 * (self.precision + self.precision.T)
        super().__init__(dim, self._u, self._grad_u, name=name, lower=lower, upper=upper)

    def _grad_u(self, q):
        x = q if self.centered else q - self.mean
        if self.diagonal:
            return self.precision_diag * x
        return self.precision @ x

    def _u(self, q):
        x = q if self.centered else q - self.mean
        if self.diagonal:
            return 0.5 * float(np.dot(x * x, self.precision_diag))
        return 0.5 * float(np.dot(x, self.precision @ x))

    def draw(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Exact independent draws, for initializing chains at equilibrium."""
        shape = (self.dim,) if size is None else (size, self.dim)
        z = rng.standard_normal(shape)
        return self.mean + z @ self.cholesky.T

    @property
    def sds(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


class MixtureTarget(TargetDensity):
    """Finite mixture of Gaussians; potential ``-log sum_k w_k N(q; mu_k, S_k)``."""

    def __init__(self, weights, means, covariances, *, name: str = ""):
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0):
            raise ValueError("mixture weights must be positive and sum to one")
        self.weights = weights
        self.components = [GaussianTarget(m, c) for m, c in zip(means, covariances)]
        if len(self.components) != weights.size:
            raise ValueError("need one mean and covariance per weight")
        dim = self.components[0].dim
        self.means = np.array([c.mean for c in self.components])
        self._precisions = np.array([c.precision for c in self.components])
        self._log_norm = np.array(
            [np.log(w) - 0.5 * (dim * np.log(2 * np.pi) + c.log_det)
             for w, c in zip(weights, self.components)]
        )
        self._last = (None, None)
        super().__init__(dim, self._u, self._grad_u, name=name)

    def _terms(self, q):
        # Trajectories evaluate the potential and gradient at the same array
        # object back to back, so one evaluation is kept by identity.
        last_q, last = self._last
        if q is last_q:
            return last
        out = self._evaluate(q)
        self._last = (q, out)
        return out

    def _evaluate(self, q):
        diff = q - self.means
        pd = np.einsum("kij,kj->ki", self._precisions, diff)
        log_terms = self._log_norm - 0.5 * np.einsum("ki,ki->k", diff, pd)
        top = log_terms.max()
        resp = np.exp(log_terms - top)
        total = resp.sum()
        return top + np.log(total), resp / total, pd

    def _u(self, q):
        return -float(self._terms(q)[0])

    def _grad_u(self, q):
        _, resp, pd = self._terms(q)
        return resp @ pd

    def classify(self, q) -> int:
        """Index of the component mean nearest to ``q``."""
        d2 = np.sum((self.means - np.asarray(q)) ** 2, axis=1)
        return int(np.argmin(d2))

    def draw(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        n = 1 if size is None else size
        which = rng.choice(self.weights.size, size=n, p=self.weights)
        out = np.array([self.components[k].draw(rng) for k in which])
        return out[0] if size is None else out


class ReplicatedTarget(TargetDensity):
    """``d`` independent copies of a one-dimensional potential ``u``.

    ``u`` and ``du`` must act elementwise on arrays.
    """

    def __init__(self, u: Callable, du: Callable, dim: int, *, name: str = ""):
        self.u = u
        self.du = du
        super().__init__(dim, lambda q: float(np.sum(u(q))), du, name=name)

    @classmethod
    def gaussian(cls, dim: int, sigma: float = 1.0) -> "ReplicatedTarget":
        prec = 1.0 / sigma**2
        target = cls(
            lambda x: 0.5 * prec * x * x,
            lambda x: prec * x,
            dim,
            name=f"replicated_gaussian_{dim}",
        )
        target.sigma = sigma
        return target

    def draw(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        sigma = getattr(self, "sigma", None)
        if sigma is None:
            raise NotImplementedError("exact draws only for replicated Gaussians")
        shape = (self.dim,) if size is None else (size, self.dim)
        return sigma * rng.standard_normal(shape)


def correlated_gaussian_2d(rho: float, name: str = "") -> GaussianTarget:
    return GaussianTarget(np.zeros(2), [[1.0, rho], [rho, 1.0]], name=name)


def make_figure_targets(name: str) -> TargetDensity:
    """The distributions used in the demonstrations, by stable identifier."""
    if name == "gauss1d":
        return GaussianTarget([0.0], [[1.0]], name=name)
    if name == "gauss2d_95":
        return correlated_gaussian_2d(0.95, name)
    if name == "gauss2d_98":
        return correlated_gaussian_2d(0.98, name)
    if name == "gauss100d":
        sds = np.arange(1, 101) / 100.0
        return GaussianTarget(np.zeros(100), sds**2, name=name)
    if name == "mixture_fig9":
        return MixtureTarget(
            [0.5, 0.5],
            [[0.0, 0.0], [10.0, 10.0]],
            [np.eye(2), 2.0 * np.eye(2)],
            name=name,
        )
    raise KeyError(f"unknown target {name!r}; choose from {', '.join(FIGURE_TARGETS)}")


def _check_invertible(A: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != A.shape[1]:
        raise ValueError("transformation must be square")
    if np.linalg.cond(A) > 1e12:
        raise np.linalg.LinAlgError("transformation matrix is singular")
    return A


def apply_linear_transform(target: TargetDensity, A) -> TargetDensity:
    """Target over ``q' = A q`` with potential ``U(inv(A) q')``.

    The constant ``log|det A|`` is left out of the new potential. Split parts
    and surrogates are carried over. Box-constrained targets are rejected
    because a general linear map does not keep boxes axis-aligned.
    """
    A = _check_invertible(A)
    if A.shape[0] != target.dim:
        raise ValueError("transformation size does not match target dimension")
    if target.constrained:
        raise ValueError("cannot transform a box-constrained target")
    A_inv = np.linalg.inv(A)

    def pull(pair):
        u, du = pair
        return (lambda qp: u(A_inv @ qp), lambda qp: A_inv.T @ du(A_inv @ qp))

    u, du = pull((target.potential, target.gradient))
    parts = [pull(part) for part in target.split_parts] or None
    surrogate = pull(target.surrogate) if target.surrogate is not None else None
    return TargetDensity(
        target.dim,
        u,
        du,
        split_parts=parts,
        surrogate=surrogate,
        name=f"{target.name}_transformed" if target.name else "",
    )


def transformed_kinetic(M, A) -> np.ndarray:
    """Mass matrix ``inv(A).T M inv(A)`` matching momenta ``inv(A.T) p``."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = np.diag(M)
    A = _check_invertible(A)
    if np.any(np.linalg.eigvalsh(0.5 * (M + M.T)) <= 0):
        raise ValueError("mass matrix must be positive definite")
    A_inv = np.linalg.inv(A)
    return A_inv.T @ M @ A_inv


def multiple_stepsize_plan(scales: Sequence[float], eps: float) -> np.ndarray:
    """Per-coordinate stepsizes ``s_i * eps`` for use with unit masses.

    Equivalent to stepsize ``eps`` with masses ``1 / s_i**2`` once momenta
    are rescaled as ``s_i * p_i``.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if np.any(scales <= 0):
        raise ValueError("scales must be positive")
    return scales * eps
