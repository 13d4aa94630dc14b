"""Gaussian and Poisson (transmission CT) measurement models."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import BadShapeError, NonFiniteError
from .operators import smallest_eigenvalue
from .tensor import gaussian_vector


class Likelihood:
    kind = "abstract"

    def __init__(self, operator, y):
        self.operator = operator
        y = np.asarray(y, dtype=np.float64)
        if y.shape != operator.output_shape:
            raise BadShapeError(f"observation shape {y.shape} != operator output {operator.output_shape}")
        self.y = y

    def grad_log_likelihood(self, x):
        raise NotImplementedError

    def log_likelihood(self, x):
        raise NotImplementedError

    def lipschitz_constant(self):
        return None


class GaussianLikelihood(Likelihood):
    """``y = A x + n`` with ``n ~ N(0, sigma^2 I)``."""

    kind = "gaussian"

    def __init__(self, operator, y, sigma):
        super().__init__(operator, y)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def grad_log_likelihood(self, x):
        return self.operator.adjoint(self.y - self.operator.apply(x)) / self.sigma ** 2

    def log_likelihood(self, x):
        r = self.y - self.operator.apply(x)
        axes = tuple(range(r.ndim - len(self.operator.output_shape), r.ndim))
        return -0.5 * np.sum(r * r, axis=axes) / self.sigma ** 2

    def lipschitz_constant(self):
        return self.operator.norm() ** 2 / self.sigma ** 2

    def strong_convexity(self):
        """Smallest eigenvalue of ``A^T A / sigma^2`` from the explicit matrix."""
        a = self.operator.to_dense()
        return smallest_eigenvalue(a.T @ a / self.sigma ** 2)


class PoissonLikelihood(Likelihood):
    """Photon-count model ``N1 ~ Poisson(N0 exp(-mu A x))``, ``y = -log(N1/N0)/mu``.

    Uses the potential ``J(x) = sum_i N0 exp(-mu (Ax)_i) + N0 exp(-mu y_i) (mu (Ax)_i - log N0)``;
    ``A x`` is clamped to ``[-50/mu, 50/mu]`` before exponentiation.
    """

    kind = "poisson"

    def __init__(self, operator, y, n0=4096.0, mu=0.05):
        super().__init__(operator, y)
        if n0 <= 0 or mu <= 0:
            raise ValueError("n0 and mu must be positive")
        self.n0 = float(n0)
        self.mu = float(mu)
        self._ey = np.exp(-self.mu * self.y)

    def _proj(self, x):
        bound = 50.0 / self.mu
        return np.clip(self.operator.apply(x), -bound, bound)

    def potential(self, x):
        ax = self._proj(x)
        terms = self.n0 * np.exp(-self.mu * ax) + self._ey * self.n0 * (self.mu * ax - math.log(self.n0))
        axes = tuple(range(terms.ndim - len(self.operator.output_shape), terms.ndim))
        return np.sum(terms, axis=axes)

    def log_likelihood(self, x):
        return -self.potential(x)

    def grad_log_likelihood(self, x):
        ax = self._proj(x)
        r = self.mu * self.n0 * (self._ey - np.exp(-self.mu * ax))
        if not np.all(np.isfinite(r)):
            raise NonFiniteError("Poisson likelihood gradient overflowed")
        return -self.operator.adjoint(r)

    def lipschitz_constant(self):
        # not globally Lipschitz
        return None


def grad_log_likelihood(lik, x):
    return lik.grad_log_likelihood(x)


def lipschitz_constant(lik):
    return lik.lipschitz_constant()


def simulate_observation(kind, operator, x_true, rng, sigma=0.0, n0=4096.0, mu=0.05):
    """Noisy measurement of ``x_true`` under the named noise model."""
    ax = operator.apply(np.asarray(x_true, dtype=np.float64))
    if kind == "gaussian":
        if sigma == 0:
            return ax
        return ax + sigma * gaussian_vector(rng, ax.shape)
    if kind == "poisson":
        counts = rng.poisson(n0 * np.exp(-mu * ax)).astype(np.float64)
        counts = np.maximum(counts, 1.0)
        return -np.log(counts / n0) / mu
    raise ValueError(f"unknown likelihood kind {kind!r}")
