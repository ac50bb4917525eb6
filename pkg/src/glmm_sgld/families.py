"""Exponential-family response distributions with canonical links.

Each family fixes the functions (a, b, c) in

    p(y | theta, phi) = exp{ (y * theta - b(theta)) / a(phi) + c(y, phi) },

where theta is the canonical parameter. With the canonical link the linear
predictor eta equals theta and the conditional mean is b'(theta), so the
observation-level score with respect to eta is (y - b'(eta)) / a(phi).
"""
from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "Family",
    "Gaussian",
    "BernoulliLogit",
    "Poisson",
    "FAMILIES",
    "get_family",
]


class Family(ABC):
    """Base class for exponential families used as GLMM response models."""

    name: str = ""
    has_dispersion: bool = False

    @abstractmethod
    def b(self, theta):
        """Log-partition function b(theta)."""

    @abstractmethod
    def mean(self, theta):
        """Conditional mean b'(theta), i.e. the inverse canonical link."""

    def a(self, phi: float) -> float:
        """Dispersion scaling a(phi); constant 1 for one-parameter families."""
        return 1.0

    def a_prime(self, phi: float) -> float:
        return 0.0

    def c(self, y, phi: float):
        """Normalizing term c(y, phi)."""
        return np.zeros_like(np.asarray(y, dtype=float))

    def c_phi(self, y, phi: float):
        """Partial derivative of c(y, phi) in phi. Only meaningful when
        has_dispersion is True."""
        raise NotImplementedError(f"{self.name} has no free dispersion")

    @abstractmethod
    def sample(self, rng: np.random.Generator, mu, phi: float):
        """Draw responses with conditional mean mu."""

    def loglik(self, y, theta, phi: float):
        """Observation-wise log density at canonical parameter theta."""
        y = np.asarray(y, dtype=float)
        return (y * theta - self.b(theta)) / self.a(phi) + self.c(y, phi)

    def __repr__(self) -> str:  # pragma: no cover
        return f"{type(self).__name__}()"


class Gaussian(Family):
    """Normal responses, identity link, free variance phi = sigma^2."""

    name = "gaussian"
    has_dispersion = True

    def b(self, theta):
        theta = np.asarray(theta, dtype=float)
        return 0.5 * theta**2

    def mean(self, theta):
        return np.asarray(theta, dtype=float)

    def a(self, phi: float) -> float:
        return float(phi)

    def a_prime(self, phi: float) -> float:
        return 1.0

    def c(self, y, phi: float):
        y = np.asarray(y, dtype=float)
        return -(y**2) / (2.0 * phi) - 0.5 * np.log(2.0 * np.pi * phi)

    def c_phi(self, y, phi: float):
        y = np.asarray(y, dtype=float)
        return y**2 / (2.0 * phi**2) - 0.5 / phi

    def sample(self, rng, mu, phi: float):
        return rng.normal(mu, np.sqrt(phi))


class BernoulliLogit(Family):
    """Binary responses with logit link."""

    name = "bernoulli-logit"
    has_dispersion = False

    def b(self, theta):
        # log(1 + e^theta), evaluated as theta + log1p(e^-theta) once theta is
        # large so b(800) stays finite.
        theta = np.asarray(theta, dtype=float)
        return np.maximum(theta, 0.0) + np.log1p(np.exp(-np.abs(theta)))

    def mean(self, theta):
        return expit(theta)

    def sample(self, rng, mu, phi: float):
        return (rng.random(np.shape(mu)) < mu).astype(float)


class Poisson(Family):
    """Count responses with log link."""

    name = "poisson"
    has_dispersion = False

    def b(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def mean(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def c(self, y, phi: float):
        return -gammaln(np.asarray(y, dtype=float) + 1.0)

    def sample(self, rng, mu, phi: float):
        return rng.poisson(mu).astype(float)


FAMILIES: dict[str, type[Family]] = {
    Gaussian.name: Gaussian,
    BernoulliLogit.name: BernoulliLogit,
    Poisson.name: Poisson,
}


def get_family(name: str) -> Family:
    """Instantiate a family by name. Raises KeyError with options listed."""
    try:
        return FAMILIES[name]()
    except KeyError:
        raise KeyError(
            f"unknown family {name!r}; available: {sorted(FAMILIES)}"
        ) from None
