"""Analytic score models.

Every model exposes ``score(x, sigma)`` on an ``(N, d)`` batch and returns the
gradient of the log-density of the target smoothed by ``N(0, sigma^2 I)``.
Mixtures additionally expose the parameters the compiled level kernel needs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._backend import kernels
from .errors import InvalidInputError
from .rng import RngStream


class ScoreQuery(NamedTuple):
    position: np.ndarray
    noise_level: float = 0.0


def _as_batch(x, dim: int) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidInputError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return arr


def _check_sigma(sigma: float) -> float:
    sigma = float(sigma)
    if not sigma >= 0.0:
        raise InvalidInputError(f"noise level must be >= 0, got {sigma}")
    return sigma


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted isotropic Gaussians sharing covariance ``base_variance * I``."""

    weights: np.ndarray
    means: np.ndarray
    base_variance: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        if mu.ndim != 2 or mu.shape[0] != w.shape[0] or mu.shape[1] < 1:
            raise InvalidInputError("means must be a (K, d) array matching the K weights")
        if w.size == 0:
            raise InvalidInputError("mixture needs at least one component")
        if np.any(~(w > 0)):
            raise InvalidInputError("mixture weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"mixture weights must sum to 1, got {w.sum():.15g}")
        if not self.base_variance > 0:
            raise InvalidInputError("base_variance must be positive")
        w.setflags(write=False)
        mu = np.ascontiguousarray(mu)
        mu.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "base_variance", float(self.base_variance))
        logw = np.log(w)
        logw.setflags(write=False)
        object.__setattr__(self, "_logw", logw)

    @classmethod
    def from_components(cls, components: Sequence[tuple[float, Sequence[float]]], base_variance: float = 1.0):
        weights = [c[0] for c in components]
        means = [list(c[1]) for c in components]
        return cls(np.array(weights), np.array(means), base_variance)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def variance(self, sigma: float = 0.0) -> float:
        return self.base_variance + _check_sigma(sigma) ** 2

    def log_density(self, x, sigma: float = 0.0) -> np.ndarray:
        x = _as_batch(x, self.dim)
        v = self.variance(sigma)
        sq = ((x[:, None, :] - self.means[None]) ** 2).sum(axis=-1)
        lg = self._logw[None, :] - 0.5 * sq / v
        mx = lg.max(axis=1)
        lse = mx + np.log(np.exp(lg - mx[:, None]).sum(axis=1))
        return lse - 0.5 * self.dim * np.log(2.0 * np.pi * v)

    def score(self, x, sigma: float = 0.0) -> np.ndarray:
        x = _as_batch(x, self.dim)
        return kernels.gmm_score(x, self._logw, self.means, self.variance(sigma))

    def kernel_params(self, sigma: float):
        return self._logw, self.means, self.variance(sigma), 0.0, None

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        if n < 1:
            raise InvalidInputError("sample count must be >= 1")
        gen = rng.generator()
        labels = gen.choice(len(self.weights), size=n, p=self.weights)
        noise = gen.standard_normal((n, self.dim))
        return self.means[labels] + np.sqrt(self.base_variance) * noise

    def smoothed(self, sigma: float) -> "GaussianMixture":
        """The same mixture with ``sigma^2`` folded into the base variance."""
        return GaussianMixture(self.weights, self.means, self.variance(sigma))


@dataclass(frozen=True)
class QuadraticPotential:
    """Log-density ``-m/2 |x - minimizer|^2``; its score ignores the noise level."""

    m: float
    minimizer: np.ndarray

    def __post_init__(self):
        if not self.m > 0:
            raise InvalidInputError("strong-convexity constant m must be positive")
        mu = np.array(self.minimizer, dtype=np.float64).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "minimizer", mu)
        object.__setattr__(self, "m", float(self.m))

    @property
    def dim(self) -> int:
        return self.minimizer.shape[0]

    def score(self, x, sigma: float = 0.0) -> np.ndarray:
        _check_sigma(sigma)
        x = _as_batch(x, self.dim)
        return -self.m * (x - self.minimizer[None, :])


@dataclass(frozen=True)
class BiasedScore:
    """Adds ``direction * scale_fraction * |s(x)|`` to each sample's score.

    The magnitude follows each sample's own score norm, so the perturbation
    is a fixed fraction of the score and always points the same way.
    """

    inner: object
    direction: np.ndarray
    scale_fraction: float = 0.05

    def __post_init__(self):
        d = np.array(self.direction, dtype=np.float64).reshape(-1)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise InvalidInputError("bias direction must have unit norm")
        if d.shape[0] != self.inner.dim:
            raise InvalidInputError("bias direction dimension does not match the model")
        if not self.scale_fraction >= 0:
            raise InvalidInputError("scale_fraction must be >= 0")
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "scale_fraction", float(self.scale_fraction))

    @classmethod
    def toward(cls, inner, direction, scale_fraction: float = 0.05) -> "BiasedScore":
        d = np.asarray(direction, dtype=np.float64)
        return cls(inner, d / np.linalg.norm(d), scale_fraction)

    @property
    def dim(self) -> int:
        return self.inner.dim

    def score(self, x, sigma: float = 0.0) -> np.ndarray:
        s = self.inner.score(x, sigma)
        if self.scale_fraction == 0.0:
            return s
        return _bias(s, self.scale_fraction, self.direction)

    def kernel_params(self, sigma: float):
        if not hasattr(self.inner, "kernel_params"):
            return None
        logw, means, var, _, _ = self.inner.kernel_params(sigma)
        return logw, means, var, self.scale_fraction, self.direction


def _bias(s: np.ndarray, frac: float, direction: np.ndarray) -> np.ndarray:
    # same operation order as the compiled kernel
    sq = np.zeros(len(s))
    for j in range(s.shape[1]):
        sq = sq + s[:, j] * s[:, j]
    return s + direction[None, :] * (frac * np.sqrt(sq))[:, None]


def toy_mixture() -> GaussianMixture:
    """``0.2 N((-5,-5), I) + 0.8 N((5,5), I)``, the two-mode toy target."""
    return GaussianMixture(np.array([0.2, 0.8]), np.array([[-5.0, -5.0], [5.0, 5.0]]), 1.0)


# Query-style functional API.

def gmm_log_density(model: GaussianMixture, q: ScoreQuery) -> float:
    return float(model.log_density(q.position, q.noise_level)[0])


def gmm_score(model: GaussianMixture, q: ScoreQuery) -> np.ndarray:
    return model.score(q.position, q.noise_level)[0]


def quadratic_score(pot: QuadraticPotential, q: ScoreQuery) -> np.ndarray:
    return pot.score(q.position, q.noise_level)[0]


def biased_score(b: BiasedScore, batch: Sequence[ScoreQuery]) -> list[np.ndarray]:
    if len(batch) == 0:
        raise InvalidInputError("biased_score needs a nonempty batch")
    sigmas = {float(q.noise_level) for q in batch}
    if len(sigmas) == 1:
        x = np.stack([np.asarray(q.position, dtype=np.float64) for q in batch])
        return list(b.score(x, sigmas.pop()))
    return [b.score(q.position, q.noise_level)[0] for q in batch]


def gmm_sample(model: GaussianMixture, n: int, rng: RngStream) -> np.ndarray:
    return model.sample(n, rng)
