"""Gaussian random field sampling for boundary conditions.

Samples zero-mean functions of time on a uniform grid with the
squared-exponential covariance

    C_ij = sigma^2 exp(-(t_i - t_j)^2 / (2 l^2)) + jitter * delta_ij.

With a short length scale on a coarse grid the covariance is close to
singular, so the diagonal jitter is escalated tenfold until the
Cholesky factorization succeeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_JITTER = 1e-6


@dataclass(frozen=True)
class GrfConfig:
    n_t: int
    length_scale: float = 0.15
    std_dev: float = 1.0
    span: float = 0.5
    jitter: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.n_t < 1 or self.span <= 0:
            raise ValueError("need n_t >= 1 points on a positive span")
        if self.length_scale <= 0:
            raise ValueError(f"length scale must be positive, "
                             f"got {self.length_scale}")
        if self.std_dev < 0 or self.jitter < 0:
            raise ValueError("std_dev and jitter must be non-negative")

    @property
    def t(self):
        return np.linspace(0.0, self.span, self.n_t)


def covariance(config: GrfConfig) -> np.ndarray:
    t = config.t
    dt = t[:, None] - t[None, :]
    c = config.std_dev ** 2 * np.exp(-dt ** 2 / (2 * config.length_scale ** 2))
    return c + config.jitter * np.eye(config.n_t)


def factor(config: GrfConfig) -> np.ndarray:
    """Lower-triangular L with L L^T equal to the covariance.

    Escalates the jitter tenfold on failure, up to MAX_JITTER.
    """
    jitter = config.jitter
    base = covariance(config) - config.jitter * np.eye(config.n_t)
    while True:
        try:
            return np.linalg.cholesky(base + jitter * np.eye(config.n_t))
        except np.linalg.LinAlgError:
            jitter = max(jitter, 1e-12) * 10.0
            if jitter > MAX_JITTER:
                raise np.linalg.LinAlgError(
                    f"covariance not factorizable with jitter up to "
                    f"{MAX_JITTER:g} (length scale "
                    f"{config.length_scale}, {config.n_t} points)")


def sample(config: GrfConfig, count: int) -> np.ndarray:
    """Draw ``count`` field samples, shape (count, n_t); seed-deterministic."""
    if count < 0:
        raise ValueError("count must be non-negative")
    if config.std_dev == 0.0:
        return np.zeros((count, config.n_t))
    chol = factor(config)
    z = np.random.default_rng(config.seed).standard_normal(
        (count, config.n_t))
    return z @ chol.T
