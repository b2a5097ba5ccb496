"""Correlated exploration noise.

Each episode picks a coarse base resolution, runs one Ornstein-Uhlenbeck
process per base pixel and bilinearly upsamples the field to the action
grid, giving noise that is smooth in space and correlated in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OUProcess:
    theta: float = 0.15
    sigma: float = 0.3
    mu: float = 0.0
    dt: float = 1.0
    state: np.ndarray | float = 0.0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        self.state = np.asarray(self.state, dtype=float)

    @property
    def stationary_var(self) -> float:
        """Variance of the exact discrete recursion at equilibrium."""
        k = self.theta * self.dt
        return self.sigma ** 2 * self.dt / (2 * k - k * k)

    def step(self, rng) -> np.ndarray:
        return ou_step(self, np.random.default_rng(rng).standard_normal(np.shape(self.state)))


def ou_step(process: OUProcess, gaussian_draw) -> np.ndarray:
    """Advance ``process`` in place by one Euler step and return the new value."""
    p = process
    p.state = p.state + p.theta * (p.mu - p.state) * p.dt + p.sigma * np.sqrt(p.dt) * np.asarray(gaussian_draw)
    return p.state


def upsample_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation weights mapping ``n_in`` samples to ``n_out``.

    Corner samples map onto corner samples, so every output is a convex
    combination of at most two neighbouring inputs.
    """
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    t = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - t
    m[rows, lo + 1] += t
    return m


def bilinear_upsample(base: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    base = np.asarray(base, dtype=float)
    uy = upsample_matrix(shape[0], base.shape[0])
    ux = upsample_matrix(shape[1], base.shape[1])
    return uy @ base @ ux.T


def base_resolutions(action_dims: int) -> list[int]:
    """Powers of two strictly below the action resolution (1 for a 1x1 grid)."""
    out, r = [], 1
    while r < action_dims:
        out.append(r)
        r *= 2
    return out or [1]


@dataclass
class NoiseFieldPlan:
    base_resolution: tuple[int, int]
    process: OUProcess
    rng: np.random.Generator = field(repr=False, default_factory=np.random.default_rng)

    @classmethod
    def new(cls, action_dims: int, rng, *, theta=0.15, sigma=0.3, mu=0.0, dt=1.0,
            resolutions: list[int] | None = None) -> "NoiseFieldPlan":
        """Draw a base resolution and start each pixel's process at equilibrium."""
        rng = np.random.default_rng(rng)
        choices = resolutions or base_resolutions(action_dims)
        r = int(choices[int(rng.integers(len(choices)))])
        proc = OUProcess(theta, sigma, mu, dt)
        proc.state = mu + np.sqrt(proc.stationary_var) * rng.standard_normal((r, r))
        return cls((r, r), proc, rng)


def sample_episode_field(plan: NoiseFieldPlan, action_dims: int) -> np.ndarray:
    """Step every base pixel once and return the ``A x A`` upsampled field."""
    base = ou_step(plan.process, plan.rng.standard_normal(plan.base_resolution))
    return bilinear_upsample(base, (action_dims, action_dims))


def exploration_field(plan: NoiseFieldPlan, action_dims: int) -> np.ndarray:
    """Like :func:`sample_episode_field` but rescaled to unit variance per pixel.

    The Gaussian policy scores samples as ``mean + std * z`` with standard
    normal ``z``; the OU equilibrium variance and the interpolation weights
    both shrink the raw field, so each pixel is divided by its equilibrium
    standard deviation.
    """
    field_ = sample_episode_field(plan, action_dims)
    uy = upsample_matrix(action_dims, plan.base_resolution[0])
    ux = upsample_matrix(action_dims, plan.base_resolution[1])
    w2 = np.outer(np.sum(uy ** 2, axis=1), np.sum(ux ** 2, axis=1))
    return field_ / np.sqrt(plan.process.stationary_var * w2)
