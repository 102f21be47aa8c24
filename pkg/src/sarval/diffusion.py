"""Numerical checks for the diffusion-training math.

Covers the forward noising process on a discrete schedule, the additive
noise offset (variance widening to 1 + gamma^2 without touching spatial
structure), restricted low-noise timestep sampling, and the refinement
loss that adds an amplitude-distribution KL term to the standard
noise-prediction MSE.

No network is involved anywhere; these are the closed-form pieces only,
with the RNG passed explicitly so every check is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ampstats import histogram, kl_divergence
from .errors import InputError
from .raster import AmplitudeImage

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_GAMMA = 0.035
DEFAULT_WINDOW_FRACTION = 0.15


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise rates and their cumulative attenuation products.

    ``alpha_bar[t-1]`` is the product of (1 - beta) over steps 1..t;
    timesteps are 1-indexed over {1..T}.
    """

    beta: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.beta.ndim != 1 or self.beta.size == 0:
            raise InputError("invalid-params", "beta must be a non-empty 1-D array")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise InputError("invalid-params", "every beta must lie in (0, 1)")
        if self.alpha_bar.shape != self.beta.shape:
            raise InputError("dimension-mismatch", "alpha_bar must match beta in length")
        if np.any(np.diff(self.alpha_bar) >= 0) or self.alpha_bar[0] > 1:
            raise InputError("invalid-params", "alpha_bar must be strictly decreasing and <= 1")

    @property
    def T(self) -> int:
        return self.beta.size

    @classmethod
    def linear(cls, T: int = DEFAULT_T,
               beta_start: float = DEFAULT_BETA_START,
               beta_end: float = DEFAULT_BETA_END) -> "DiffusionSchedule":
        """Standard linear beta ramp; the shape is a stand-in and injectable."""
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        alpha_bar = np.cumprod(1.0 - beta)
        return cls(beta=beta, alpha_bar=alpha_bar)


def diffuse(z0: np.ndarray, eps: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    """``sqrt(a)*z0 + sqrt(1-a)*eps`` for a cumulative attenuation a in [0, 1]."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise InputError("dimension-mismatch",
                         f"z0 shape {z0.shape} != eps shape {eps.shape}")
    if not 0.0 <= alpha_bar_t <= 1.0:
        raise InputError("invalid-params", f"alpha_bar must lie in [0, 1], got {alpha_bar_t}")
    return math.sqrt(alpha_bar_t) * z0 + math.sqrt(1.0 - alpha_bar_t) * eps


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray,
                    schedule: DiffusionSchedule) -> np.ndarray:
    """Noised latent at 1-indexed timestep t of the schedule."""
    if not 1 <= t <= schedule.T:
        raise InputError("invalid-params", f"timestep {t} outside [1, {schedule.T}]")
    return diffuse(z0, eps, float(schedule.alpha_bar[t - 1]))


@dataclass(frozen=True)
class NoiseOffsetConfig:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.gamma < 0:
            raise InputError("invalid-params", "gamma must be >= 0")


def offset_noise(eps: np.ndarray, delta: np.ndarray,
                 config: NoiseOffsetConfig = NoiseOffsetConfig()) -> np.ndarray:
    """Add a constant per-channel shift: ``eps + gamma * delta``.

    ``delta`` holds one standard-normal draw per (sample, channel); it
    is broadcast over any trailing spatial axes of ``eps``, so within a
    channel every pixel receives the same shift and pixel differences
    are preserved exactly. Element variance becomes 1 + gamma^2.
    """
    eps = np.asarray(eps, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim > eps.ndim:
        raise InputError("dimension-mismatch",
                         f"delta ndim {delta.ndim} exceeds eps ndim {eps.ndim}")
    if eps.shape[:delta.ndim] != delta.shape:
        raise InputError("dimension-mismatch",
                         f"delta shape {delta.shape} must prefix eps shape {eps.shape}")
    shift = delta.reshape(delta.shape + (1,) * (eps.ndim - delta.ndim))
    return eps + config.gamma * shift


def sample_timestep_window(T: int, window_fraction: float,
                           rng: np.random.Generator, size=None):
    """Uniform timestep from {1, ..., ceil(window_fraction * T)}.

    These are the low-noise forward timesteps matching the final steps
    of the reverse process; fraction 1.0 recovers the full schedule.
    """
    if not 0.0 < window_fraction <= 1.0:
        raise InputError("invalid-params", "window_fraction must lie in (0, 1]")
    if T < 1:
        raise InputError("invalid-params", "T must be >= 1")
    upper = math.ceil(window_fraction * T)
    draws = rng.integers(1, upper + 1, size=size)
    return int(draws) if size is None else draws


def base_noise_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Mean squared error between true and predicted noise."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps.shape != eps_hat.shape:
        raise InputError("dimension-mismatch",
                         f"shapes differ: {eps.shape} vs {eps_hat.shape}")
    return float(np.mean((eps - eps_hat) ** 2))


@dataclass(frozen=True)
class RefineLossConfig:
    lambda_kl: float
    window_fraction: float = DEFAULT_WINDOW_FRACTION
    bin_count: int = 256

    def __post_init__(self):
        if self.lambda_kl < 0:
            raise InputError("invalid-params", "lambda_kl must be >= 0")
        if not 0.0 < self.window_fraction <= 1.0:
            raise InputError("invalid-params", "window_fraction must lie in (0, 1]")


def refine_loss(base_loss: float, real: AmplitudeImage, gen: AmplitudeImage,
                config: RefineLossConfig) -> float:
    """``base_loss + lambda_kl * KL(hist(real) || hist(gen))``."""
    kl = kl_divergence(histogram([real], config.bin_count),
                       histogram([gen], config.bin_count))
    return float(base_loss + config.lambda_kl * kl.kl_nats)
