"""Cosine noise schedule and the forward/reverse diffusion algebra.

The model predicts the clean sequence, so the reverse step forms the
posterior q(x_{t-1} | x_t, x0_hat) directly from the prediction.  Indexing
runs t = 0..T with alpha_bar(0) = 1 (clean) down to alpha_bar(T) near 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InvalidArgumentError, InvalidConfigError

COSINE_OFFSET = 0.008
ALPHA_BAR_FLOOR = 1e-4


def cosine_alpha_bar(
    t: float, T: int, offset: float = COSINE_OFFSET, floor: float = ALPHA_BAR_FLOOR
) -> float:
    """Cumulative signal fraction at step t of a cosine schedule."""
    if not 0 <= t <= T:
        raise InvalidArgumentError(f"t={t} outside [0, {T}]")

    def f(u: float) -> float:
        return np.cos(((u / T + offset) / (1.0 + offset)) * np.pi / 2.0) ** 2

    return float(np.clip(f(t) / f(0), floor, 1.0))


@dataclass
class NoiseSchedule:
    """Precomputed alpha_bar(0..T), strictly decreasing from 1."""

    T: int = 100
    offset: float = COSINE_OFFSET
    floor: float = ALPHA_BAR_FLOOR
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.T < 1:
            raise InvalidConfigError("T must be >= 1")
        ab = np.array(
            [cosine_alpha_bar(t, self.T, self.offset, self.floor) for t in range(self.T + 1)]
        )
        if not (np.diff(ab) < 0).all():
            raise InvalidConfigError(
                "alpha_bar not strictly decreasing; floor clipping collided "
                f"(T={self.T}, floor={self.floor})"
            )
        self.alpha_bar = ab

    def to_dict(self) -> dict:
        return {"T": self.T, "offset": self.offset, "floor": self.floor}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(T=d["T"], offset=d["offset"], floor=d["floor"])


def forward_diffuse(x0: torch.Tensor, t: int, noise: torch.Tensor, schedule: NoiseSchedule):
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    if noise.shape != x0.shape:
        raise InvalidArgumentError(
            f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}"
        )
    if not 0 <= t <= schedule.T:
        raise InvalidArgumentError(f"t={t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def posterior_step(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    noise: torch.Tensor | None,
) -> torch.Tensor:
    """One ancestral step: sample from q(x_{t-1} | x_t, x0_hat).

    At t=1 the posterior collapses to x0_hat exactly (no noise added).
    """
    if not 1 <= t <= schedule.T:
        raise InvalidArgumentError(f"t={t} outside [1, {schedule.T}]")
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t - 1]
    alpha_t = ab_t / ab_prev
    beta_t = 1.0 - alpha_t
    denom = 1.0 - ab_t
    coef_x0 = np.sqrt(ab_prev) * beta_t / denom
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / denom
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 1:
        return mean
    var = beta_t * (1.0 - ab_prev) / denom
    if noise is None:
        raise InvalidArgumentError("noise required for steps t > 1")
    return mean + np.sqrt(var) * noise
