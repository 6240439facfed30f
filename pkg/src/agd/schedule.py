"""Linear beta schedule and the cumulative signal-retention products."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """A T-step DDPM noise schedule.

    Arrays are stored 0-based but addressed by step index ``t = 1..T``
    through the accessor methods; ``alpha_bars_full[0] == 1`` holds the
    data-level convention.
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.betas, self.alphas, self.alpha_bars):
            arr.setflags(write=False)

    @property
    def alpha_bars_full(self) -> np.ndarray:
        """ᾱ_0..ᾱ_T with ᾱ_0 = 1."""
        return np.concatenate([[1.0], self.alpha_bars])

    def beta(self, t: int) -> float:
        _check_step(t, self.T, lo=1)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return alpha_bar(self, t)


def _check_step(t: int, T: int, lo: int = 0) -> None:
    if not (lo <= t <= T):
        raise IndexError(f"step index {t} outside [{lo}, {T}]")


def build_linear_schedule(T: int = 100, beta_start: float = 1e-3, beta_end: float = 0.2) -> NoiseSchedule:
    """Linearly interpolate betas over ``T`` steps, endpoints inclusive.

    The defaults rescale the usual 1000-step range (1e-4 .. 0.02) to a
    100-step chain so that ᾱ_T is still close to zero.
    """
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    T = int(T)
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def alpha_bar(schedule: NoiseSchedule, t: int) -> float:
    """Return ᾱ_t, with ᾱ_0 = 1."""
    _check_step(t, schedule.T)
    if t == 0:
        return 1.0
    return float(schedule.alpha_bars[t - 1])
