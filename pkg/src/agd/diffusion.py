"""Forward noising, x0 estimation, the reverse step, and edit-friendly inversion.

All maps here are pure functions of their inputs. ``eps_model`` arguments are
any callable ``eps_model(x_t, t) -> eps_hat`` with ``eps_hat.shape == x_t.shape``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from agd.errors import DegenerateStepError
from agd.schedule import NoiseSchedule, _check_step, alpha_bar

EpsModel = Callable[[np.ndarray, int], np.ndarray]


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch for {what}: {np.shape(a)} vs {np.shape(b)}")


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Return ``sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps``."""
    _same_shape(x0, eps, "x0/eps")
    ab = alpha_bar(schedule, t)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def estimate_x0(x_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Tweedie-style x0 estimate from a noisy state and its predicted noise."""
    _same_shape(x_t, eps_hat, "x_t/eps_hat")
    _check_step(t, schedule.T, lo=1)
    ab = alpha_bar(schedule, t)
    if ab <= 0.0:
        raise DegenerateStepError(f"alpha_bar underflowed to 0 at t={t}")
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def reverse_step(
    x_t: np.ndarray, t: int, eps_hat: np.ndarray, e_t: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """One DDPM reverse step ``mu_t + sqrt(beta_t) * e_t``.

    ``mu_t = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(1 - beta_t)``.
    """
    _same_shape(x_t, eps_hat, "x_t/eps_hat")
    _same_shape(x_t, e_t, "x_t/e_t")
    _check_step(t, schedule.T, lo=1)
    beta = schedule.beta(t)
    ab = alpha_bar(schedule, t)
    mu = (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(1.0 - beta)
    return mu + np.sqrt(beta) * e_t


def denoise(x_t: np.ndarray, t: int, eps_hat: np.ndarray, e_t: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Alias of :func:`reverse_step` named after its role in the attack loop."""
    return reverse_step(x_t, t, eps_hat, e_t, schedule)


def _step_mean(x_t, t, eps_hat, schedule):
    beta = schedule.beta(t)
    ab = alpha_bar(schedule, t)
    return (x_t - (beta / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(1.0 - beta)


@dataclass(frozen=True)
class InversionRecord:
    """Clean trajectory and the auxiliary noises that replay it exactly.

    ``clean_states[t]`` is x_t^cle for t = 0..T and ``aux_noises[t]`` is e_t
    for t = 1..T (index 0 is unused and holds zeros).
    """

    clean_states: np.ndarray
    aux_noises: np.ndarray
    schedule: NoiseSchedule

    def __post_init__(self) -> None:
        self.clean_states.setflags(write=False)
        self.aux_noises.setflags(write=False)

    @property
    def x0(self) -> np.ndarray:
        return self.clean_states[0]

    @property
    def xT(self) -> np.ndarray:
        return self.clean_states[self.schedule.T]

    def state(self, t: int) -> np.ndarray:
        _check_step(t, self.schedule.T)
        return self.clean_states[t]

    def noise(self, t: int) -> np.ndarray:
        _check_step(t, self.schedule.T, lo=1)
        return self.aux_noises[t]


def invert_clean_image(
    x0_cle: np.ndarray, schedule: NoiseSchedule, eps_model: EpsModel, rng_seed
) -> InversionRecord:
    """Edit-friendly inversion of a clean image.

    Each x_t^cle is noised independently from x0; e_t then solves the reverse
    step equation so that replaying from x_T^cle lands on every stored state.
    ``rng_seed`` may be an int, a seed sequence, or a ``numpy.random.Generator``.
    """
    x0 = np.asarray(x0_cle, dtype=np.float64)
    if np.any(x0 < 0.0) or np.any(x0 > 1.0):
        raise ValueError("clean image values must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    T = schedule.T
    states = np.empty((T + 1,) + x0.shape)
    states[0] = x0
    noise = rng.standard_normal((T,) + x0.shape)
    for t in range(1, T + 1):
        states[t] = forward_noise(x0, t, noise[t - 1], schedule)
    aux = np.zeros_like(states)
    for t in range(1, T + 1):
        mu = _step_mean(states[t], t, eps_model(states[t], t), schedule)
        aux[t] = (states[t - 1] - mu) / np.sqrt(schedule.beta(t))
    return InversionRecord(clean_states=states, aux_noises=aux, schedule=schedule)


def reconstruct_to_delta(record: InversionRecord, eps_model: EpsModel, Delta: int) -> np.ndarray:
    """Replay the stored reverse chain from T down to ``Delta`` (exclusive of the attack phase)."""
    T = record.schedule.T
    if not (0 <= Delta < T):
        raise IndexError(f"Delta={Delta} outside [0, {T})")
    x = record.xT.copy()
    for t in range(T, Delta, -1):
        x = denoise(x, t, eps_model(x, t), record.noise(t), record.schedule)
    return x
