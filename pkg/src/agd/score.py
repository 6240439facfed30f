"""Exact noise predictor for an isotropic Gaussian-mixture data distribution.

Under the forward process the time-t marginal of a mixture with component
means mu_k and per-pixel spread sigma0 is again a mixture,

    p_t(x) = sum_k w_k N(x | sqrt(ab_t) mu_k, v_t I),   v_t = ab_t sigma0^2 + 1 - ab_t,

so the optimal noise predictor is ``-sqrt(1 - ab_t) * grad log p_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from agd.schedule import NoiseSchedule, _check_step, alpha_bar


def _hgrad(h: int, w: int) -> np.ndarray:
    return np.tile(np.linspace(0.0, 1.0, w), (h, 1))


def _vgrad(h: int, w: int) -> np.ndarray:
    return np.tile(np.linspace(0.0, 1.0, h)[:, None], (1, w))


def _blob(h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    return np.exp(-((xx - 0.5) ** 2 + (yy - 0.5) ** 2) / (2 * 0.2**2))


def _stripes(h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    return 0.5 + 0.5 * np.sin(2 * np.pi * 2.0 * (xx + yy))


PROTOTYPES: dict[str, Callable[[int, int], np.ndarray]] = {
    "hgrad": _hgrad,
    "vgrad": _vgrad,
    "blob": _blob,
    "stripes": _stripes,
}

DEFAULT_PROTOTYPES = ("hgrad", "vgrad", "blob", "stripes")


@dataclass(frozen=True)
class GaussianMixtureWorld:
    """Mixture of isotropic Gaussians around smooth prototype images."""

    prototypes: np.ndarray  # (K, H, W)
    weights: np.ndarray  # (K,)
    sigma0: float
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        protos = np.asarray(self.prototypes, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if protos.ndim != 3:
            raise ValueError("prototypes must have shape (K, H, W)")
        if weights.shape != (protos.shape[0],):
            raise ValueError("need one weight per prototype")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be >= 0")
        names = tuple(self.names) or tuple(f"proto{k}" for k in range(protos.shape[0]))
        if len(names) != protos.shape[0]:
            raise ValueError("need one name per prototype")
        protos.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "names", names)

    @property
    def K(self) -> int:
        return self.prototypes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.prototypes.shape[1:]

    def eps_model(self, schedule: NoiseSchedule) -> "AnalyticScore":
        return AnalyticScore(self, schedule)


def build_world(
    shape: tuple[int, int] = (16, 16),
    names: Sequence[str] = DEFAULT_PROTOTYPES,
    sigma0: float = 0.05,
    weights: Sequence[float] | None = None,
) -> GaussianMixtureWorld:
    """Construct a world from prototype generator keys (see ``PROTOTYPES``)."""
    h, w = shape
    try:
        protos = np.stack([np.clip(PROTOTYPES[n](h, w), 0.0, 1.0) for n in names])
    except KeyError as exc:
        raise ValueError(f"unknown prototype {exc.args[0]!r}; known: {sorted(PROTOTYPES)}") from None
    if weights is None:
        weights = np.full(len(names), 1.0 / len(names))
    return GaussianMixtureWorld(prototypes=protos, weights=np.asarray(weights, float), sigma0=sigma0, names=tuple(names))


def default_world() -> GaussianMixtureWorld:
    return build_world()


def sample_clean(world: GaussianMixtureWorld, label: int, rng_seed) -> np.ndarray:
    """Draw a clean image from component ``label``, clamped to [0, 1]."""
    if not (0 <= label < world.K):
        raise ValueError(f"label {label} outside [0, {world.K})")
    rng = np.random.default_rng(rng_seed)
    x = world.prototypes[label] + world.sigma0 * rng.standard_normal(world.shape)
    return np.clip(x, 0.0, 1.0)


def _component_logits(x_t, t, world, schedule):
    ab = alpha_bar(schedule, t)
    v = ab * world.sigma0**2 + (1.0 - ab)
    flat = np.asarray(x_t, dtype=np.float64).reshape(x_t.shape[:-2] + (-1,))
    means = np.sqrt(ab) * world.prototypes.reshape(world.K, -1)
    sq = np.sum((flat[..., None, :] - means) ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        logw = np.log(world.weights)
    return logw - sq / (2.0 * v), v, ab, flat


def _check_image(x_t, world):
    if np.shape(x_t)[-2:] != world.shape:
        raise ValueError(f"image shape {np.shape(x_t)[-2:]} does not match world shape {world.shape}")


def gmm_eps_predict(x_t: np.ndarray, t: int, world: GaussianMixtureWorld, schedule: NoiseSchedule) -> np.ndarray:
    """Optimal noise prediction at step ``t``; accepts leading batch axes."""
    _check_step(t, schedule.T, lo=1)
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_image(x_t, world)
    logits, v, ab, flat = _component_logits(x_t, t, world, schedule)
    resp = softmax(logits, axis=-1)
    mean = resp @ world.prototypes.reshape(world.K, -1)
    eps = np.sqrt(1.0 - ab) * (flat - np.sqrt(ab) * mean) / v
    return eps.reshape(x_t.shape)


def log_marginal(x_t: np.ndarray, t: int, world: GaussianMixtureWorld, schedule: NoiseSchedule):
    """log p_t(x_t) of the noised mixture (scalar, or one value per batch entry).

    ``t = 0`` is allowed and gives the clean-data density (requires sigma0 > 0).
    """
    _check_step(t, schedule.T)
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_image(x_t, world)
    logits, v, _, flat = _component_logits(x_t, t, world, schedule)
    d = flat.shape[-1]
    out = logsumexp(logits, axis=-1) - 0.5 * d * np.log(2.0 * np.pi * v)
    return float(out) if np.ndim(out) == 0 else out


class AnalyticScore:
    """Callable ``(x_t, t) -> eps`` bound to a world and schedule."""

    def __init__(self, world: GaussianMixtureWorld, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule

    def __call__(self, x_t: np.ndarray, t: int) -> np.ndarray:
        return gmm_eps_predict(x_t, t, self.world, self.schedule)

    def __repr__(self) -> str:
        return f"AnalyticScore(K={self.world.K}, sigma0={self.world.sigma0}, T={self.schedule.T})"
