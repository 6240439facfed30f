"""Fixed random two-layer feature encoder with an analytic vector-Jacobian product.

Stands in for a CLIP image tower: ``encode(x) = u / |u|`` with
``u = W2 tanh(W1 vec(x) + b1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from agd.errors import DegenerateFeatureError
from agd.schedule import NoiseSchedule, _check_step, alpha_bar

_MIN_NORM = 1e-12


@dataclass(frozen=True)
class FeatureEncoder:
    W1: np.ndarray  # (hidden, pixels)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (feat, hidden)
    shape: tuple[int, int]
    seed: int

    def __post_init__(self) -> None:
        for arr in (self.W1, self.b1, self.W2):
            arr.setflags(write=False)

    @property
    def feat_dim(self) -> int:
        return self.W2.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return encode(self, x)


def _init_params(shape, hidden, feat, seed):
    d = shape[0] * shape[1]
    rng = np.random.default_rng(seed)
    W1 = rng.standard_normal((hidden, d)) / np.sqrt(d)
    b1 = 0.1 * rng.standard_normal(hidden)
    W2 = rng.standard_normal((feat, hidden)) / np.sqrt(hidden)
    return W1, b1, W2


def _separated(enc: FeatureEncoder, prototypes: np.ndarray, max_cos: float) -> bool:
    feats = np.stack([encode(enc, p) for p in prototypes])
    rng = np.random.default_rng(enc.seed)
    gram = feats @ feats.T
    K = len(prototypes)
    for i in range(K):
        near = encode(enc, prototypes[i] + 0.01 * rng.standard_normal(enc.shape)) @ feats[i]
        for j in range(K):
            if i != j and (gram[i, j] >= near or gram[i, j] >= max_cos):
                return False
    return True


def build_encoder(
    shape: tuple[int, int] = (16, 16),
    hidden: int = 128,
    feat: int = 32,
    seed: int = 0,
    prototypes: np.ndarray | None = None,
    max_cos: float = 0.95,
    max_reseed: int = 100,
) -> FeatureEncoder:
    """Build an encoder from a seeded Gaussian initializer.

    When ``prototypes`` is given, the encoder must map every prototype closer
    to a slightly noised copy of itself than to any other prototype, with
    pairwise prototype cosine below ``max_cos``; failing seeds are skipped by
    incrementing the seed.
    """
    shape = tuple(shape)
    for s in range(seed, seed + max_reseed):
        enc = FeatureEncoder(*_init_params(shape, hidden, feat, s), shape=shape, seed=s)
        if prototypes is None or _separated(enc, np.asarray(prototypes), max_cos):
            return enc
    raise DegenerateFeatureError(f"no separating encoder found in seeds {seed}..{seed + max_reseed - 1}")


def _forward(enc: FeatureEncoder, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != enc.shape:
        raise ValueError(f"image shape {x.shape} does not match encoder shape {enc.shape}")
    h = np.tanh(enc.W1 @ x.ravel() + enc.b1)
    u = enc.W2 @ h
    n = np.linalg.norm(u)
    if n < _MIN_NORM:
        raise DegenerateFeatureError("pre-normalization feature has vanishing norm")
    return h, u / n, n


def encode(enc: FeatureEncoder, x: np.ndarray) -> np.ndarray:
    """Unit-norm feature vector of an image."""
    return _forward(enc, x)[1]


def encode_vjp(enc: FeatureEncoder, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of ``<encode(x), cotangent>`` with respect to the image."""
    h, z, n = _forward(enc, x)
    c = np.asarray(cotangent, dtype=np.float64)
    if c.shape != z.shape:
        raise ValueError(f"cotangent shape {c.shape} does not match feature shape {z.shape}")
    gu = (c - z * (z @ c)) / n
    gh = enc.W2.T @ gu
    return (enc.W1.T @ (gh * (1.0 - h * h))).reshape(enc.shape)


def guidance_eps_tar(
    enc: FeatureEncoder, x_tilde: np.ndarray, z0_tar: np.ndarray, tau: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Target noise ``-sqrt(1 - ab) * grad_x log N(encode(x) | sqrt(ab) z0, (1 - ab) I)``.

    Simplifies to ``encode_vjp(x, z - sqrt(ab) z0) / sqrt(1 - ab)``.
    """
    _check_step(tau, schedule.T, lo=1)
    z0 = np.asarray(z0_tar, dtype=np.float64)
    if abs(np.linalg.norm(z0) - 1.0) > 1e-6:
        raise ValueError("z0_tar must have unit norm")
    ab = alpha_bar(schedule, tau)
    z = encode(enc, x_tilde)
    residual = z - np.sqrt(ab) * z0
    return encode_vjp(enc, x_tilde, residual) / np.sqrt(1.0 - ab)
