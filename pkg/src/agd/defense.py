"""Input-purification defenses applied to an image before it reaches the victim."""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import zoom

from agd.diffusion import forward_noise, reverse_step
from agd.metrics import radial_frequency
from agd.schedule import NoiseSchedule
from agd.score import GaussianMixtureWorld, gmm_eps_predict

# Standard JPEG luminance quantization table (ITU T.81, Annex K).
JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def lowpass_fft(x: np.ndarray, cutoff_frac: float = 0.5) -> np.ndarray:
    """Zero every FFT coefficient above ``cutoff_frac`` of the top radial frequency."""
    if not (0.0 < cutoff_frac <= 1.0):
        raise ValueError(f"cutoff_frac must lie in (0, 1], got {cutoff_frac}")
    x = np.asarray(x, dtype=np.float64)
    F = np.fft.fft2(x)
    F[radial_frequency(x.shape) > cutoff_frac] = 0.0
    return np.clip(np.fft.ifft2(F).real, 0.0, 1.0)


def jpeg_quant_table(quality: int) -> np.ndarray:
    """libjpeg-style quality scaling of the luminance table."""
    if not (1 <= int(quality) <= 100) or int(quality) != quality:
        raise ValueError(f"quality must be an integer in 1..100, got {quality!r}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((JPEG_LUMA * scale + 50) / 100), 1, 255)


def jpeg_lite(x: np.ndarray, quality: int = 50) -> np.ndarray:
    """8x8 block DCT quantize/dequantize round trip on the 0..255 scale.

    Images whose sides are not multiples of 8 are reflect-padded and cropped back.
    """
    q = jpeg_quant_table(quality)
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    ph, pw = (-h) % 8, (-w) % 8
    img = np.pad(x, ((0, ph), (0, pw)), mode="reflect") * 255.0 - 128.0
    H, W = img.shape
    blocks = img.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, axes=(2, 3), norm="ortho")
    rec = idctn(np.round(coef / q) * q, axes=(2, 3), norm="ortho")
    out = rec.transpose(0, 2, 1, 3).reshape(H, W)[:h, :w]
    return np.clip((out + 128.0) / 255.0, 0.0, 1.0)


def resize_pad(
    x: np.ndarray,
    rng_seed,
    scale_range: tuple[float, float] = (0.85, 1.0),
    scale: float | None = None,
    offset: tuple[int, int] | None = None,
) -> np.ndarray:
    """Bilinear downscale by a random factor, then zero-pad back at a random offset.

    ``scale`` and ``offset`` pin the random draws (useful for tests).
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    rng = np.random.default_rng(rng_seed)
    s = rng.uniform(*scale_range) if scale is None else scale
    nh, nw = max(1, int(round(s * h))), max(1, int(round(s * w)))
    small = zoom(x, (nh / h, nw / w), order=1, grid_mode=False) if (nh, nw) != (h, w) else x.copy()
    if offset is None:
        oy = int(rng.integers(0, h - nh + 1))
        ox = int(rng.integers(0, w - nw + 1))
    else:
        oy, ox = offset
    out = np.zeros_like(x)
    out[oy : oy + nh, ox : ox + nw] = small
    return np.clip(out, 0.0, 1.0)


def purify(
    x: np.ndarray, t_star: int, world: GaussianMixtureWorld, schedule: NoiseSchedule, rng_seed
) -> np.ndarray:
    """Diffusion purification: noise to ``t_star`` then sample back down with the analytic score."""
    if not (1 <= t_star < schedule.T):
        raise IndexError(f"t_star={t_star} outside [1, {schedule.T})")
    rng = np.random.default_rng(rng_seed)
    x = np.asarray(x, dtype=np.float64)
    xt = forward_noise(x, t_star, rng.standard_normal(x.shape), schedule)
    for t in range(t_star, 0, -1):
        xt = reverse_step(xt, t, gmm_eps_predict(xt, t, world, schedule), rng.standard_normal(x.shape), schedule)
    return np.clip(xt, 0.0, 1.0)
