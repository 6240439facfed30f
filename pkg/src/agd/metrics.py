"""Fidelity and spectral measurements on single-channel images.

FFT convention: unnormalized forward transform (numpy default), so
``sum |F|^2 == H * W * sum x^2``.

Radial frequency is normalized by the largest radial frequency on the grid
(the corner at Nyquist in both axes), so a ``cutoff_frac`` of 1 keeps every
coefficient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 8
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def linf(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.max(np.abs(x - y))) if x.size else 0.0


def psnr(x, y) -> float:
    """PSNR in dB at peak 1.0; ``inf`` for identical images."""
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gauss_window(n=SSIM_WINDOW, sigma=SSIM_SIGMA):
    a = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(a**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, y) -> float:
    """Mean SSIM over all valid 8x8 Gaussian-weighted windows (peak 1)."""
    x, y = _pair(x, y)
    if x.ndim != 2 or min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gauss_window()

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, w.shape), w)

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


def radial_frequency(shape) -> np.ndarray:
    """Normalized radial frequency in [0, 1] for every FFT coefficient."""
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return np.sqrt(fx**2 + fy**2) / np.sqrt(0.5)


def power_spectrum(x) -> np.ndarray:
    return np.abs(np.fft.fft2(np.asarray(x, dtype=np.float64))) ** 2


def radial_psd(x) -> list[tuple[int, float]]:
    """Mean FFT power per integer radial wavenumber bin.

    Bin 0 holds only the DC coefficient; bins >= 1 never include it.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    r = np.rint(np.sqrt(kx[None, :] ** 2 + ky[:, None] ** 2)).astype(int)
    r[0, 0] = 0
    p = power_spectrum(x)
    out = []
    for b in range(r.max() + 1):
        mask = r == b
        if b > 0:
            mask[0, 0] = False
        if mask.any():
            out.append((b, float(p[mask].mean())))
    return out


def high_band_fraction(x, cutoff_frac: float) -> float:
    """Share of non-DC spectral energy above ``cutoff_frac`` of the top radial frequency."""
    if not (0.0 < cutoff_frac < 1.0):
        raise ValueError(f"cutoff_frac must lie in (0, 1), got {cutoff_frac}")
    x = np.asarray(x, dtype=np.float64)
    p = power_spectrum(x)
    p[0, 0] = 0.0
    total = p.sum()
    if total <= 0.0:
        return 0.0
    return float(p[radial_frequency(x.shape) > cutoff_frac].sum() / total)


def white_noise_band_fraction(shape, cutoff_frac: float) -> float:
    """Expected high-band fraction of white noise: the share of non-DC bins above the cutoff."""
    rho = radial_frequency(shape)
    n_high = int(np.count_nonzero(rho > cutoff_frac))
    return n_high / (rho.size - 1)
