"""Image-quality metrics on magnitude images (PSNR, SSIM)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _magnitudes(ref, test) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref)
    test = np.asarray(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return np.abs(ref).astype(np.float64), np.abs(test).astype(np.float64)


def psnr(ref, test, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs.

    Computed on magnitudes; ``peak`` defaults to the reference maximum.
    """
    a, b = _magnitudes(ref, test)
    if peak is None:
        peak = float(a.max())
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 20.0 * np.log10(peak) - 10.0 * np.log10(mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a symmetric 1D kernel."""
    k = kernel.size
    a = sliding_window_view(img, k, axis=1) @ kernel
    return sliding_window_view(a, k, axis=0) @ kernel


def ssim(
    ref,
    test,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float | None = None,
) -> float:
    """Mean local structural similarity on magnitude images.

    Canonical Gaussian-window formulation (11x11, sigma 1.5, stabilizers
    K1=0.01, K2=0.03); windows are cropped to the valid region.  The
    window shrinks to the largest odd size that fits when the image is
    smaller than 11 in either dimension.
    """
    a, b = _magnitudes(ref, test)
    min_dim = min(a.shape)
    if window > min_dim:
        window = min_dim if min_dim % 2 == 1 else min_dim - 1
    if window < 1:
        raise ValueError("image too small for any SSIM window")
    if dynamic_range is None:
        dynamic_range = float(a.max())
    if dynamic_range <= 0:
        # both images must be identically zero for the reference max to vanish
        return 1.0 if np.array_equal(a, b) else 0.0
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2

    kern = _gaussian_kernel(window, sigma)
    mu_a = _filter_valid(a, kern)
    mu_b = _filter_valid(b, kern)
    aa = _filter_valid(a * a, kern)
    bb = _filter_valid(b * b, kern)
    ab = _filter_valid(a * b, kern)

    var_a = aa - mu_a**2
    var_b = bb - mu_b**2
    cov = ab - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
