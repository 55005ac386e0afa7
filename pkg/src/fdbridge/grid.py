"""Complex image arrays, the centered orthonormal 2D DFT, and k-space geometry.

Images are plain ``numpy`` arrays of shape ``(H, W)`` and dtype
``complex128``.  Spectra use the centered convention: the DC component
sits at index ``(H // 2, W // 2)`` so radius thresholds read directly off
array indices.  Frequency masks are boolean ``(H, W)`` arrays
(True = component retained).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def as_image(data) -> np.ndarray:
    """Validate and convert ``data`` to a 2D complex128 image array."""
    img = np.asarray(data)
    if img.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image dimensions must be positive, got {img.shape}")
    img = img.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite components")
    return img


def dft2(img: np.ndarray) -> np.ndarray:
    """Centered orthonormal forward 2D DFT (DC at (H//2, W//2))."""
    img = as_image(img)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img), norm="ortho"))


def idft2(spectrum: np.ndarray) -> np.ndarray:
    """Centered orthonormal inverse 2D DFT; exact inverse of :func:`dft2`."""
    spectrum = as_image(spectrum)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(spectrum), norm="ortho"))


@dataclass(frozen=True)
class KSpaceGrid:
    """Geometry of an H x W centered Cartesian k-space grid."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"grid dimensions must be >= 2, got {self.height}x{self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_components(self) -> int:
        return self.height * self.width

    @cached_property
    def radius(self) -> np.ndarray:
        """Per-component Euclidean distance to DC, in frequency-index units."""
        fy = np.arange(self.height) - self.height // 2
        fx = np.arange(self.width) - self.width // 2
        r = np.hypot(fy[:, None], fx[None, :])
        r.setflags(write=False)
        return r

    @cached_property
    def r_max(self) -> float:
        return float(self.radius.max())

    @property
    def dc_index(self) -> int:
        """Flat row-major index of the DC component."""
        return (self.height // 2) * self.width + self.width // 2


def radius_map(height: int, width: int) -> KSpaceGrid:
    """Build the centered k-space grid for an H x W image."""
    return KSpaceGrid(int(height), int(width))


def full_mask(height: int, width: int) -> np.ndarray:
    return np.ones((height, width), dtype=bool)


def apply_mask(spectrum: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Zero masked-out components; retained components are passed through bit-identically."""
    spectrum = np.asarray(spectrum)
    keep = np.asarray(keep, dtype=bool)
    if spectrum.shape != keep.shape:
        raise ValueError(f"mask shape {keep.shape} does not match spectrum shape {spectrum.shape}")
    return np.where(keep, spectrum, np.complex128(0.0))
