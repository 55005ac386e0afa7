"""Accelerated-acquisition measurement model.

The forward operator maps an image to per-coil masked k-space:
``y_c = M * DFT(S_c * x) + noise``; the adjoint combines coils with
conjugate sensitivities.  Coil maps are synthetic smooth Gaussian lobes
with linear phase ramps, normalized to unit sum-of-squares per pixel, so
the single-coil case reduces to a unit map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fileio import read_cimg, read_json, read_kmsk, write_cimg, write_json, write_kmsk
from .grid import KSpaceGrid, as_image, dft2, idft2
from .rng import substream

MASK_DENSITIES = ("normal2d", "normal1d", "uniform")


@dataclass
class ImagingSystem:
    """Sampling mask, coil sensitivities and grid geometry for one acquisition."""

    mask: np.ndarray            # (H, W) bool
    coil_maps: np.ndarray       # (C, H, W) complex128
    grid: KSpaceGrid

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.coil_maps = np.asarray(self.coil_maps, dtype=np.complex128)
        if self.mask.shape != self.grid.shape:
            raise ValueError(f"mask shape {self.mask.shape} does not match grid {self.grid.shape}")
        if self.coil_maps.ndim != 3 or self.coil_maps.shape[1:] != self.grid.shape:
            raise ValueError(f"coil maps must be (C, {self.grid.height}, {self.grid.width})")
        sos = np.sum(np.abs(self.coil_maps) ** 2, axis=0)
        if np.max(np.abs(sos - 1.0)) > 1e-10:
            raise ValueError("coil maps must be sum-of-squares normalized per pixel")

    @property
    def n_coils(self) -> int:
        return int(self.coil_maps.shape[0])


@dataclass
class Measurement:
    """Per-coil masked k-space data with acquisition metadata."""

    data: np.ndarray            # (C, H, W) complex128, zero off the mask
    acceleration: float
    noise_sigma: float = 0.0


def default_calib(height: int, width: int) -> int:
    """Side of the fully sampled central block: 16 on a 256 grid, scaled elsewhere."""
    return max(1, math.ceil(max(height, width) / 16))


def _calib_block(grid: KSpaceGrid, calib: int) -> np.ndarray:
    block = np.zeros(grid.shape, dtype=bool)
    if calib == 0:
        return block
    cy, cx = grid.height // 2, grid.width // 2
    y0 = cy - calib // 2
    x0 = cx - calib // 2
    block[y0 : y0 + calib, x0 : x0 + calib] = True
    return block


def _bisect_sigma(radius: np.ndarray, budget: int) -> float:
    """Find sigma so that sum(exp(-r^2 / 2 sigma^2)) matches budget within 1%."""
    r2 = radius.astype(np.float64) ** 2

    def expected(sigma: float) -> float:
        return float(np.exp(-r2 / (2.0 * sigma * sigma)).sum())

    lo, hi = 1e-3, 1.0
    while expected(hi) < budget:
        hi *= 2.0
        if hi > 1e9:
            raise ConfigError("sampling-density calibration failed to bracket the budget")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected(mid) < budget:
            lo = mid
        else:
            hi = mid
        if abs(expected(mid) - budget) <= 0.01 * budget:
            return mid
    return 0.5 * (lo + hi)


def make_sampling_mask(
    grid: KSpaceGrid,
    r: float,
    density: str = "normal2d",
    calib: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Random sampling mask keeping ~1/R of k-space.

    A central calib x calib block is always kept; the remaining budget is
    drawn without replacement with weights following a Gaussian profile in
    k-space radius (normal2d), a Gaussian over full phase-encode columns
    (normal1d), or uniformly.  The Gaussian width is bisected so the
    profile's expected keep-count matches the budget within 1%.
    """
    if not r > 1.0:
        raise ConfigError(f"acceleration R must be > 1, got {r}")
    if density not in MASK_DENSITIES:
        raise ConfigError(f"density must be one of {MASK_DENSITIES}, got {density!r}")
    if calib is None:
        calib = default_calib(grid.height, grid.width)
    if calib < 0 or calib >= min(grid.height, grid.width):
        raise ConfigError(f"calib must be in [0, {min(grid.shape)}), got {calib}")

    rng = substream(seed, "sampling-mask", density)

    if density == "normal1d":
        width = grid.width
        target_lines = int(round(width / r))
        if abs(target_lines / width - 1.0 / r) > 0.05 / r:
            raise ConfigError(
                f"1D mask cannot hit 1/R={1/r:.4f} within 5% on width {width}; use a wider grid"
            )
        if target_lines < calib:
            raise ConfigError(f"line budget {target_lines} smaller than calib block {calib}")
        cx = width // 2
        x0 = cx - calib // 2
        calib_cols = np.zeros(width, dtype=bool)
        calib_cols[x0 : x0 + calib] = True
        budget = target_lines - calib
        keep_cols = calib_cols.copy()
        candidates = np.flatnonzero(~calib_cols)
        if budget >= candidates.size:
            keep_cols[:] = True
        elif budget > 0:
            dist = np.abs(np.arange(width) - cx).astype(np.float64)
            sigma = _bisect_sigma(dist[candidates], budget)
            weights = np.exp(-dist[candidates] ** 2 / (2.0 * sigma * sigma))
            picked = rng.choice(candidates, size=budget, replace=False, p=weights / weights.sum())
            keep_cols[picked] = True
        return np.repeat(keep_cols[None, :], grid.height, axis=0)

    target_keep = int(round(grid.n_components / r))
    if abs(target_keep / grid.n_components - 1.0 / r) > 0.05 / r:
        raise ConfigError(f"mask cannot hit 1/R={1/r:.4f} within 5% on grid {grid.shape}")
    block = _calib_block(grid, calib)
    if target_keep < calib * calib:
        raise ConfigError(
            f"keep budget {target_keep} smaller than the {calib}x{calib} calibration block"
        )
    budget = target_keep - int(block.sum())
    keep = block.ravel().copy()
    candidates = np.flatnonzero(~block.ravel())
    if budget >= candidates.size:
        keep[:] = True
    elif budget > 0:
        if density == "uniform":
            picked = rng.choice(candidates, size=budget, replace=False)
        else:
            rad = grid.radius.ravel()[candidates]
            sigma = _bisect_sigma(rad, budget)
            weights = np.exp(-rad ** 2 / (2.0 * sigma * sigma))
            picked = rng.choice(candidates, size=budget, replace=False, p=weights / weights.sum())
        keep[picked] = True
    return keep.reshape(grid.shape)


def synth_coil_maps(grid: KSpaceGrid, n_coils: int, seed: int = 0) -> np.ndarray:
    """Smooth Gaussian-lobed complex sensitivities, unit sum-of-squares per pixel."""
    if n_coils < 1:
        raise ConfigError(f"coil count must be >= 1, got {n_coils}")
    rng = substream(seed, "coil-maps")
    h, w = grid.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ring = 0.38 * min(h, w)
    lobe_width = 0.55 * min(h, w)
    maps = np.empty((n_coils, h, w), dtype=np.complex128)
    for c in range(n_coils):
        angle = 2.0 * np.pi * c / n_coils + rng.uniform(-0.15, 0.15)
        my = cy + ring * np.sin(angle)
        mx = cx + ring * np.cos(angle)
        width_c = lobe_width * rng.uniform(0.9, 1.1)
        lobe = np.exp(-((yy - my) ** 2 + (xx - mx) ** 2) / (2.0 * width_c**2))
        ay, ax = rng.uniform(-0.5, 0.5, size=2)
        phase = 2.0 * np.pi * (ay * (yy - cy) / h + ax * (xx - cx) / w) + rng.uniform(0, 2 * np.pi)
        maps[c] = lobe * np.exp(1j * phase)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / sos[None, :, :]


def apply_forward(system: ImagingSystem, x: np.ndarray) -> np.ndarray:
    """Noiseless forward operator as a raw (C, H, W) array."""
    x = as_image(x)
    if x.shape != system.grid.shape:
        raise ValueError(f"image shape {x.shape} does not match grid {system.grid.shape}")
    data = np.empty((system.n_coils, *system.grid.shape), dtype=np.complex128)
    for c in range(system.n_coils):
        data[c] = np.where(system.mask, dft2(system.coil_maps[c] * x), 0.0)
    return data


def forward(
    system: ImagingSystem,
    x: np.ndarray,
    noise_sigma: float = 0.0,
    seed: int = 0,
    acceleration: float | None = None,
) -> Measurement:
    """Simulate the acquisition y_c = M * DFT(S_c * x) + noise (noise on sampled locations only)."""
    if noise_sigma < 0:
        raise ConfigError(f"noise_sigma must be >= 0, got {noise_sigma}")
    data = apply_forward(system, x)
    if noise_sigma > 0:
        rng = substream(seed, "measurement-noise")
        scale = noise_sigma / math.sqrt(2.0)
        noise = scale * (
            rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
        )
        data += np.where(system.mask[None, :, :], noise, 0.0)
    if acceleration is None:
        acceleration = system.grid.n_components / max(1, int(system.mask.sum()))
    return Measurement(data=data, acceleration=float(acceleration), noise_sigma=float(noise_sigma))


def _measurement_data(y) -> np.ndarray:
    return y.data if isinstance(y, Measurement) else np.asarray(y, dtype=np.complex128)


def adjoint(system: ImagingSystem, y) -> np.ndarray:
    """Adjoint operator: coil-combined inverse DFT of the masked measurements."""
    data = _measurement_data(y)
    if data.shape != (system.n_coils, *system.grid.shape):
        raise ValueError(f"measurement shape {data.shape} does not match system")
    out = np.zeros(system.grid.shape, dtype=np.complex128)
    for c in range(system.n_coils):
        out += np.conj(system.coil_maps[c]) * idft2(np.where(system.mask, data[c], 0.0))
    return out


def dc_projection(system: ImagingSystem, x: np.ndarray, y) -> np.ndarray:
    """Data-consistency update x + A^H (y - A x)."""
    x = as_image(x)
    data = _measurement_data(y)
    residual = data - apply_forward(system, x)
    return x + adjoint(system, residual)


def residual_norm(system: ImagingSystem, x: np.ndarray, y) -> float:
    data = _measurement_data(y)
    return float(np.linalg.norm(apply_forward(system, x) - data))


def save_measurement(out_dir, system: ImagingSystem, y: Measurement, seed: int, density: str) -> None:
    """Serialize a measurement: one CIMG1 per coil, the KMSK1 mask, and a JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in range(system.n_coils):
        write_cimg(out_dir / f"coil_{c:02d}.cimg", y.data[c])
        write_cimg(out_dir / f"sens_{c:02d}.cimg", system.coil_maps[c])
    write_kmsk(out_dir / "mask.kmsk", system.mask)
    write_json(
        out_dir / "measurement.json",
        {
            "R": y.acceleration,
            "C": system.n_coils,
            "noise_sigma": y.noise_sigma,
            "seed": seed,
            "density": density,
        },
    )


def load_measurement(in_dir) -> tuple[ImagingSystem, Measurement, dict]:
    in_dir = Path(in_dir)
    meta = read_json(in_dir / "measurement.json")
    mask = read_kmsk(in_dir / "mask.kmsk")
    n_coils = int(meta["C"])
    data = np.stack([read_cimg(in_dir / f"coil_{c:02d}.cimg") for c in range(n_coils)])
    maps = np.stack([read_cimg(in_dir / f"sens_{c:02d}.cimg") for c in range(n_coils)])
    grid = KSpaceGrid(*mask.shape)
    system = ImagingSystem(mask=mask, coil_maps=maps, grid=grid)
    y = Measurement(data=data, acceleration=float(meta["R"]), noise_sigma=float(meta["noise_sigma"]))
    return system, y, meta
