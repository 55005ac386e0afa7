"""Correction-weight schedules for reverse sampling.

The learned schedule is the per-step minimizer of the spectral blending
regression: w_t = (E||X_{t-1}||^2 - E||X_t||^2) / (E||X_0||^2 - E||X_t||^2),
estimated by Monte-Carlo over (image, trajectory) draws.  Because removal
sets are disjoint, the same ratio equals
E||X_{t-1} - X_t||^2 / E||X_0 - X_t||^2; both accumulation paths are
computed and cross-checked.  Closed forms for inverse-power-law spectra
and a linear ablation schedule are also provided.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .degradation import ProcessConfig, sample_trajectory
from .errors import ConfigError, ScheduleError
from .fileio import write_csv, write_json
from .grid import KSpaceGrid, as_image, dft2
from .rng import child_seed

PROVENANCES = ("monte_carlo", "power_law", "linear", "constant")


@dataclass
class CorrectionSchedule:
    """Weights w_t for t = 1..t_f, all in [0, 1], with w_1 = 1 for learned/closed forms."""

    t_f: int
    weights: np.ndarray
    provenance: str
    mc_samples: int = 0
    energy_fraction: np.ndarray | None = None  # E||X_t||^2 / E||X_0||^2 for t = 0..t_f

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if self.weights.shape != (self.t_f,):
            raise ValueError(f"schedule must hold {self.t_f} weights, got {self.weights.shape}")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")
        if self.provenance in ("monte_carlo", "power_law"):
            rises = np.diff(self.weights)
            worst = float(rises.max(initial=0.0))
            if worst > 1e-3:
                warnings.warn(
                    f"{self.provenance} schedule is non-monotone by {worst:.3g} "
                    "(beyond sampling-noise tolerance)",
                    stacklevel=2,
                )


def estimate_weights(images, process: ProcessConfig, mc_samples: int, seed: int = 0) -> CorrectionSchedule:
    """Monte-Carlo estimate of the learned schedule over the given dataset.

    Draw i pairs image ``i mod len(images)`` with a fresh trajectory.  The
    energy-balance ratio and the removed-energy ratio are accumulated
    through independent arithmetic paths and must agree to 1e-8 relative;
    weights are clamped to [0, 1] against sampling noise.
    """
    images = [as_image(x) for x in images]
    if not images:
        raise ConfigError("dataset must not be empty")
    if mc_samples < 1:
        raise ConfigError(f"mc_samples must be >= 1, got {mc_samples}")
    t_f = process.t_f
    grid = KSpaceGrid(*images[0].shape)

    sum_e0 = 0.0
    sum_et = np.zeros(t_f + 1)            # running sums of ||X_t||^2, t = 0..t_f
    sum_removed = np.zeros(t_f)           # running sums of ||X_{t-1} - X_t||^2
    sum_deficit = np.zeros(t_f)           # running sums of ||X_0 - X_t||^2

    for i in range(mc_samples):
        x0 = images[i % len(images)]
        if x0.shape != grid.shape:
            raise ValueError("all dataset images must share one shape")
        traj_cfg = ProcessConfig(
            r_prime=process.r_prime,
            t_f=t_f,
            density=process.density,
            step_count_schedule=process.step_count_schedule,
            process_kind=process.process_kind,
            seed=child_seed(seed, "mc-trajectory", i),
        )
        traj = sample_trajectory(grid, traj_cfg, t_total=t_f)
        energy = np.abs(dft2(x0).ravel()) ** 2
        e0 = float(energy.sum())
        removed = np.array([float(energy[s].sum()) for s in traj.sets])
        deficit = np.cumsum(removed)
        sum_e0 += e0
        sum_et[0] += e0
        sum_et[1:] += e0 - deficit
        sum_removed += removed
        sum_deficit += deficit

    mean_et = sum_et / mc_samples
    num_balance = mean_et[:-1] - mean_et[1:]
    den_balance = (sum_e0 / mc_samples) - mean_et[1:]
    num_diff = sum_removed / mc_samples
    den_diff = sum_deficit / mc_samples

    weights = np.empty(t_f)
    for t in range(1, t_f + 1):
        if den_balance[t - 1] <= 0.0 or den_diff[t - 1] <= 0.0:
            raise ScheduleError(
                f"degenerate schedule at t={t}: no spectral energy removed yet "
                "(denominator of the weight ratio is zero)"
            )
        ratio = num_balance[t - 1] / den_balance[t - 1]
        alt = num_diff[t - 1] / den_diff[t - 1]
        if abs(ratio - alt) > 1e-8 * max(abs(ratio), abs(alt), 1e-300):
            raise ScheduleError(
                f"energy-balance and energy-difference ratios disagree at t={t}: "
                f"{ratio!r} vs {alt!r}"
            )
        weights[t - 1] = min(1.0, max(0.0, ratio))

    gamma = mean_et / mean_et[0]
    return CorrectionSchedule(
        t_f=t_f,
        weights=weights,
        provenance="monte_carlo",
        mc_samples=mc_samples,
        energy_fraction=gamma,
    )


def power_law_weights(t_f: int, k: float) -> CorrectionSchedule:
    """Closed form for spectra whose energy decays as 1/r^k.

    w_t = (T - t + 1)^-k / sum_{i = T-t+1}^{T} i^-k; k = 0 reduces to 1/t.
    """
    if t_f < 1:
        raise ConfigError(f"T must be >= 1, got {t_f}")
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    inv = np.arange(1, t_f + 1, dtype=np.float64) ** (-float(k))
    weights = np.empty(t_f)
    for t in range(1, t_f + 1):
        lead = t_f - t + 1
        weights[t - 1] = inv[lead - 1] / inv[lead - 1 : t_f].sum()
    return CorrectionSchedule(t_f=t_f, weights=weights, provenance="power_law")


def linear_weights(t_f: int) -> CorrectionSchedule:
    """Ablation schedule: 1 at t=1 falling linearly to 0 at t=T."""
    if t_f < 1:
        raise ConfigError(f"T must be >= 1, got {t_f}")
    if t_f == 1:
        weights = np.array([1.0])
    else:
        t = np.arange(1, t_f + 1, dtype=np.float64)
        weights = 1.0 - (t - 1.0) / (t_f - 1.0)
    return CorrectionSchedule(t_f=t_f, weights=weights, provenance="linear")


def constant_weights(t_f: int, value: float = 0.0) -> CorrectionSchedule:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"constant weight must be in [0, 1], got {value}")
    return CorrectionSchedule(t_f=t_f, weights=np.full(t_f, value), provenance="constant")


def resample_weights(schedule: CorrectionSchedule | np.ndarray, t_r: int) -> np.ndarray:
    """Resample a length-T_f schedule onto t_r steps.

    Linear interpolation under the affine index map [1, t_r] -> [1, T_f]:
    identity when t_r == T_f, endpoints preserved exactly, and exactly
    linear outputs for linear inputs.
    """
    w = schedule.weights if isinstance(schedule, CorrectionSchedule) else np.asarray(schedule, dtype=np.float64)
    if w.size == 0:
        raise ScheduleError("cannot resample an empty schedule")
    if t_r < 1:
        raise ConfigError(f"T_r must be >= 1, got {t_r}")
    t_f = w.size
    if t_r == t_f:
        return w.copy()
    if t_f == 1 or t_r == 1:
        return np.full(t_r, w[0])
    positions = 1.0 + (np.arange(t_r, dtype=np.float64)) * (t_f - 1.0) / (t_r - 1.0)
    positions[0], positions[-1] = 1.0, float(t_f)  # exact endpoints despite rounding
    return np.interp(positions, np.arange(1, t_f + 1, dtype=np.float64), w)


def save_schedule(out_dir, schedule: CorrectionSchedule, r_prime: float, seed: int, prefix: str = "schedule") -> None:
    """CSV (t, w) plus JSON metadata."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [(t + 1, float(w)) for t, w in enumerate(schedule.weights)]
    write_csv(out_dir / f"{prefix}.csv", ["t", "w"], rows)
    write_json(
        out_dir / f"{prefix}.json",
        {
            "provenance": schedule.provenance,
            "mc_samples": schedule.mc_samples,
            "R_prime": r_prime,
            "T_f": schedule.t_f,
            "seed": seed,
        },
    )


def load_schedule(csv_path, meta_path=None) -> CorrectionSchedule:
    from .fileio import read_csv, read_json

    header, rows = read_csv(csv_path)
    if header[:2] != ["t", "w"]:
        raise ValueError(f"{csv_path}: expected header t,w")
    weights = np.array([float(r[1]) for r in rows])
    provenance = "constant"
    mc_samples = 0
    if meta_path is None:
        candidate = Path(csv_path).with_suffix(".json")
        meta_path = candidate if candidate.exists() else None
    if meta_path is not None:
        meta = read_json(meta_path)
        provenance = meta.get("provenance", "constant")
        mc_samples = int(meta.get("mc_samples", 0))
    return CorrectionSchedule(
        t_f=weights.size, weights=weights, provenance=provenance, mc_samples=mc_samples
    )
