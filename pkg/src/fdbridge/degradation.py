"""Stochastic frequency-removal forward process.

A trajectory removes a scheduled number of not-yet-removed k-space
components per step, sampled uniformly from the annulus above a shrinking
radius threshold (peripheral-to-central order).  Cumulative keep-masks
define an image-domain corruption operator: forward DFT, mask, inverse
DFT.  The DC component is never removed, so total image energy cannot
vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrajectoryError
from .fileio import write_json, write_kmsk
from .grid import KSpaceGrid, apply_mask, as_image, dft2, idft2
from .rng import substream

DENSITIES = ("radius_scheduled", "uniform")
STEP_COUNT_SCHEDULES = ("constant", "log")
PROCESS_KINDS = ("frequency_removal", "averaging_constraint")


@dataclass(frozen=True)
class ProcessConfig:
    """Parameters of the frequency-removal process.

    ``r_prime`` is the degradation level reached at step ``t_f`` (the
    kept fraction there is 1/r_prime), analogous to an acceleration rate.
    """

    r_prime: float
    t_f: int
    density: str = "radius_scheduled"
    step_count_schedule: str = "constant"
    process_kind: str = "frequency_removal"
    seed: int = 0

    def __post_init__(self):
        if not self.r_prime > 1.0:
            raise ConfigError(f"R_prime must be > 1, got {self.r_prime}")
        if self.t_f < 1:
            raise ConfigError(f"T_f must be >= 1, got {self.t_f}")
        if self.density not in DENSITIES:
            raise ConfigError(f"density must be one of {DENSITIES}, got {self.density!r}")
        if self.step_count_schedule not in STEP_COUNT_SCHEDULES:
            raise ConfigError(
                f"step_count_schedule must be one of {STEP_COUNT_SCHEDULES}, "
                f"got {self.step_count_schedule!r}"
            )
        if self.process_kind not in PROCESS_KINDS:
            raise ConfigError(f"process_kind must be one of {PROCESS_KINDS}, got {self.process_kind!r}")


def radius_threshold(t: int, t_f: int, r_prime: float, r_max: float) -> float:
    """Scheduled radius threshold: r_max at t=0 down to r_max/sqrt(R') at t=T_f.

    The schedule extrapolates linearly past t_f (clamped at 0) so
    reconstruction-time trajectories can extend the same process.
    """
    if not r_prime > 1.0:
        raise ConfigError(f"R_prime must be > 1, got {r_prime}")
    if t_f < 1:
        raise ConfigError(f"T_f must be >= 1, got {t_f}")
    fade = 1.0 - (1.0 - r_prime ** -0.5) * (t / t_f)
    return max(0.0, r_max * fade)


def per_step_count(n_components: int, r_prime: float, t_f: int) -> int:
    """Components removed per step: floor(N*(R'-1)/(R'*T_f))."""
    if n_components < 1:
        raise ConfigError(f"n_components must be >= 1, got {n_components}")
    n = math.floor(n_components * (r_prime - 1.0) / (r_prime * t_f))
    if n < 1:
        raise ConfigError(
            f"per-step removal count is 0 for N={n_components}, R'={r_prime}, T_f={t_f}; "
            "use a smaller T_f"
        )
    return n


def removal_target(n_components: int, r_prime: float) -> int:
    """Total components removed by t_f so the kept fraction is 1/R'."""
    return int(round(n_components * (r_prime - 1.0) / r_prime))


def step_counts(n_components: int, cfg: ProcessConfig, t_total: int) -> np.ndarray:
    """Per-step removal counts for steps 1..t_total.

    Constant schedule: n per step, with the final training step absorbing
    the remainder so the cumulative removal at t_f hits the target
    exactly.  Log schedule (ablation): counts within 1..t_f proportional
    to log(1+t), largest-remainder rounded to the same target.  Steps past
    t_f always remove n.
    """
    n = per_step_count(n_components, cfg.r_prime, cfg.t_f)
    target = removal_target(n_components, cfg.r_prime)
    inner = min(t_total, cfg.t_f)
    if cfg.step_count_schedule == "constant":
        counts = np.full(inner, n, dtype=np.int64)
        if inner == cfg.t_f:
            counts[-1] += target - n * cfg.t_f
    else:
        weights = np.log1p(np.arange(1, cfg.t_f + 1, dtype=np.float64))
        quota = weights / weights.sum() * target
        counts_full = np.floor(quota).astype(np.int64)
        shortfall = target - int(counts_full.sum())
        order = np.argsort(-(quota - counts_full), kind="stable")
        counts_full[order[:shortfall]] += 1
        if np.any(counts_full < 1):
            raise ConfigError("log step-count schedule yields an empty step; use a smaller T_f")
        counts = counts_full[:inner]
    if t_total > cfg.t_f:
        counts = np.concatenate([counts, np.full(t_total - cfg.t_f, n, dtype=np.int64)])
    return counts


@dataclass
class DegradationTrajectory:
    """One realization of the removal process over steps 1..t_total.

    ``cumulative[t]`` is the keep-mask after step t (``cumulative[0]`` is
    all-true); ``sets[t-1]`` holds the flat indices removed at step t.
    """

    grid: KSpaceGrid
    t_f: int
    t_total: int
    n: int
    seed: int
    counts: np.ndarray
    sets: list[np.ndarray]
    cumulative: list[np.ndarray]
    thresholds: np.ndarray
    relaxed: np.ndarray
    density: str = "radius_scheduled"

    @property
    def relaxation_count(self) -> int:
        return int(self.relaxed.sum())

    def keep_count(self, t: int) -> int:
        return int(self.cumulative[t].sum())


def sample_trajectory(grid: KSpaceGrid, cfg: ProcessConfig, t_total: int | None = None) -> DegradationTrajectory:
    """Draw a removal trajectory; deterministic given ``cfg.seed``.

    Step t draws its count uniformly at random from the eligible set
    {not yet removed, radius > threshold(t)} (the radius clause is dropped
    for uniform density).  If the annulus is too small the threshold is
    lowered, for that step only, to the largest radius that keeps the step
    feasible; such steps are flagged in ``relaxed``.
    """
    if t_total is None:
        t_total = cfg.t_f
    counts = step_counts(grid.n_components, cfg, t_total)
    total_removed = int(counts.sum())
    if total_removed > grid.n_components - 1:
        raise TrajectoryError(
            f"trajectory would remove {total_removed} of {grid.n_components} components; "
            "the DC component must survive"
        )

    radius = grid.radius.ravel()
    n_step = per_step_count(grid.n_components, cfg.r_prime, cfg.t_f)
    removed = np.zeros(grid.n_components, dtype=bool)
    removed[grid.dc_index] = True  # sentinel: DC is never eligible

    sets: list[np.ndarray] = []
    keep = np.ones(grid.n_components, dtype=bool)
    cumulative = [keep.reshape(grid.shape).copy()]
    thresholds = np.zeros(t_total)
    relaxed = np.zeros(t_total, dtype=bool)

    for t in range(1, t_total + 1):
        need = int(counts[t - 1])
        if cfg.density == "radius_scheduled":
            rbar = radius_threshold(t, cfg.t_f, cfg.r_prime, grid.r_max)
        else:
            rbar = 0.0
        thresholds[t - 1] = rbar
        available = ~removed
        eligible = np.flatnonzero(available & (radius > rbar))
        if eligible.size < need:
            remaining = np.flatnonzero(available)
            if remaining.size < need:
                raise TrajectoryError(
                    f"step {t}: only {remaining.size} removable components left, need {need}"
                )
            # Lower the threshold minimally: admit everything at or above
            # the need-th largest remaining radius.
            cutoff = np.partition(radius[remaining], remaining.size - need)[remaining.size - need]
            eligible = remaining[radius[remaining] >= cutoff]
            relaxed[t - 1] = True
        rng = substream(cfg.seed, "degradation", t)
        picked = np.sort(rng.choice(eligible, size=need, replace=False))
        removed[picked] = True
        keep = keep.copy()
        keep[picked] = False
        sets.append(picked)
        cumulative.append(keep.reshape(grid.shape).copy())

    return DegradationTrajectory(
        grid=grid,
        t_f=cfg.t_f,
        t_total=t_total,
        n=n_step,
        seed=cfg.seed,
        counts=counts,
        sets=sets,
        cumulative=cumulative,
        thresholds=thresholds,
        relaxed=relaxed,
        density=cfg.density,
    )


def corrupt(x0: np.ndarray, traj: DegradationTrajectory, t: int) -> np.ndarray:
    """Image-domain corruption at step t: inverse DFT of the masked spectrum."""
    if not 0 <= t <= traj.t_total:
        raise ValueError(f"t must be in [0, {traj.t_total}], got {t}")
    x0 = as_image(x0)
    if x0.shape != traj.grid.shape:
        raise ValueError(f"image shape {x0.shape} does not match grid {traj.grid.shape}")
    if t == 0:
        return x0.copy()
    return idft2(apply_mask(dft2(x0), traj.cumulative[t]))


def averaging_corrupt(x0: np.ndarray, x_start: np.ndarray, t: int, t_f: int) -> np.ndarray:
    """Ablation process: linear blend (1 - t/t_f) * x0 + (t/t_f) * x_start."""
    x0 = as_image(x0)
    x_start = as_image(x_start)
    if x0.shape != x_start.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x_start.shape}")
    lam = t / t_f
    return (1.0 - lam) * x0 + lam * x_start


def export_trajectory(traj: DegradationTrajectory, cfg: ProcessConfig, out_dir, steps) -> dict:
    """Write KMSK1 keep-masks for the requested steps plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for t in steps:
        if not 0 <= t <= traj.t_total:
            raise ValueError(f"snapshot step {t} out of range [0, {traj.t_total}]")
        name = f"mask_t{t:04d}.kmsk"
        write_kmsk(out_dir / name, traj.cumulative[t])
        files[str(t)] = name
    manifest = {
        "seed": traj.seed,
        "R_prime": cfg.r_prime,
        "T_f": traj.t_f,
        "T_total": traj.t_total,
        "n": traj.n,
        "density": traj.density,
        "step_counts": [int(c) for c in traj.counts],
        "relaxed_steps": int(traj.relaxation_count),
        "mask_files": files,
    }
    write_json(out_dir / "trajectory.json", manifest)
    return manifest
