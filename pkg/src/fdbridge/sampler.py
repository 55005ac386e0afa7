"""Reverse-diffusion sampling and the reconstruction driver.

The standard reverse step imputes the frequency components removed at
forward step t from the operator's clean-image estimate; the corrected
step additionally blends previously recovered components between the
estimate and the current iterate with weight w_t (soft dealiasing).  The
driver starts from the least-squares reconstruction, runs T_r corrected
steps interleaved with data-consistency projections, and records per-step
diagnostics.  A DDPM baseline with the same driver structure is included
for comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .correction import CorrectionSchedule, linear_weights, resample_weights
from .degradation import DegradationTrajectory, ProcessConfig, sample_trajectory
from .errors import ConfigError, SamplingError, ScheduleError, TrajectoryError
from .grid import KSpaceGrid, as_image, dft2, idft2
from .imaging import ImagingSystem, Measurement, adjoint, dc_projection, residual_norm
from .metrics import psnr
from .rng import child_seed, substream

CORRECTIONS = ("learned", "linear", "none")
CT_MODES = ("independent", "fixed")


@dataclass(frozen=True)
class SamplerConfig:
    t_f: int
    r_prime: float
    r: float
    correction: str = "learned"
    ct_mode: str = "independent"
    dc_every_step: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.r > 1.0:
            raise ConfigError(f"R must be > 1, got {self.r}")
        if not self.r_prime > 1.0:
            raise ConfigError(f"R_prime must be > 1, got {self.r_prime}")
        if self.t_f < 1:
            raise ConfigError(f"T_f must be >= 1, got {self.t_f}")
        if self.correction not in CORRECTIONS:
            raise ConfigError(f"correction must be one of {CORRECTIONS}, got {self.correction!r}")
        if self.ct_mode not in CT_MODES:
            raise ConfigError(f"ct_mode must be one of {CT_MODES}, got {self.ct_mode!r}")


def reconstruction_steps(t_f: int, r: float, r_prime: float) -> int:
    """Number of reverse steps: floor(T_f * (R-1) * R' / ((R'-1) * R)).

    Scales the training horizon by the ratio of missing-frequency
    fractions at rates R and R', so total imputations match the R-fold
    missing count.
    """
    return math.floor(t_f * (r - 1.0) * r_prime / ((r_prime - 1.0) * r))


def reverse_step(
    x_t: np.ndarray,
    t: int,
    traj: DegradationTrajectory,
    x0_est: np.ndarray,
    weight: float = 0.0,
    corrected: bool = False,
) -> np.ndarray:
    """One reverse step from t to t-1.

    standard: x_{t-1} = x_t + (C_{t-1} - C_t) x0_est;
    corrected adds weight * C_t (x0_est - x_t).  All operator applications
    go through DFT, mask, inverse DFT.
    """
    if t < 1:
        raise ValueError(f"reverse step needs t >= 1, got {t}")
    if t > traj.t_total:
        raise TrajectoryError(f"step {t} exceeds trajectory length {traj.t_total}")
    x_t = as_image(x_t)
    x0_est = as_image(x0_est)
    keep_prev = traj.cumulative[t - 1]
    keep_cur = traj.cumulative[t]
    est_spec = dft2(x0_est)
    update = np.where(keep_prev & ~keep_cur, est_spec, 0.0)
    if corrected and weight != 0.0:
        update = update + weight * np.where(keep_cur, est_spec - dft2(x_t), 0.0)
    return x_t + idft2(update)


def _resolve_schedule(cfg: SamplerConfig, schedule: CorrectionSchedule | None, t_r: int) -> np.ndarray:
    if cfg.correction == "none":
        return np.zeros(t_r)
    if cfg.correction == "linear":
        return resample_weights(linear_weights(cfg.t_f), t_r)
    if schedule is None:
        raise ConfigError("correction='learned' requires a CorrectionSchedule")
    if schedule.t_f < cfg.t_f:
        raise ScheduleError(f"schedule length {schedule.t_f} shorter than T_f={cfg.t_f}")
    return resample_weights(schedule, t_r)


@dataclass
class ReconstructionResult:
    image: np.ndarray
    t_r: int
    diagnostics: list[tuple]  # rows (t, residual, psnr_db) recorded after each step's update
    weights: np.ndarray
    trajectory_seed: int | None = None


def reconstruct(
    y: Measurement | np.ndarray | None,
    system: ImagingSystem | None,
    operator,
    traj_source: DegradationTrajectory | ProcessConfig,
    schedule: CorrectionSchedule | None,
    cfg: SamplerConfig,
    x_start: np.ndarray | None = None,
    reference: np.ndarray | None = None,
) -> ReconstructionResult:
    """Full reverse-sampling driver.

    Initializes at the least-squares reconstruction (or ``x_start``),
    resamples the correction schedule to T_r steps, and per step estimates
    the clean image, applies the corrected reverse step, then (optionally)
    the data-consistency projection.  ``traj_source`` is either a stored
    trajectory (ct_mode "fixed"; must be pre-extended to T_r) or a process
    config from which an independent trajectory is drawn.
    """
    t_r = reconstruction_steps(cfg.t_f, cfg.r, cfg.r_prime)
    if t_r < 1:
        raise ConfigError(f"T_r={t_r}; R={cfg.r} leaves nothing to reconstruct")

    if x_start is not None:
        x = as_image(x_start).copy()
    else:
        if y is None or system is None:
            raise ConfigError("reconstruction needs measurements or an explicit x_start")
        x = adjoint(system, y)
    if cfg.dc_every_step and (y is None or system is None):
        raise ConfigError("dc_every_step requires measurements and an imaging system")

    traj_seed = None
    if isinstance(traj_source, DegradationTrajectory):
        traj = traj_source
        if traj.t_total < t_r:
            raise TrajectoryError(
                f"fixed trajectory has {traj.t_total} steps but T_r={t_r}; pre-extend it"
            )
    elif isinstance(traj_source, ProcessConfig):
        if cfg.ct_mode != "independent":
            raise ConfigError("ct_mode='fixed' requires a stored DegradationTrajectory")
        traj_seed = child_seed(cfg.seed, "test-trajectory")
        draw_cfg = ProcessConfig(
            r_prime=traj_source.r_prime,
            t_f=traj_source.t_f,
            density=traj_source.density,
            step_count_schedule=traj_source.step_count_schedule,
            process_kind=traj_source.process_kind,
            seed=traj_seed,
        )
        traj = sample_trajectory(KSpaceGrid(*x.shape), draw_cfg, t_total=t_r)
    else:
        raise ConfigError(f"unsupported trajectory source: {type(traj_source).__name__}")

    weights = _resolve_schedule(cfg, schedule, t_r)
    corrected = cfg.correction != "none"
    diagnostics: list[tuple] = []

    for t in range(t_r, 0, -1):
        x0_est = operator.recover(x, t)
        x = reverse_step(x, t, traj, x0_est, weight=float(weights[t - 1]), corrected=corrected)
        if cfg.dc_every_step:
            x = dc_projection(system, x, y)
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite iterate at step {t}")
        res = residual_norm(system, x, y) if (y is not None and system is not None) else float("nan")
        quality = psnr(reference, x) if reference is not None else float("nan")
        diagnostics.append((t, res, quality))

    return ReconstructionResult(
        image=x, t_r=t_r, diagnostics=diagnostics, weights=weights, trajectory_seed=traj_seed
    )


# ---------------------------------------------------------------------------
# DDPM baseline


@dataclass
class DdpmSchedule:
    """Noise schedule: beta_t in (0, 1), gamma = 1 - beta, gamma_bar running products."""

    t_steps: int
    beta: np.ndarray
    gamma: np.ndarray = field(init=False)
    gamma_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.shape != (self.t_steps,):
            raise ValueError(f"beta must hold {self.t_steps} entries")
        if np.any(self.beta <= 0) or np.any(self.beta >= 1):
            raise ScheduleError("all beta_t must lie in (0, 1)")
        self.gamma = 1.0 - self.beta
        self.gamma_bar = np.cumprod(self.gamma)
        if np.any(np.diff(self.gamma_bar) >= 0):
            raise ScheduleError("gamma_bar must be strictly decreasing")

    def gamma_bar_prev(self, t: int) -> float:
        return 1.0 if t == 1 else float(self.gamma_bar[t - 2])


def ddpm_schedule(t_steps: int, beta_min: float = 0.1, beta_max: float = 20.0) -> DdpmSchedule:
    """Geometric interpolation of the continuous noise rate, discretized by 1/T.

    beta_t = (beta_min / T) * (beta_max / beta_min)^((t-1)/(T-1)); the
    endpoints are beta_min/T and beta_max/T.  All beta_t < 1 requires
    T > beta_max.
    """
    if t_steps < 1:
        raise ConfigError(f"T must be >= 1, got {t_steps}")
    if not 0 < beta_min < beta_max:
        raise ConfigError(f"need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})")
    if t_steps == 1:
        beta = np.array([beta_min / t_steps])
    else:
        expo = (np.arange(1, t_steps + 1, dtype=np.float64) - 1.0) / (t_steps - 1.0)
        beta = (beta_min / t_steps) * (beta_max / beta_min) ** expo
    return DdpmSchedule(t_steps=t_steps, beta=beta)


def _complex_noise(shape, rng) -> np.ndarray:
    # unit variance per real component
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def ddpm_forward_sample(x0: np.ndarray, t: int, schedule: DdpmSchedule, seed: int = 0) -> np.ndarray:
    """Closed-form forward draw: sqrt(gamma_bar_t) x0 + sqrt(1 - gamma_bar_t) z."""
    x0 = as_image(x0)
    if not 1 <= t <= schedule.t_steps:
        raise ValueError(f"t must be in [1, {schedule.t_steps}], got {t}")
    gb = float(schedule.gamma_bar[t - 1])
    z = _complex_noise(x0.shape, substream(seed, "ddpm-forward", t))
    return math.sqrt(gb) * x0 + math.sqrt(1.0 - gb) * z


def ddpm_reconstruct(
    y: Measurement | np.ndarray,
    system: ImagingSystem,
    operator,
    schedule: DdpmSchedule,
    seed: int = 0,
    reference: np.ndarray | None = None,
) -> ReconstructionResult:
    """Noise-diffusion baseline: ancestral steps interleaved with data consistency."""
    rng_init = substream(seed, "ddpm-init")
    x = _complex_noise(system.grid.shape, rng_init)
    diagnostics: list[tuple] = []
    for t in range(schedule.t_steps, 0, -1):
        x0_est = operator.recover(x, t)
        beta = float(schedule.beta[t - 1])
        gamma = float(schedule.gamma[t - 1])
        gb_t = float(schedule.gamma_bar[t - 1])
        gb_prev = schedule.gamma_bar_prev(t)
        coef_x = math.sqrt(gamma) * (1.0 - gb_prev) / (1.0 - gb_t)
        coef_est = beta * math.sqrt(gb_prev) / (1.0 - gb_t)
        noise_sd = math.sqrt((1.0 - gb_prev) / (1.0 - gb_t) * beta)
        z = _complex_noise(x.shape, substream(seed, "ddpm-reverse", t)) if t > 1 else 0.0
        x = coef_x * x + coef_est * x0_est + noise_sd * z
        x = dc_projection(system, x, y)
        if not np.all(np.isfinite(x)):
            raise SamplingError(f"non-finite iterate at step {t}")
        res = residual_norm(system, x, y)
        quality = psnr(reference, x) if reference is not None else float("nan")
        diagnostics.append((t, res, quality))
    return ReconstructionResult(
        image=x, t_r=schedule.t_steps, diagnostics=diagnostics, weights=np.zeros(schedule.t_steps)
    )
