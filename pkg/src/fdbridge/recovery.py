"""Recovery operators: oracle/passthrough references and a small trainable
convolutional regressor with hand-rolled backpropagation.

The regressor maps the (real, imag) planes of a degraded image to an
estimate of the clean image through three 3x3 convolutions
(2 -> 16 -> 16 -> 2) with leaky rectifiers (slope 0.1) between layers.
The step index conditions the network through an 8-dimensional sinusoidal
embedding, linearly projected to a per-channel bias added after the first
convolution.  Everything is double precision and deterministic.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .degradation import DegradationTrajectory, ProcessConfig, corrupt, sample_trajectory
from .errors import ConfigError, TrainingError
from .fileio import atomic_write_bytes, write_csv
from .grid import KSpaceGrid, apply_mask, as_image, dft2, idft2
from .rng import child_seed, substream

LEAKY_SLOPE = 0.1
EMB_DIM = 8
HIDDEN = 16
PARAM_ORDER = ("conv1_w", "conv1_b", "time_w", "conv2_w", "conv2_b", "conv3_w", "conv3_b")


class OracleRecovery:
    """Returns the stored ground truth regardless of the degraded input."""

    def __init__(self, truth: np.ndarray):
        self.truth = as_image(truth)

    def recover(self, x_t: np.ndarray, t: int) -> np.ndarray:
        x_t = as_image(x_t)
        if x_t.shape != self.truth.shape:
            raise ValueError(f"input shape {x_t.shape} does not match truth {self.truth.shape}")
        return self.truth.copy()


class ZeroFillRecovery:
    """Passthrough operator: the estimate is the degraded input itself."""

    def recover(self, x_t: np.ndarray, t: int) -> np.ndarray:
        return as_image(x_t).copy()


def _complex_to_channels(img: np.ndarray) -> np.ndarray:
    return np.stack([img.real, img.imag]).astype(np.float64)


def _channels_to_complex(chan: np.ndarray) -> np.ndarray:
    return (chan[0] + 1j * chan[1]).astype(np.complex128)


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """3x3 convolution with zero padding via im2col; returns (out, cols)."""
    cin, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(cols.transpose(1, 2, 0, 3, 4)).reshape(h * wd, cin * 9)
    out = cols @ w.reshape(w.shape[0], -1).T
    out = np.ascontiguousarray(out.T).reshape(w.shape[0], h, wd)
    if b is not None:
        out += b[:, None, None]
    return out, cols


def _conv3x3_input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    # gradient wrt the conv input: correlate with the flipped, channel-swapped kernel
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = _conv3x3(dout, w_t, None)
    return dx


def _leaky(h: np.ndarray) -> np.ndarray:
    return np.where(h > 0, h, LEAKY_SLOPE * h)


def _leaky_grad(h: np.ndarray) -> np.ndarray:
    return np.where(h > 0, 1.0, LEAKY_SLOPE)


def time_features(t: float, t_f: int) -> np.ndarray:
    """Sinusoidal embedding of the step index: 4 geometric periods in [1, 2*T_f]."""
    periods = np.geomspace(1.0, 2.0 * t_f, EMB_DIM // 2)
    ang = 2.0 * np.pi * t / periods
    return np.concatenate([np.sin(ang), np.cos(ang)])


class TinyRegressor:
    """Three-layer convolutional recovery operator with time conditioning."""

    def __init__(self, t_f: int, seed: int = 0):
        if t_f < 1:
            raise ConfigError(f"T_f must be >= 1, got {t_f}")
        self.t_f = int(t_f)
        self.seed = int(seed)
        self.params: dict[str, np.ndarray] = {}
        self._init_params()

    def _init_params(self) -> None:
        shapes = {
            "conv1_w": (HIDDEN, 2, 3, 3),
            "conv1_b": (HIDDEN,),
            "time_w": (HIDDEN, EMB_DIM),
            "conv2_w": (HIDDEN, HIDDEN, 3, 3),
            "conv2_b": (HIDDEN,),
            "conv3_w": (2, HIDDEN, 3, 3),
            "conv3_b": (2,),
        }
        fans = {
            "conv1_w": (2 * 9, HIDDEN * 9),
            "time_w": (EMB_DIM, HIDDEN),
            "conv2_w": (HIDDEN * 9, HIDDEN * 9),
            "conv3_w": (HIDDEN * 9, 2 * 9),
        }
        for name in PARAM_ORDER:
            shape = shapes[name]
            if name.endswith("_b"):
                self.params[name] = np.zeros(shape)
            else:
                fan_in, fan_out = fans[name]
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                rng = substream(self.seed, "init", name)
                self.params[name] = rng.uniform(-limit, limit, size=shape)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in PARAM_ORDER])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for name in PARAM_ORDER:
            p = self.params[name]
            self.params[name] = flat[offset : offset + p.size].reshape(p.shape).copy()
            offset += p.size
        if offset != flat.size:
            raise ValueError(f"parameter block has {flat.size} values, expected {offset}")

    def forward(self, chan_in: np.ndarray, t: int):
        """Forward pass on a (2, H, W) channel stack; returns (out, cache)."""
        p = self.params
        feat = time_features(t, self.t_f)
        h1, cols1 = _conv3x3(chan_in, p["conv1_w"], p["conv1_b"])
        h1 += (p["time_w"] @ feat)[:, None, None]
        a1 = _leaky(h1)
        h2, cols2 = _conv3x3(a1, p["conv2_w"], p["conv2_b"])
        a2 = _leaky(h2)
        out, cols3 = _conv3x3(a2, p["conv3_w"], p["conv3_b"])
        cache = (feat, cols1, h1, cols2, h2, cols3)
        return out, cache

    def backward(self, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the cached forward pass given dL/d(out)."""
        p = self.params
        feat, cols1, h1, cols2, h2, cols3 = cache
        grads: dict[str, np.ndarray] = {}

        dflat = dout.reshape(2, -1)
        grads["conv3_w"] = (dflat @ cols3).reshape(p["conv3_w"].shape)
        grads["conv3_b"] = dout.sum(axis=(1, 2))
        da2 = _conv3x3_input_grad(dout, p["conv3_w"])

        dh2 = da2 * _leaky_grad(h2)
        dflat = dh2.reshape(HIDDEN, -1)
        grads["conv2_w"] = (dflat @ cols2).reshape(p["conv2_w"].shape)
        grads["conv2_b"] = dh2.sum(axis=(1, 2))
        da1 = _conv3x3_input_grad(dh2, p["conv2_w"])

        dh1 = da1 * _leaky_grad(h1)
        grads["time_w"] = np.outer(dh1.sum(axis=(1, 2)), feat)
        dflat = dh1.reshape(HIDDEN, -1)
        grads["conv1_w"] = (dflat @ cols1).reshape(p["conv1_w"].shape)
        grads["conv1_b"] = dh1.sum(axis=(1, 2))
        return grads

    def recover(self, x_t: np.ndarray, t: int) -> np.ndarray:
        x_t = as_image(x_t)
        out, _ = self.forward(_complex_to_channels(x_t), t)
        return _channels_to_complex(out)


def _energy(r: np.ndarray) -> float:
    return float(np.sum(r.real**2 + r.imag**2))


LOSS_MODES = ("weighted", "upper_bound")


def bridge_loss(operator, images, trajectories, steps, mode: str = "upper_bound") -> float:
    """Monte-Carlo recovery loss over (image, trajectory, step) draws.

    weighted: mean of ||C_t (G(x_t, t) - x_0)||^2; upper_bound drops the
    corruption operator and upper-bounds the weighted form pathwise.
    """
    if mode not in LOSS_MODES:
        raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {mode!r}")
    images = list(images)
    if not images:
        raise ValueError("empty batch")
    total = 0.0
    for x0, traj, t in zip(images, trajectories, steps):
        x0 = as_image(x0)
        x_t = corrupt(x0, traj, t)
        residual = operator.recover(x_t, t) - x0
        if mode == "weighted":
            residual = idft2(apply_mask(dft2(residual), traj.cumulative[t]))
        total += _energy(residual)
    return total / len(images)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch: int
    betas: tuple[float, float] = (0.5, 0.9)
    loss_mode: str = "upper_bound"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas: tuple[float, float]):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = 1e-8
        self.k = 0
        self.m = {n: np.zeros_like(p) for n, p in params.items()}
        self.v = {n: np.zeros_like(p) for n, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.k += 1
        for n, g in grads.items():
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            mhat = self.m[n] / (1 - self.b1**self.k)
            vhat = self.v[n] / (1 - self.b2**self.k)
            params[n] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _draw_corrupted(x0, process, t_f, seed_tags):
    """Draw (x_t, t, keep_mask_or_None) from the configured corruption source."""
    from .sampler import DdpmSchedule, ddpm_forward_sample  # local import: sampler depends on us

    rng_t = substream(seed_tags[0], "step-draw", *seed_tags[1:])
    if isinstance(process, ProcessConfig):
        grid = KSpaceGrid(*x0.shape)
        t = int(rng_t.integers(1, t_f + 1))
        traj_seed = child_seed(seed_tags[0], "train-traj", *seed_tags[1:])
        traj_cfg = ProcessConfig(
            r_prime=process.r_prime,
            t_f=process.t_f,
            density=process.density,
            step_count_schedule=process.step_count_schedule,
            process_kind=process.process_kind,
            seed=traj_seed,
        )
        traj = sample_trajectory(grid, traj_cfg, t_total=t)
        if process.process_kind == "averaging_constraint":
            from .degradation import averaging_corrupt

            x_start = corrupt(x0, sample_trajectory(grid, traj_cfg, t_total=process.t_f), process.t_f)
            x_t = averaging_corrupt(x0, x_start, t, process.t_f)
            return x_t, t, None
        return corrupt(x0, traj, t), t, traj.cumulative[t]
    if isinstance(process, DdpmSchedule):
        t = int(rng_t.integers(1, process.t_steps + 1))
        noise_seed = child_seed(seed_tags[0], "train-noise", *seed_tags[1:])
        return ddpm_forward_sample(x0, t, process, seed=noise_seed), t, None
    raise ConfigError(f"unsupported corruption source: {type(process).__name__}")


def train(model: TinyRegressor, images, process, cfg: TrainConfig):
    """Minibatch adaptive-moment training of the recovery loss.

    ``process`` selects the corruption source: a ProcessConfig for the
    frequency-removal bridge (or its averaging ablation), or a
    DdpmSchedule for the noise baseline.  Returns the trained model and
    the per-epoch mean loss trace.  Deterministic given (cfg.seed, data
    order).
    """
    from .sampler import DdpmSchedule

    images = [as_image(x) for x in images]
    if len(images) < 2:
        raise ConfigError(f"dataset must hold >= 2 images, got {len(images)}")
    if isinstance(process, DdpmSchedule) and cfg.loss_mode == "weighted":
        raise ConfigError("weighted loss requires removal masks; use upper_bound with a DDPM source")
    if isinstance(process, ProcessConfig) and process.process_kind == "averaging_constraint" and cfg.loss_mode == "weighted":
        raise ConfigError("weighted loss requires removal masks; use upper_bound with the averaging ablation")

    t_f = process.t_f if isinstance(process, ProcessConfig) else process.t_steps
    opt = _Adam(model.params, cfg.learning_rate, cfg.betas)
    trace: list[float] = []

    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(images))
        epoch_losses: list[float] = []
        for step_idx, start in enumerate(range(0, len(images), cfg.batch)):
            batch = [images[i] for i in order[start : start + cfg.batch]]
            grads = {n: np.zeros_like(p) for n, p in model.params.items()}
            loss = 0.0
            for i, x0 in enumerate(batch):
                x_t, t, keep = _draw_corrupted(x0, process, t_f, (cfg.seed, epoch, step_idx, i))
                out, cache = model.forward(_complex_to_channels(x_t), t)
                residual = _channels_to_complex(out) - x0
                if cfg.loss_mode == "weighted":
                    residual = idft2(apply_mask(dft2(residual), keep))
                loss += _energy(residual)
                dout = _complex_to_channels(residual) * (2.0 / len(batch))
                for n, g in model.backward(cache, dout).items():
                    grads[n] += g
            loss /= len(batch)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {step_idx}; lower the learning rate"
                )
            epoch_losses.append(loss)
            opt.step(model.params, grads)
        trace.append(float(np.mean(epoch_losses)))
    return model, trace


def grad_check(
    model: TinyRegressor,
    sample: np.ndarray,
    t: int,
    target: np.ndarray | None = None,
    n_params: int = 50,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Checks ``n_params`` randomly chosen parameters of the upper-bound loss
    ||G(sample, t) - target||^2.  A parameter whose +/-step perturbation
    flips a rectifier region is redrawn: with a fixed activation pattern
    the loss is exactly quadratic along the path, so central differences
    are exact there and meaningless across the kink.
    """
    sample = as_image(sample)
    chan_in = _complex_to_channels(sample)
    target_c = np.zeros_like(sample) if target is None else as_image(target)

    def loss_and_state(params_flat=None):
        if params_flat is not None:
            model.set_flat_params(params_flat)
        out, cache = model.forward(chan_in, t)
        residual = _channels_to_complex(out) - target_c
        return _energy(residual), cache, out

    base_flat = model.flat_params()
    loss0, cache, out = loss_and_state()
    residual = _channels_to_complex(out) - target_c
    grads = model.backward(cache, _complex_to_channels(residual) * 2.0)
    grad_flat = np.concatenate([grads[n].ravel() for n in PARAM_ORDER])

    rng = substream(seed, "grad-check")
    total = base_flat.size
    max_err = 0.0
    checked = 0
    attempts = 0
    try:
        while checked < n_params and attempts < 20 * n_params:
            attempts += 1
            idx = int(rng.integers(0, total))
            for sign in (+1.0, -1.0):
                flat = base_flat.copy()
                flat[idx] += sign * step
                loss_s, cache_s, _ = loss_and_state(flat)
                pattern = (np.sign(cache_s[2]), np.sign(cache_s[4]))
                if sign > 0:
                    loss_plus, pattern_plus = loss_s, pattern
                else:
                    loss_minus, pattern_minus = loss_s, pattern
            if not (
                np.array_equal(pattern_plus[0], pattern_minus[0])
                and np.array_equal(pattern_plus[1], pattern_minus[1])
            ):
                continue  # rectifier region flipped; redraw
            fd = (loss_plus - loss_minus) / (2.0 * step)
            analytic = grad_flat[idx]
            err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-10)
            max_err = max(max_err, err)
            checked += 1
    finally:
        model.set_flat_params(base_flat)
    if checked < n_params:
        raise RuntimeError("gradient check could not find enough kink-free parameters")
    return max_err


CKPT_MAGIC = b"FDBN1\x00"


def save_checkpoint(path, model: TinyRegressor, epochs: int = 0) -> None:
    """JSON header + raw little-endian float64 parameter block."""
    import json

    header = {
        "architecture": {
            "in_channels": 2,
            "hidden": HIDDEN,
            "out_channels": 2,
            "kernel": 3,
            "emb_dim": EMB_DIM,
            "param_order": list(PARAM_ORDER),
        },
        "T_f": model.t_f,
        "seed": model.seed,
        "epochs": epochs,
    }
    head = json.dumps(header, sort_keys=True).encode()
    block = model.flat_params().astype("<f8").tobytes()
    atomic_write_bytes(path, CKPT_MAGIC + struct.pack("<I", len(head)) + head + block)


def load_checkpoint(path) -> tuple[TinyRegressor, dict]:
    import json

    raw = Path(path).read_bytes()
    if raw[:6] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (head_len,) = struct.unpack("<I", raw[6:10])
    header = json.loads(raw[10 : 10 + head_len].decode())
    model = TinyRegressor(t_f=int(header["T_f"]), seed=int(header["seed"]))
    flat = np.frombuffer(raw, dtype="<f8", offset=10 + head_len)
    model.set_flat_params(flat.astype(np.float64))
    return model, header


def save_loss_trace(path, trace) -> None:
    write_csv(path, ["epoch", "loss"], [(i, float(v)) for i, v in enumerate(trace)])
