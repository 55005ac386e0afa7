"""Batch command-line front end.

Every subcommand reads a JSON run config (strictly validated: unknown
keys are rejected, all seeds are explicit), writes its artifacts
atomically under --out, and drops a run manifest that allows exact
replay (``fdb replay <manifest>``).  Exit codes: 0 success, 1 config
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .correction import estimate_weights, load_schedule, save_schedule
from .degradation import ProcessConfig, corrupt, export_trajectory, sample_trajectory
from .errors import ConfigError
from .fileio import read_cimg, read_json, write_cimg, write_csv, write_json, write_kmsk
from .grid import KSpaceGrid
from .imaging import (
    ImagingSystem,
    adjoint,
    default_calib,
    forward,
    make_sampling_mask,
    save_measurement,
    synth_coil_maps,
)
from .metrics import psnr, ssim
from .phantoms import CONTRASTS, PhantomSpec, make_phantom, save_dataset
from .recovery import (
    OracleRecovery,
    TinyRegressor,
    TrainConfig,
    ZeroFillRecovery,
    load_checkpoint,
    save_checkpoint,
    save_loss_trace,
    train,
)
from .rng import child_seed, substream
from .sampler import (
    SamplerConfig,
    ddpm_reconstruct,
    ddpm_schedule,
    reconstruct,
    reconstruction_steps,
)

# ---------------------------------------------------------------------------
# Run configuration

_CONFIG_SCHEMA = {
    "seed": int,
    "data": {"dims": int, "count": int, "contrast": str},
    "process": {"R_prime": float, "T_f": int, "density": str, "step_count_schedule": str},
    "sampler": {"R": float, "correction": str, "ct_mode": str, "dc_every_step": bool},
    "train": {"learning_rate": float, "epochs": int, "batch": int, "loss_mode": str},
}

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {"dims": 64, "count": 20, "contrast": "t1_like"},
    "process": {
        "R_prime": 2.0,
        "T_f": 64,
        "density": "radius_scheduled",
        "step_count_schedule": "constant",
    },
    "sampler": {"R": 4.0, "correction": "learned", "ct_mode": "independent", "dc_every_step": True},
    "train": {"learning_rate": 0.01, "epochs": 40, "batch": 4, "loss_mode": "upper_bound"},
}


def _coerce(value, want, where: str):
    if want is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise AssertionError(where)


def validate_config(raw: dict) -> dict:
    """Merge a user config over the defaults, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in raw.items():
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
        if key == "seed":
            cfg["seed"] = _coerce(value, int, "seed")
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        for sub, subval in value.items():
            if sub not in _CONFIG_SCHEMA[key]:
                raise ConfigError(f"unknown config key: {key}.{sub}")
            cfg[key][sub] = _coerce(subval, _CONFIG_SCHEMA[key][sub], f"{key}.{sub}")
    return cfg


def load_config(path: str | None, seed_override: int | None) -> dict:
    raw = read_json(path) if path else {}
    cfg = validate_config(raw)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    return cfg


def _process_config(cfg: dict, seed: int, **overrides) -> ProcessConfig:
    p = dict(cfg["process"])
    p.update(overrides)
    return ProcessConfig(
        r_prime=p["R_prime"],
        t_f=p["T_f"],
        density=p["density"],
        step_count_schedule=p["step_count_schedule"],
        process_kind=p.get("process_kind", "frequency_removal"),
        seed=seed,
    )


def _phantom(cfg: dict, *tags) -> np.ndarray:
    data = cfg["data"]
    spec = PhantomSpec(
        height=data["dims"],
        width=data["dims"],
        contrast=data["contrast"],
        seed=child_seed(cfg["seed"], *tags),
    )
    return make_phantom(spec)


def _dataset(cfg: dict, count: int, group: str) -> list[np.ndarray]:
    return [_phantom(cfg, group, i) for i in range(count)]


def _load_images(path) -> list[np.ndarray]:
    """A dataset directory (manifest.json + images/) or a single CIMG file."""
    path = Path(path)
    if path.is_dir():
        manifest = read_json(path / "manifest.json")
        return [read_cimg(path / "images" / name) for name in manifest["ids"]]
    return [read_cimg(path)]


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Subcommands.  Each handler returns a list of artifact names (relative to
# --out) for the run manifest.


def cmd_phantom(cfg, args, out: Path) -> list[str]:
    images = _dataset(cfg, cfg["data"]["count"], "dataset")
    manifest = save_dataset(out, images, cfg["data"]["contrast"], cfg["seed"])
    return ["manifest.json"] + [f"images/{name}" for name in manifest["ids"]]


def cmd_mask(cfg, args, out: Path) -> list[str]:
    dims = cfg["data"]["dims"]
    grid = KSpaceGrid(dims, dims)
    calib = args.calib if args.calib is not None else default_calib(dims, dims)
    names = []
    seeds = []
    for i in range(args.count):
        seed_i = child_seed(cfg["seed"], "mask", i)
        mask = make_sampling_mask(grid, cfg["sampler"]["R"], args.density, calib, seed=seed_i)
        name = f"mask_{i:02d}.kmsk"
        write_kmsk(out / name, mask)
        names.append(name)
        seeds.append(seed_i)
    write_json(
        out / "masks.json",
        {
            "R": cfg["sampler"]["R"],
            "density": args.density,
            "calib": calib,
            "count": args.count,
            "seeds": seeds,
            "files": names,
        },
    )
    return names + ["masks.json"]


def _parse_snapshots(text: str | None, t_total: int) -> list[int]:
    if text:
        try:
            steps = sorted({int(s) for s in text.split(",")})
        except ValueError as exc:
            raise ConfigError(f"--snapshots must be comma-separated integers: {exc}") from exc
    else:
        steps = sorted({0, t_total // 4, t_total // 2, (3 * t_total) // 4, t_total})
    for t in steps:
        if not 0 <= t <= t_total:
            raise ConfigError(f"snapshot step {t} out of range [0, {t_total}]")
    return steps


def cmd_forward(cfg, args, out: Path) -> list[str]:
    dims = cfg["data"]["dims"]
    proc = _process_config(cfg, seed=child_seed(cfg["seed"], "trajectory"))
    t_total = args.t_total if args.t_total is not None else proc.t_f
    grid = KSpaceGrid(dims, dims)
    traj = sample_trajectory(grid, proc, t_total=t_total)
    steps = _parse_snapshots(args.snapshots, t_total)
    manifest = export_trajectory(traj, proc, out, steps)
    names = ["trajectory.json"] + list(manifest["mask_files"].values())
    if args.image:
        x0 = read_cimg(args.image)
    else:
        x0 = _phantom(cfg, "forward-image")
        write_cimg(out / "original.cimg", x0)
        names.append("original.cimg")
    if x0.shape != grid.shape:
        raise ConfigError(f"image shape {x0.shape} does not match configured dims {dims}")
    for t in steps:
        name = f"corrupted_t{t:04d}.cimg"
        write_cimg(out / name, corrupt(x0, traj, t))
        names.append(name)
    return names


def _plot_schedule(out: Path, weights: np.ndarray) -> str | None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, weights.size + 1), weights, lw=1.5)
    ax.set_xlabel("t")
    ax.set_ylabel("w")
    ax.set_title("correction weight schedule")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "schedule.png", dpi=110)
    plt.close(fig)
    return "schedule.png"


def cmd_estimate_w(cfg, args, out: Path) -> list[str]:
    if args.dataset:
        images = _load_images(args.dataset)
    else:
        images = _dataset(cfg, cfg["data"]["count"], "dataset")
    proc = _process_config(cfg, seed=child_seed(cfg["seed"], "process"))
    schedule = estimate_weights(images, proc, args.mc_samples, seed=child_seed(cfg["seed"], "mc"))
    save_schedule(out, schedule, r_prime=proc.r_prime, seed=cfg["seed"])
    names = ["schedule.csv", "schedule.json"]
    if not args.no_plot:
        plotted = _plot_schedule(out, schedule.weights)
        if plotted:
            names.append(plotted)
    return names


def _train_model(cfg, images, corruption: str, ddpm_steps: int):
    tc = cfg["train"]
    train_cfg = TrainConfig(
        learning_rate=tc["learning_rate"],
        epochs=tc["epochs"],
        batch=tc["batch"],
        loss_mode=tc["loss_mode"],
        seed=child_seed(cfg["seed"], "train"),
    )
    if corruption == "ddpm":
        process = ddpm_schedule(ddpm_steps)
        t_f = ddpm_steps
    else:
        process = _process_config(cfg, seed=child_seed(cfg["seed"], "train-process"))
        t_f = process.t_f
    model = TinyRegressor(t_f=t_f, seed=child_seed(cfg["seed"], "model-init"))
    model, trace = train(model, images, process, train_cfg)
    return model, trace, train_cfg


def cmd_train(cfg, args, out: Path) -> list[str]:
    if args.dataset:
        images = _load_images(args.dataset)
    else:
        images = _dataset(cfg, cfg["data"]["count"], "dataset")
    model, trace, train_cfg = _train_model(cfg, images, args.corruption, args.ddpm_steps)
    save_checkpoint(out / "checkpoint.ckpt", model, epochs=train_cfg.epochs)
    save_loss_trace(out / "loss_trace.csv", trace)
    return ["checkpoint.ckpt", "loss_trace.csv"]


def _make_operator(args, reference):
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        return model
    if args.recovery == "oracle":
        return OracleRecovery(reference)
    return ZeroFillRecovery()


def _simulate_measurement(cfg, args, reference, out: Path):
    grid = KSpaceGrid(*reference.shape)
    calib = args.calib if args.calib is not None else default_calib(*reference.shape)
    mask = make_sampling_mask(
        grid, cfg["sampler"]["R"], args.mask_density, calib, seed=child_seed(cfg["seed"], "mask")
    )
    maps = synth_coil_maps(grid, args.coils, seed=child_seed(cfg["seed"], "coils"))
    system = ImagingSystem(mask=mask, coil_maps=maps, grid=grid)
    y = forward(
        system,
        reference,
        noise_sigma=args.noise_sigma,
        seed=child_seed(cfg["seed"], "measurement"),
        acceleration=cfg["sampler"]["R"],
    )
    save_measurement(out / "measurement", system, y, cfg["seed"], args.mask_density)
    return system, y


def _write_diagnostics(out: Path, rows) -> None:
    write_csv(out / "diagnostics.csv", ["t", "residual", "psnr_db"], rows)


def cmd_reconstruct(cfg, args, out: Path) -> list[str]:
    reference = read_cimg(args.image) if args.image else _phantom(cfg, "eval-image", 0)
    write_cimg(out / "reference.cimg", reference)
    system, y = _simulate_measurement(cfg, args, reference, out)
    operator = _make_operator(args, reference)

    samp = cfg["sampler"]
    proc = _process_config(cfg, seed=child_seed(cfg["seed"], "process"))
    scfg = SamplerConfig(
        t_f=proc.t_f,
        r_prime=proc.r_prime,
        r=samp["R"],
        correction=samp["correction"],
        ct_mode=samp["ct_mode"],
        dc_every_step=samp["dc_every_step"],
        seed=child_seed(cfg["seed"], "sampling"),
    )
    schedule = load_schedule(args.schedule) if args.schedule else None
    if scfg.ct_mode == "fixed":
        t_r = reconstruction_steps(scfg.t_f, scfg.r, scfg.r_prime)
        traj_source = sample_trajectory(system.grid, proc, t_total=t_r)
    else:
        traj_source = proc
    result = reconstruct(y, system, operator, traj_source, schedule, scfg, reference=reference)

    zero_fill = adjoint(system, y)
    write_cimg(out / "recon.cimg", result.image)
    write_cimg(out / "zerofill.cimg", zero_fill)
    _write_diagnostics(out, result.diagnostics)
    summary = {
        "T_r": result.t_r,
        "psnr_recon_db": psnr(reference, result.image),
        "psnr_zerofill_db": psnr(reference, zero_fill),
        "ssim_recon": ssim(reference, result.image),
        "ssim_zerofill": ssim(reference, zero_fill),
    }
    write_json(out / "summary.json", summary)
    print(
        f"T_r={result.t_r}  PSNR recon {summary['psnr_recon_db']:.2f} dB "
        f"vs zero-fill {summary['psnr_zerofill_db']:.2f} dB"
    )
    return [
        "reference.cimg",
        "recon.cimg",
        "zerofill.cimg",
        "diagnostics.csv",
        "summary.json",
        "measurement/measurement.json",
        "measurement/mask.kmsk",
    ] + [f"measurement/coil_{c:02d}.cimg" for c in range(system.n_coils)]


def cmd_ddpm_reconstruct(cfg, args, out: Path) -> list[str]:
    reference = read_cimg(args.image) if args.image else _phantom(cfg, "eval-image", 0)
    write_cimg(out / "reference.cimg", reference)
    system, y = _simulate_measurement(cfg, args, reference, out)
    operator = _make_operator(args, reference)
    schedule = ddpm_schedule(args.ddpm_steps)
    result = ddpm_reconstruct(
        y, system, operator, schedule, seed=child_seed(cfg["seed"], "ddpm-sampling"), reference=reference
    )
    zero_fill = adjoint(system, y)
    write_cimg(out / "recon.cimg", result.image)
    write_cimg(out / "zerofill.cimg", zero_fill)
    _write_diagnostics(out, result.diagnostics)
    summary = {
        "T": schedule.t_steps,
        "psnr_recon_db": psnr(reference, result.image),
        "psnr_zerofill_db": psnr(reference, zero_fill),
    }
    write_json(out / "summary.json", summary)
    print(f"T={schedule.t_steps}  PSNR recon {summary['psnr_recon_db']:.2f} dB")
    return ["reference.cimg", "recon.cimg", "zerofill.cimg", "diagnostics.csv", "summary.json"]


ABLATION_VARIANTS = (
    "fdb",
    "ct_uniform",
    "n_log_schedule",
    "xt_averaging",
    "ct_fixed",
    "no_correction",
    "wt_linear",
)


def cmd_ablate(cfg, args, out: Path) -> list[str]:
    train_images = _dataset(cfg, cfg["data"]["count"], "dataset")
    eval_images = _dataset(cfg, args.eval_count, "eval")
    mc = args.mc_samples
    threads = args.threads

    base_proc = _process_config(cfg, seed=child_seed(cfg["seed"], "process"))
    variants_proc = {
        "fdb": base_proc,
        "ct_uniform": _process_config(cfg, seed=child_seed(cfg["seed"], "process"), density="uniform"),
        "n_log_schedule": _process_config(
            cfg, seed=child_seed(cfg["seed"], "process"), step_count_schedule="log"
        ),
        "xt_averaging": _process_config(
            cfg, seed=child_seed(cfg["seed"], "process"), process_kind="averaging_constraint"
        ),
    }

    models: dict[str, TinyRegressor] = {}
    schedules: dict[str, object] = {}
    for name, proc in variants_proc.items():
        tc = cfg["train"]
        train_cfg = TrainConfig(
            learning_rate=tc["learning_rate"],
            epochs=tc["epochs"],
            batch=tc["batch"],
            loss_mode=tc["loss_mode"] if proc.process_kind == "frequency_removal" else "upper_bound",
            seed=child_seed(cfg["seed"], "train", name),
        )
        model = TinyRegressor(t_f=proc.t_f, seed=child_seed(cfg["seed"], "model-init", name))
        model, _ = train(model, train_images, proc, train_cfg)
        models[name] = model
        if proc.process_kind == "frequency_removal":
            schedules[name] = estimate_weights(
                train_images, proc, mc, seed=child_seed(cfg["seed"], "mc", name)
            )
        else:
            schedules[name] = None
    schedules["xt_averaging"] = schedules["fdb"]  # sampling is unchanged for this variant

    samp = cfg["sampler"]
    rate = samp["R"]
    t_r = reconstruction_steps(base_proc.t_f, rate, base_proc.r_prime)

    def run_variant(variant: str):
        if variant in variants_proc:
            model, proc, schedule = models[variant], variants_proc[variant], schedules[variant]
        else:
            model, proc, schedule = models["fdb"], base_proc, schedules["fdb"]
        correction = {"no_correction": "none", "wt_linear": "linear"}.get(variant, "learned")
        ct_mode = "fixed" if variant == "ct_fixed" else "independent"

        def recon_one(item):
            idx, reference = item
            grid = KSpaceGrid(*reference.shape)
            calib = args.calib if args.calib is not None else default_calib(*reference.shape)
            mask = make_sampling_mask(
                grid, rate, args.mask_density, calib, seed=child_seed(cfg["seed"], "eval-mask", idx)
            )
            system = ImagingSystem(
                mask=mask,
                coil_maps=synth_coil_maps(grid, args.coils, seed=child_seed(cfg["seed"], "coils", idx)),
                grid=grid,
            )
            y = forward(system, reference, noise_sigma=args.noise_sigma,
                        seed=child_seed(cfg["seed"], "eval-noise", idx), acceleration=rate)
            scfg = SamplerConfig(
                t_f=proc.t_f, r_prime=proc.r_prime, r=rate, correction=correction,
                ct_mode=ct_mode, dc_every_step=samp["dc_every_step"],
                seed=child_seed(cfg["seed"], "sampling", variant, idx),
            )
            if ct_mode == "fixed":
                traj_source = sample_trajectory(grid, proc, t_total=t_r)
            else:
                traj_source = proc
            result = reconstruct(y, system, model, traj_source, schedule, scfg, reference=reference)
            return psnr(reference, result.image), ssim(reference, result.image)

        pairs = _pmap(recon_one, list(enumerate(eval_images)), threads)
        ps = np.array([p for p, _ in pairs])
        ss = np.array([s for _, s in pairs])
        return (variant, float(ps.mean()), float(ps.std()), float(ss.mean()), float(ss.std()))

    rows = [run_variant(v) for v in ABLATION_VARIANTS]
    write_csv(out / "ablation.csv", ["variant", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"], rows)
    for row in rows:
        print(f"{row[0]:<16} PSNR {row[1]:6.2f} +/- {row[2]:.2f}  SSIM {row[3]:.4f}")
    return ["ablation.csv"]


def _metric_pairs(ref_path: Path, test_path: Path) -> list[tuple[str, str, Path, Path]]:
    if ref_path.is_dir() != test_path.is_dir():
        raise ConfigError("--ref and --test must both be files or both be dataset directories")
    if not ref_path.is_dir():
        return [(ref_path.name, test_path.name, ref_path, test_path)]
    ref_manifest = read_json(ref_path / "manifest.json")
    test_manifest = read_json(test_path / "manifest.json")
    shared = [name for name in ref_manifest["ids"] if name in set(test_manifest["ids"])]
    if not shared:
        raise ConfigError("datasets share no image ids")
    return [
        (name, name, ref_path / "images" / name, test_path / "images" / name) for name in shared
    ]


def cmd_metrics(cfg, args, out: Path) -> list[str]:
    pairs = _metric_pairs(Path(args.ref), Path(args.test))

    def one(pair):
        ref_id, test_id, rp, tp = pair
        a, b = read_cimg(rp), read_cimg(tp)
        return (ref_id, test_id, psnr(a, b), ssim(a, b))

    rows = _pmap(one, pairs, args.threads)
    write_csv(out / "metrics.csv", ["ref", "test", "psnr_db", "ssim"], rows)
    return ["metrics.csv"]


def cmd_replay(args) -> int:
    manifest = read_json(args.manifest)
    command = manifest["command"]
    if command not in _HANDLERS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    out = Path(args.out) if args.out else Path(manifest["out"])
    argv = [command, "--out", str(out)]
    for key, value in manifest["flags"].items():
        if value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    return _run(argv, config_dict=manifest["config"])


# ---------------------------------------------------------------------------
# Argument parsing and dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, per the CLI contract
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="JSON run config (merged over defaults)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads for per-item parallel stages (default: $FDB_THREADS or 1)",
    )


def _add_measurement_flags(p: _Parser) -> None:
    p.add_argument("--image", help="reference CIMG1 image (default: a generated held-out phantom)")
    p.add_argument("--coils", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--mask-density", choices=("normal2d", "normal1d", "uniform"), default="normal2d")
    p.add_argument("--calib", type=int, default=None, help="side of the fully kept central block")
    p.add_argument("--checkpoint", help="trained recovery checkpoint")
    p.add_argument(
        "--recovery",
        choices=("zero_fill", "oracle"),
        default="zero_fill",
        help="fallback recovery operator when no checkpoint is given",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="fdb", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fdbridge {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    p = sub.add_parser("phantom", parents=[], help="generate a synthetic dataset")
    _add_common(p)

    p = sub.add_parser("mask", help="generate sampling masks")
    _add_common(p)
    p.add_argument("--density", choices=("normal2d", "normal1d", "uniform"), default="normal2d")
    p.add_argument("--calib", type=int, default=None)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("forward", help="simulate degradation trajectory snapshots")
    _add_common(p)
    p.add_argument("--snapshots", help="comma-separated steps to export (default: quartiles)")
    p.add_argument("--t-total", type=int, default=None, help="trajectory length (default: T_f)")
    p.add_argument("--image", help="CIMG1 image to corrupt (default: a generated phantom)")

    p = sub.add_parser("estimate-w", help="Monte-Carlo correction-weight schedule")
    _add_common(p)
    p.add_argument("--dataset", help="dataset directory (default: generate from the config)")
    p.add_argument("--mc-samples", type=int, default=2000)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("train", help="train the recovery operator")
    _add_common(p)
    p.add_argument("--dataset", help="dataset directory (default: generate from the config)")
    p.add_argument("--corruption", choices=("bridge", "ddpm"), default="bridge")
    p.add_argument("--ddpm-steps", type=int, default=200)

    p = sub.add_parser("reconstruct", help="reconstruct an undersampled acquisition")
    _add_common(p)
    _add_measurement_flags(p)
    p.add_argument("--schedule", help="correction schedule CSV (required for correction='learned')")

    p = sub.add_parser("ddpm-reconstruct", help="noise-diffusion baseline reconstruction")
    _add_common(p)
    _add_measurement_flags(p)
    p.add_argument("--ddpm-steps", type=int, default=200)

    p = sub.add_parser("ablate", help="run the ablation grid and summarize metrics")
    _add_common(p)
    p.add_argument("--eval-count", type=int, default=5)
    p.add_argument("--mc-samples", type=int, default=1000)
    p.add_argument("--coils", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--mask-density", choices=("normal2d", "normal1d", "uniform"), default="normal2d")
    p.add_argument("--calib", type=int, default=None)

    p = sub.add_parser("metrics", help="PSNR/SSIM between reference and test images")
    _add_common(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("replay", help="re-execute a run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: the manifest's)")

    return parser


_HANDLERS = {
    "phantom": cmd_phantom,
    "mask": cmd_mask,
    "forward": cmd_forward,
    "estimate-w": cmd_estimate_w,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "ddpm-reconstruct": cmd_ddpm_reconstruct,
    "ablate": cmd_ablate,
    "metrics": cmd_metrics,
}

_COMMON_KEYS = {"command", "config", "seed", "out", "threads"}


def _flag_dict(args: argparse.Namespace) -> dict:
    flags = {}
    for key, value in vars(args).items():
        if key in _COMMON_KEYS:
            continue
        if isinstance(value, str) and key in ("image", "dataset", "checkpoint", "schedule", "ref", "test"):
            value = str(Path(value).resolve())
        flags[key] = value
    return flags


def _run(argv, config_dict=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    if args.command == "replay":
        return cmd_replay(args)

    if args.threads is None:
        args.threads = int(os.environ.get("FDB_THREADS", "1"))
    if config_dict is not None:
        cfg = validate_config(config_dict)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
    else:
        cfg = load_config(args.config, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    outputs = _HANDLERS[args.command](cfg, args, out)
    wall = time.monotonic() - started
    write_json(
        out / "run_manifest.json",
        {
            "command": args.command,
            "config": cfg,
            "flags": _flag_dict(args),
            "out": str(out.resolve()),
            "outputs": sorted(outputs),
            "threads": args.threads,
            "wall_time_s": wall,
            "tool": {"name": "fdbridge", "version": __version__},
        },
    )
    return 0


def main(argv=None) -> int:
    try:
        code = _run(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = 1
    except Exception as exc:  # runtime failure contract: exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = 2
    return code


if __name__ == "__main__":
    raise SystemExit(main())
