"""Experiment orchestration: configs, two-phase training, sweeps, figures.

A run is identified by the hash of its flat key=value config. Phase 1
trains the denoiser with the squared-error objective; phase 2 copies and
freezes those weights as the perceptual network and continues training the
online model with the feature-distance objective. Evaluation samples the
EMA weights and scores them against held-out data with the two-sample
metrics.

Per-step RNG streams are derived from (seed, phase, step), so an
interrupted run resumed from a checkpoint replays the identical remainder.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .metrics import MetricReport, append_report_csv, compute_report
from .models import (
    Conditioning,
    DenoiserModel,
    FeatureTap,
    build_model,
    freeze_copy,
    load_tensors,
    save_tensors,
)
from .objectives import (
    DeltaStep,
    GaussianAroundT,
    SpConfig,
    UniformInt,
    apply_cond_dropout,
    mse_loss,
    sp_loss,
)
from .optim import AdamState, adam_step, collect_grads, ema_init, ema_update, zero_grads
from .oracles import FiniteDataset
from .sampler import SamplerConfig, sample
from .schedule import NoiseSchedule, build_zero_snr_schedule
from .tensor import Tape, Tensor, backward

__all__ = [
    "ExperimentConfig",
    "RunManifest",
    "PhaseResult",
    "train_phase",
    "load_train_state",
    "run_experiment",
    "run_ablation",
    "emit_figures",
    "generate_for_config",
    "evaluate_model",
    "code_version_hash",
    "ABLATION_AXES",
]

# Full-scale reference values from the original large-model recipe
# (lr 3e-5, batch 896, 60k + 50k steps, EMA 0.9995); the defaults below
# are desk-scale stand-ins chosen to finish in minutes on a CPU.
_TOY_LR = {"mlp2d": 3e-4, "tiny_unet": 1e-4}


@dataclass
class ExperimentConfig:
    dataset: str = "gauss_mixture_8"
    dataset_n: int = 4096
    holdout_n: int = 2048
    dataset_sigma: float = -1.0  # generator spread; -1 keeps the builtin default
    image_dir: str = ""  # when set, ingest PGM images instead of generating
    unconditional: bool = False

    model: str = "mlp2d"
    hidden: int = 256
    widths: str = "32,64,128"
    time_dim: int = 64

    schedule_T: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012

    mse_steps: int = 5000
    mse_lr: float = -1.0  # -1 resolves to the per-model toy default
    mse_batch: int = 256
    sp_steps: int = 5000
    sp_lr: float = -1.0
    sp_batch: int = 256

    sp_tap: str = "mid_only"
    sp_tprime: str = "uniform"
    sp_distance: str = "mse"
    cond_dropout: float = 0.1
    ema_decay: float = 0.9995

    eval_steps: int = 25
    eval_cfg_scale: float = 1.0
    eval_rescale_phi: float = 0.0
    eval_samples: int = 2048
    eval_batch: int = 256

    seed: int = 0
    log_every: int = 50
    ckpt_every: int = 0  # 0: only the final checkpoint per phase

    def lr(self, phase: str) -> float:
        raw = self.mse_lr if phase == "mse" else self.sp_lr
        return _TOY_LR[self.model] if raw < 0 else raw

    def widths_tuple(self) -> tuple:
        try:
            parts = tuple(int(w) for w in self.widths.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad widths '{self.widths}'") from exc
        if len(parts) != 3:
            raise ConfigError(f"widths must list three values, got '{self.widths}'")
        return parts

    def sp_config(self) -> SpConfig:
        taps = {t.value: t for t in FeatureTap}
        if self.sp_tap not in taps:
            raise ConfigError(f"unknown sp_tap '{self.sp_tap}'")
        spec = self.sp_tprime
        if spec == "uniform":
            sampler = UniformInt()
        elif spec.startswith("delta:"):
            sampler = DeltaStep(int(spec.split(":", 1)[1]))
        elif spec.startswith("gauss:"):
            sampler = GaussianAroundT(float(spec.split(":", 1)[1]))
        else:
            raise ConfigError(f"unknown sp_tprime '{spec}'")
        return SpConfig(
            tap=taps[self.sp_tap],
            tprime_sampler=sampler,
            feature_distance=self.sp_distance,
            cond_dropout_prob=self.cond_dropout,
        )

    def schedule(self) -> NoiseSchedule:
        return build_zero_snr_schedule(self.schedule_T, self.beta_start, self.beta_end)

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        pairs = {}
        try:
            with open(path) as fh:
                for lineno, raw in enumerate(fh, 1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected key=value")
                    key, value = line.split("=", 1)
                    pairs[key.strip()] = value.strip()
        except OSError as exc:
            raise ConfigError(f"cannot read config file '{path}': {exc}") from exc
        return cls.from_pairs(pairs)

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "ExperimentConfig":
        typed = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, value in pairs.items():
            if key not in by_name:
                raise ConfigError(f"unknown config key '{key}'")
            ftype = by_name[key].type
            try:
                if ftype == "int":
                    typed[key] = int(value)
                elif ftype == "float":
                    typed[key] = float(value)
                elif ftype == "bool":
                    typed[key] = value.lower() in ("1", "true", "yes")
                else:
                    typed[key] = value
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {value}") from exc
        return cls(**typed)


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    outputs: dict[str, str] = field(default_factory=dict)
    checkpoints: dict[str, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)


def code_version_hash() -> str:
    """Content hash over the package sources, for provenance in manifests."""
    pkg_dir = os.path.dirname(__file__)
    digest = hashlib.sha256()
    for fname in sorted(os.listdir(pkg_dir)):
        if fname.endswith(".py"):
            with open(os.path.join(pkg_dir, fname), "rb") as fh:
                digest.update(fname.encode())
                digest.update(fh.read())
    return digest.hexdigest()[:12]


# ---------------------------------------------------------------------------
# data and model construction


def load_dataset(config: ExperimentConfig, purpose: int) -> FiniteDataset:
    """purpose 0 = training set, 1 = held-out evaluation set."""
    from .datasets import generate_dataset, ingest_images

    if config.image_dir:
        data = ingest_images(config.image_dir)
        # deterministic split: even indices train, odd hold out
        mask = (np.arange(len(data)) % 2 == 0) if purpose == 0 else (np.arange(len(data)) % 2 == 1)
        return data.subset(mask)
    n = config.dataset_n if purpose == 0 else config.holdout_n
    params: dict = {"n": n}
    if config.dataset_sigma >= 0:
        key = {"gauss_mixture_8": "sigma", "two_moons": "noise"}.get(config.dataset)
        if key:
            params[key] = config.dataset_sigma
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 100 + purpose)))
    return generate_dataset(config.dataset, params, rng)


def model_for_config(config: ExperimentConfig, data: FiniteDataset) -> DenoiserModel:
    num_classes = max(1, data.num_classes)
    if config.model == "mlp2d":
        model_cfg = {"num_classes": num_classes, "hidden": config.hidden,
                     "time_dim": config.time_dim, "T": config.schedule_T}
    elif config.model == "tiny_unet":
        model_cfg = {
            "num_classes": num_classes,
            "in_channels": int(data.sample_shape[0]),
            "image_size": int(data.sample_shape[1]),
            "widths": config.widths_tuple(),
            "time_dim": config.time_dim,
            "T": config.schedule_T,
        }
    else:
        raise ConfigError(f"unknown model '{config.model}'")
    return build_model(config.model, model_cfg, seed=config.seed)


# ---------------------------------------------------------------------------
# training


@dataclass
class PhaseResult:
    model: DenoiserModel
    ema: dict[str, np.ndarray]
    adam: AdamState
    losses: list[float]
    final_step: int

    def ema_model(self) -> DenoiserModel:
        m = self.model.clone()
        m.load_state(self.ema)
        return m


def _step_rng(seed: int, phase_id: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, phase_id, step)))


def _batch(data: FiniteDataset, batch_size: int, rng: np.random.Generator,
           unconditional: bool) -> tuple[Tensor, Conditioning]:
    idx = rng.integers(0, len(data), size=batch_size)
    x0 = Tensor(np.ascontiguousarray(data.points[idx], dtype=np.float32))
    if unconditional or data.labels is None:
        return x0, Conditioning.null(batch_size)
    return x0, Conditioning.of(data.labels[idx])


def save_train_state(path: str, model: DenoiserModel, ema: dict, adam: AdamState,
                     step: int, phase: str, config_hash: str) -> None:
    tensors = {}
    for name, p in model.parameters().items():
        tensors[f"online/{name}"] = p.data
        tensors[f"ema/{name}"] = ema[name]
        tensors[f"adam_m/{name}"] = adam.m[name]
        tensors[f"adam_v/{name}"] = adam.v[name]
    tensors["adam_t"] = np.array([adam.t], dtype=np.float32)
    meta = {
        "model_kind": model.kind,
        "model_config": model.config(),
        "phase": phase,
        "step": step,
        "config_hash": config_hash,
    }
    save_tensors(path, "train_state", meta, tensors)


def load_train_state(path: str) -> tuple[DenoiserModel, dict, AdamState, dict]:
    kind, meta, tensors = load_tensors(path)
    if kind != "train_state":
        raise ConfigError(f"{path} is not a training checkpoint")
    model = build_model(meta["model_kind"], meta["model_config"])
    model.load_state({k.split("/", 1)[1]: v for k, v in tensors.items()
                      if k.startswith("online/")})
    ema = {k.split("/", 1)[1]: v.copy() for k, v in tensors.items() if k.startswith("ema/")}
    adam = AdamState(model.parameters())
    for name in model.parameters():
        adam.m[name] = tensors[f"adam_m/{name}"].astype(np.float64)
        adam.v[name] = tensors[f"adam_v/{name}"].astype(np.float64)
    adam.t = int(tensors["adam_t"][0])
    return model, ema, adam, meta


def train_phase(model: DenoiserModel, data: FiniteDataset, objective: str,
                config: ExperimentConfig, s: NoiseSchedule,
                frozen: DenoiserModel | None = None,
                ema: dict | None = None, adam: AdamState | None = None,
                start_step: int = 0, log_path: str | None = None,
                ckpt_path: str | None = None) -> PhaseResult:
    """Run one training phase; mutates model in place and returns its EMA.

    The feature-distance phase requires the frozen perceptual copy; a NaN
    loss aborts with NumericalError, leaving the last periodic checkpoint
    on disk (nothing is overwritten on the way down).
    """
    if objective not in ("mse", "sp"):
        raise ConfigError(f"unknown objective '{objective}'")
    if objective == "sp" and frozen is None:
        raise ContractError("feature-distance training requires the frozen copy "
                            "of an MSE-trained checkpoint")
    phase_id = 1 if objective == "mse" else 2
    steps = config.mse_steps if objective == "mse" else config.sp_steps
    batch_size = config.mse_batch if objective == "mse" else config.sp_batch
    lr = config.lr(objective)
    sp_cfg = config.sp_config()
    params = model.parameters()
    ema = ema if ema is not None else ema_init(params)
    adam = adam if adam is not None else AdamState(params)
    losses: list[float] = []
    chash = config.config_hash()

    logger = _PhaseLogger(log_path, chash) if log_path else None
    step = start_step
    for step in range(start_step, steps):
        rng = _step_rng(config.seed, phase_id, step)
        t0 = time.perf_counter()
        x0, c = _batch(data, batch_size, rng, config.unconditional)
        if not config.unconditional:
            c = apply_cond_dropout(c, sp_cfg.cond_dropout_prob, rng)
        try:
            with Tape() as tape:
                if objective == "mse":
                    res = mse_loss(model, x0, c, rng, s)
                else:
                    res = sp_loss(model, frozen, x0, c, rng, s, sp_cfg)
            backward(res.loss, tape)
            adam_step(params, collect_grads(params), adam, lr)
        except NumericalError as exc:
            raise NumericalError(
                f"{objective} phase aborted at step {step}: {exc} "
                f"(last-good checkpoint retained)") from exc
        finally:
            zero_grads(params)
        ema_update(ema, params, config.ema_decay)
        losses.append(res.loss.item())
        wall_ms = (time.perf_counter() - t0) * 1e3
        if logger and (step % config.log_every == 0 or step == steps - 1):
            logger.row(step, losses[-1], lr, wall_ms, res.aux)
        if ckpt_path and config.ckpt_every and (step + 1) % config.ckpt_every == 0:
            save_train_state(ckpt_path, model, ema, adam, step + 1, objective, chash)
    if ckpt_path:
        save_train_state(ckpt_path, model, ema, adam, steps, objective, chash)
    if logger:
        logger.close()
    return PhaseResult(model, ema, adam, losses, steps)


class _PhaseLogger:
    """Append-only CSV: step, loss, lr, wall_ms, t_mean, tprime_mean."""

    def __init__(self, path: str, config_hash: str):
        new = not os.path.exists(path)
        self.fh = open(path, "a", newline="")
        self.writer = csv.writer(self.fh)
        if new:
            self.fh.write(f"# config_hash={config_hash}\n")
            self.writer.writerow(["step", "loss", "lr", "wall_ms", "t_mean", "tprime_mean"])

    def row(self, step: int, loss: float, lr: float, wall_ms: float, aux: dict) -> None:
        self.writer.writerow([
            step,
            repr(float(loss)),
            lr,
            f"{wall_ms:.3f}",
            f"{aux.get('t_mean', float('nan')):.3f}",
            f"{aux.get('tprime_mean', float('nan')):.3f}" if "tprime_mean" in aux else "",
        ])

    def close(self) -> None:
        self.fh.close()


# ---------------------------------------------------------------------------
# evaluation


def generate_for_config(model: DenoiserModel, config: ExperimentConfig, s: NoiseSchedule,
                        labels: np.ndarray | None, seed_stream: tuple,
                        record_first_trajectory: bool = False):
    """Sample eval_samples points in batches; returns (samples, trajectory)."""
    n = config.eval_samples
    sampler_cfg = SamplerConfig(
        steps=config.eval_steps,
        cfg_scale=config.eval_cfg_scale,
        rescale_phi=config.eval_rescale_phi,
        record_trajectory=False,
    )
    out = []
    first_traj = None
    done = 0
    chunk_idx = 0
    while done < n:
        take = min(config.eval_batch, n - done)
        if config.unconditional or labels is None:
            c = Conditioning.null(take)
        else:
            c = Conditioning.of(labels[done : done + take])
        rng = np.random.default_rng(np.random.SeedSequence(seed_stream + (chunk_idx,)))
        cfg = sampler_cfg
        if record_first_trajectory and chunk_idx == 0:
            cfg = replace(sampler_cfg, record_trajectory=True)
        traj = sample(model, c, cfg, s, rng)
        if record_first_trajectory and chunk_idx == 0:
            first_traj = traj
        out.append(traj.final)
        done += take
        chunk_idx += 1
    return np.concatenate(out, axis=0), first_traj


def evaluate_model(model: DenoiserModel, config: ExperimentConfig, s: NoiseSchedule,
                   holdout: FiniteDataset, seed_stream: tuple) -> tuple[MetricReport, np.ndarray]:
    labels = None if holdout.labels is None else holdout.labels[: config.eval_samples]
    samples, _ = generate_for_config(model, config, s, labels, seed_stream)
    report = compute_report(samples, holdout.points[: config.eval_samples])
    return report, samples


# ---------------------------------------------------------------------------
# full experiment and ablations


def run_experiment(config: ExperimentConfig, workdir: str,
                   emit_figs: bool = True) -> dict:
    """Two-phase run: squared-error pretrain, feature-distance fine-tune,
    then metrics for both models against held-out data."""
    t_start = time.perf_counter()
    chash = config.config_hash()
    run_dir = os.path.join(workdir, chash)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.txt"), "w") as fh:
        fh.write(f"# config_hash={chash}\n")
        fh.write(config.to_text())

    s = config.schedule()
    train_data = load_dataset(config, 0)
    holdout = load_dataset(config, 1)
    manifest = RunManifest(config_hash=chash, code_version=code_version_hash())

    model = model_for_config(config, train_data)
    p1 = train_phase(
        model, train_data, "mse", config, s,
        log_path=os.path.join(run_dir, "train_mse.csv"),
        ckpt_path=os.path.join(run_dir, "phase1.ckpt"),
    )
    manifest.checkpoints["mse"] = os.path.join(run_dir, "phase1.ckpt")

    mse_model = p1.ema_model()
    online = mse_model.clone()
    frozen = freeze_copy(mse_model)
    p2 = train_phase(
        online, train_data, "sp", config, s, frozen=frozen,
        log_path=os.path.join(run_dir, "train_sp.csv"),
        ckpt_path=os.path.join(run_dir, "phase2.ckpt"),
    )
    manifest.checkpoints["sp"] = os.path.join(run_dir, "phase2.ckpt")
    sp_model = p2.ema_model()

    metrics_path = os.path.join(run_dir, "metrics.csv")
    results = {}
    samples_by_name = {}
    for name, m in (("mse", mse_model), ("sp", sp_model)):
        report, samples = evaluate_model(m, config, s, holdout, (config.seed, 7))
        append_report_csv(metrics_path, name, chash, report)
        results[name] = report
        samples_by_name[name] = samples
    manifest.outputs["metrics"] = metrics_path

    if emit_figs:
        fig_paths = emit_figures(run_dir, config, {"mse": mse_model, "sp": sp_model},
                                 holdout, s)
        manifest.outputs.update(fig_paths)

    manifest.wall_clock_s = time.perf_counter() - t_start
    manifest.save(os.path.join(run_dir, "manifest.json"))
    return {"run_dir": run_dir, "config_hash": chash, "reports": results,
            "samples": samples_by_name, "models": {"mse": mse_model, "sp": sp_model}}


ABLATION_AXES = {
    "tap": ["encoder_all", "decoder_all", "encoder_plus_mid", "mid_only"],
    "tprime": ["delta:40", "gauss:100", "uniform"],
    "distance": ["mae", "mse"],
    "perceptual_source": ["mse", "sp"],
    "cfg": ["1", "2", "3", "4", "7.5"],
}


def run_ablation(axis: str, values: list[str] | None, base_config: ExperimentConfig,
                 workdir: str) -> list[dict]:
    """Sweep one hyperparameter axis, sharing the MSE pretrain across rows.

    Every row reports the substitute two-sample metrics; orderings are not
    asserted anywhere, the table structure is the deliverable.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis '{axis}' (choose from {sorted(ABLATION_AXES)})")
    values = values if values is not None else ABLATION_AXES[axis]
    chash = base_config.config_hash()
    abl_dir = os.path.join(workdir, f"ablate_{axis}_{chash}")
    os.makedirs(abl_dir, exist_ok=True)

    s = base_config.schedule()
    train_data = load_dataset(base_config, 0)
    holdout = load_dataset(base_config, 1)

    # shared phase 1
    base_model = model_for_config(base_config, train_data)
    p1 = train_phase(base_model, train_data, "mse", base_config, s,
                     ckpt_path=os.path.join(abl_dir, "phase1.ckpt"))
    mse_model = p1.ema_model()

    def finetune(cfg: ExperimentConfig, frozen_src: DenoiserModel) -> DenoiserModel:
        online = frozen_src.clone()
        frozen = freeze_copy(frozen_src)
        res = train_phase(online, train_data, "sp", cfg, s, frozen=frozen)
        return res.ema_model()

    rows = []
    sp_base: DenoiserModel | None = None
    for value in values:
        if axis == "tap":
            cfg = replace(base_config, sp_tap=value)
            model = finetune(cfg, mse_model)
        elif axis == "tprime":
            cfg = replace(base_config, sp_tprime=value)
            model = finetune(cfg, mse_model)
        elif axis == "distance":
            cfg = replace(base_config, sp_distance=value)
            model = finetune(cfg, mse_model)
        elif axis == "perceptual_source":
            if sp_base is None:
                sp_base = finetune(base_config, mse_model)
            if value == "mse":
                cfg, model = base_config, sp_base
            else:
                # repeat the process with the fine-tuned model as the lens
                cfg = replace(base_config, seed=base_config.seed + 1)
                model = finetune(cfg, sp_base)
        elif axis == "cfg":
            if sp_base is None:
                sp_base = finetune(base_config, mse_model)
            scale = float(value)
            phi = 0.0 if scale in (0.0, 1.0) else 0.7
            cfg = replace(base_config, eval_cfg_scale=scale, eval_rescale_phi=phi)
            model = sp_base
        report, _ = evaluate_model(model, cfg, s, holdout, (base_config.seed, 9))
        rows.append({"axis": axis, "value": value, "report": report})

    out_path = os.path.join(abl_dir, "ablation.csv")
    with open(out_path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "energy_distance", "mmd_rbf",
                         "nearest_neighbor_recall"])
        for row in rows:
            r = row["report"]
            writer.writerow([row["axis"], row["value"], repr(r.energy_distance),
                             repr(r.mmd_rbf), repr(r.nearest_neighbor_recall)])
    return rows


# ---------------------------------------------------------------------------
# figures


def emit_figures(run_dir: str, config: ExperimentConfig, models: dict[str, DenoiserModel],
                 holdout: FiniteDataset, s: NoiseSchedule) -> dict[str, str]:
    """Scatter overlays for 2-D runs; sample grids and per-step decoded-x0
    strips for image runs. Every file carries the config hash."""
    from .datasets import write_pgm

    chash = config.config_hash()
    paths: dict[str, str] = {}
    is_image = len(holdout.sample_shape) == 3

    for name, model in models.items():
        n_show = min(256, config.eval_samples)
        labels = None if holdout.labels is None else holdout.labels[:n_show]
        show_cfg = replace(config, eval_samples=n_show)
        samples, traj = generate_for_config(model, show_cfg, s, labels, (config.seed, 21),
                                            record_first_trajectory=True)
        if is_image:
            grid_path = os.path.join(run_dir, f"samples_{name}.pgm")
            write_pgm(grid_path, _image_grid(samples[:64]), comment=f"config_hash={chash}")
            paths[f"samples_{name}"] = grid_path
            strip_path = os.path.join(run_dir, f"trajectory_{name}.pgm")
            write_pgm(strip_path, _trajectory_strip(traj), comment=f"config_hash={chash}")
            paths[f"trajectory_{name}"] = strip_path
        else:
            png_path = os.path.join(run_dir, f"scatter_{name}.png")
            _scatter_png(png_path, holdout.points[:512], samples, name, chash)
            paths[f"scatter_{name}"] = png_path
            csv_path = os.path.join(run_dir, f"trajectory_{name}.csv")
            _trajectory_csv(csv_path, traj, chash)
            paths[f"trajectory_{name}"] = csv_path
    return paths


def _image_grid(samples: np.ndarray, cols: int = 8) -> np.ndarray:
    from .datasets import to_pixels

    n = samples.shape[0]
    rows = (n + cols - 1) // cols
    h, w = samples.shape[-2:]
    grid = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = to_pixels(samples[i])
    return grid


def _trajectory_strip(traj) -> np.ndarray:
    """Decoded-x0 of the first sample at t = 1000, 900, ..., 100, then the
    final output, as one horizontal strip."""
    from .datasets import to_pixels

    targets = list(range(1000, 0, -100))
    panels = []
    recorded = [(rec.t, rec.x0_hat[0]) for rec in traj.steps]
    for target in targets:
        t_sel, x0 = min(recorded, key=lambda item: abs(item[0] - target))
        panels.append(to_pixels(x0))
    panels.append(to_pixels(traj.final[0]))
    return np.concatenate(panels, axis=1)


def _trajectory_csv(path: str, traj, chash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        writer = csv.writer(fh)
        dim = traj.steps[0].x0_hat.shape[-1] if traj.steps else 0
        writer.writerow(["step", "t"] + [f"x0_hat_{i}" for i in range(dim)])
        for i, rec in enumerate(traj.steps):
            writer.writerow([i, rec.t] + [repr(float(v)) for v in rec.x0_hat[0].reshape(-1)])


def _scatter_png(path: str, data: np.ndarray, samples: np.ndarray, name: str,
                 chash: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(data[:, 0], data[:, 1], s=6, alpha=0.4, label="data")
    ax.scatter(samples[:, 0], samples[:, 1], s=6, alpha=0.4, label=name)
    ax.legend()
    ax.set_title(f"{name} ({chash})")
    ax.set_aspect("equal")
    fig.savefig(path, dpi=100, metadata={"Description": f"config_hash={chash}"})
    plt.close(fig)
