"""Command-line entry point.

Subcommands: train, sample, ablate, oracle-check, metrics, dump-schedule.
Exit codes: 0 success, 1 configuration error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (
    ABLATION_AXES,
    ExperimentConfig,
    evaluate_model,
    load_dataset,
    load_train_state,
    run_ablation,
    run_experiment,
)
from .models import Conditioning
from .sampler import SamplerConfig, sample
from .schedule import build_zero_snr_schedule, dump_schedule_csv


def _load_eval_model(ckpt: str, weights: str):
    model, ema, _, meta = load_train_state(ckpt)
    if weights == "ema":
        model.load_state(ema)
    return model, meta


def _cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    result = run_experiment(config, args.workdir, emit_figs=not args.no_figures)
    print(f"run dir: {result['run_dir']}")
    for name, report in result["reports"].items():
        print(f"{name}: energy_distance={report.energy_distance:.6f} "
              f"mmd_rbf={report.mmd_rbf:.6f} recall={report.nearest_neighbor_recall:.4f}")
    return 0


def _cmd_sample(args) -> int:
    model, meta = _load_eval_model(args.ckpt, args.weights)
    s = build_zero_snr_schedule(model.T, args.beta_start, args.beta_end)
    if args.class_id is None or args.class_id < 0:
        c = Conditioning.null(args.n)
    else:
        c = Conditioning.of(np.full(args.n, args.class_id))
    cfg = SamplerConfig(steps=args.steps, cfg_scale=args.cfg_scale,
                        rescale_phi=args.rescale_phi, record_trajectory=False)
    traj = sample(model, c, cfg, s, np.random.default_rng(args.seed))
    os.makedirs(args.outdir, exist_ok=True)
    out = os.path.join(args.outdir, "samples.npy")
    np.save(out, traj.final)
    print(f"wrote {traj.final.shape} samples to {out} (nfe={traj.nfe})")
    if traj.final.ndim == 4:
        from .datasets import write_pgm
        from .harness import _image_grid

        grid_path = os.path.join(args.outdir, "samples.pgm")
        write_pgm(grid_path, _image_grid(traj.final[:64]),
                  comment=f"ckpt={os.path.basename(args.ckpt)}")
        print(f"wrote {grid_path}")
    return 0


def _cmd_ablate(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    values = args.values.split(",") if args.values else None
    rows = run_ablation(args.axis, values, config, args.workdir)
    for row in rows:
        r = row["report"]
        print(f"{row['axis']}={row['value']}: energy_distance={r.energy_distance:.6f} "
              f"mmd_rbf={r.mmd_rbf:.6f} recall={r.nearest_neighbor_recall:.4f}")
    return 0


def _cmd_metrics(args) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    model, meta = _load_eval_model(args.ckpt, args.weights)
    s = config.schedule()
    holdout = load_dataset(config, 1)
    report, _ = evaluate_model(model, config, s, holdout, (config.seed, 7))
    print(f"energy_distance={report.energy_distance:.6f}")
    print(f"mmd_rbf={report.mmd_rbf:.6f}")
    print(f"nearest_neighbor_recall={report.nearest_neighbor_recall:.4f}")
    if args.out:
        from .metrics import append_report_csv

        append_report_csv(args.out, meta.get("phase", "model"),
                          meta.get("config_hash", ""), report)
    return 0


def _cmd_dump_schedule(args) -> int:
    s = build_zero_snr_schedule(args.T, args.beta_start, args.beta_end)
    dump_schedule_csv(s, args.out)
    print(f"wrote {args.out} ({s.T} rows, terminal alpha_bar={s.alpha_bar[-1]})")
    return 0


def _cmd_oracle_check(args) -> int:
    """Quick self-verification battery; prints one PASS/FAIL line per check."""
    from .oracle_checks import run_oracle_checks

    results = run_oracle_checks(full=args.full, outdir=args.outdir)
    failed = 0
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="difflab",
                                     description="desk-scale diffusion laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the two-phase experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", default="runs")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="draw samples from a training checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--weights", choices=("ema", "online"), default="ema")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--steps", type=int, default=25)
    p.add_argument("--cfg-scale", type=float, default=1.0)
    p.add_argument("--rescale-phi", type=float, default=0.0)
    p.add_argument("--class-id", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta-start", type=float, default=0.00085)
    p.add_argument("--beta-end", type=float, default=0.012)
    p.add_argument("--outdir", default="samples_out")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("ablate", help="sweep one hyperparameter axis")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--values", default=None, help="comma-separated override")
    p.add_argument("--workdir", default="runs")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("oracle-check", help="run the analytic self-checks")
    p.add_argument("--full", action="store_true",
                   help="include the trained-model-vs-posterior check (minutes)")
    p.add_argument("--outdir", default=None, help="where to write demo artifacts")
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("metrics", help="score a checkpoint against held-out data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--weights", choices=("ema", "online"), default="ema")
    p.add_argument("--out", default=None, help="append a CSV row here")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("dump-schedule", help="write the schedule table as CSV")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=0.00085)
    p.add_argument("--beta-end", type=float, default=0.012)
    p.add_argument("--out", default="schedule.csv")
    p.set_defaults(func=_cmd_dump_schedule)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
