"""Command-line entry point: ``pfvae {train,latents,density,gradcheck,compare,prepare-mnist}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import gradcore as gc
from .analysis import (
    compute_latents,
    high_density_regions,
    kde_grid,
    multimodality_score,
    pgm_bytes,
    read_latents,
    write_class_means,
    write_density,
    write_latents,
)
from .config import PROFILES, RunConfig, load_config, parse_value
from .data import load_mnist, write_bundled_subset
from .elbo import flow_elbo
from .nets import ModelConfig, VaeModel
from .train import TrainingDiverged, model_from_checkpoint, smoothed_totals, train

log = logging.getLogger("pfvae")

REPORT_HEADER = ["run", "flow_length", "iterations", "initial_smoothed_total",
                 "final_smoothed_total", "multimodality_score", "high_density_regions"]
GRADCHECK_TOL = 1e-4


# ------------------------------------------------------------------ commands


def cmd_train(config: RunConfig, resume=None):
    return train(config, resume=resume)


def _dataset_for(config: RunConfig, split: str):
    if split == "train":
        return load_mnist(config.train_images, config.train_labels, "train")
    return load_mnist(config.test_images, config.test_labels, "test")


def cmd_latents(checkpoint_path, out_dir, split: str = "train", n_per_class: int = 200, seed: int = 0,
                dataset=None) -> Path:
    """Write ``latents.csv`` and ``latent_means.csv`` for a trained checkpoint."""
    config, model = model_from_checkpoint(ckpt_io.load(checkpoint_path))
    if dataset is None:
        dataset = _dataset_for(config, split)
    table = compute_latents(model, dataset, n_per_class, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_latents(out / "latents.csv", table)
    write_class_means(out / "latent_means.csv", table)
    return out / "latents.csv"


def cmd_density(latents_csv, out_dir, bounds=None, resolution: int = 100, pgm: bool = False):
    table = read_latents(latents_csv)
    if table.zK.shape[1] != 2:
        raise ValueError(f"density grids need latent_dim == 2, got {table.zK.shape[1]}")
    grid = kde_grid(table.zK, bounds, resolution)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_density(out / "density.csv", grid)
    if pgm:
        (out / "density.pgm").write_bytes(pgm_bytes(grid))
    return grid


def _param_group(name: str) -> str:
    head = name.split(".", 1)[0]
    return "heads" if head in ("mu_head", "logvar_head") else head


def gradcheck_errors(model_config: ModelConfig, seed: int = 0, step: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per parameter group of the full flow-VAE loss.

    Flow parameters are moved to a generic random point first so the check is
    not run at the near-identity initialization.
    """
    rng = np.random.default_rng(seed)
    model = VaeModel(model_config, seed=seed)
    for p in model.flows.parameters():
        p.value = rng.normal(0.0, 1.0, size=p.value.shape)
    x = rng.uniform(0.0, 1.0, size=model_config.input_dim)
    eps = rng.standard_normal(model_config.latent_dim)
    params = model.parameters()
    errors = gc.finite_diff_errors(lambda: flow_elbo(model, x, eps).total, params, step)
    groups: dict[str, float] = {}
    for name, err in errors.items():
        g = _param_group(name)
        groups[g] = max(groups.get(g, 0.0), err)
    return groups


def cmd_gradcheck(input_dim=16, hidden_dims=(8, 8), latent_dim=2, flow_lengths=(0, 2, 4), seed=0,
                  corrupt: str | None = None, out=sys.stdout) -> int:
    ok = True
    for k in flow_lengths:
        mc = ModelConfig(input_dim, tuple(hidden_dims), latent_dim, k)
        if corrupt:
            with gc.corrupt_rule(corrupt):
                groups = gradcheck_errors(mc, seed)
        else:
            groups = gradcheck_errors(mc, seed)
        for g, err in groups.items():
            passed = err < GRADCHECK_TOL
            ok &= passed
            print(f"K={k} {g:8s} max_rel_err={err:.3e} {'PASS' if passed else 'FAIL'}", file=out)
    return 0 if ok else 1


def cmd_compare(config: RunConfig, dataset=None) -> Path:
    """Train flow and vanilla twins with identical seeds and data; score both latent clouds."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = _dataset_for(config, "train")
    rows = []
    for run, k in (("flow", config.flow_length), ("vanilla", 0)):
        cfg = config.replace(flow_length=k, out_dir=str(out / run))
        log.info("training %s run (K=%d, %d iterations)", run, k, cfg.iterations)
        result = train(cfg, dataset=dataset)
        latents = cmd_latents(result.checkpoint_path, cfg.out_dir, "train", cfg.n_per_class, cfg.seed,
                              dataset=dataset)
        zK = read_latents(latents).zK
        score = multimodality_score(zK, seed=cfg.seed)
        regions = high_density_regions(kde_grid(zK)) if zK.shape[1] == 2 else -1
        first, last = smoothed_totals(result.log_path)
        rows.append([run, k, cfg.iterations, f"{first:.17g}", f"{last:.17g}", f"{score:.17g}", regions])
    report = out / "report.csv"
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(rows)
    return report


# ----------------------------------------------------------------- argparse


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--profile", choices=sorted(PROFILES))


def _add_run_fields(p: argparse.ArgumentParser):
    for f in fields(RunConfig):
        if f.name in ("seed", "out_dir"):
            continue
        p.add_argument(f"--{f.name}", type=lambda s, k=f.name: parse_value(k, s), default=None)


def _config_from(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return load_config(args.config, args.profile, overrides)


def _bounds(s: str):
    vals = [float(v) for v in s.split(",")]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("bounds are x0,x1,y0,y1")
    return tuple(vals)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfvae", description="Planar-flow VAE on MNIST")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a flow VAE")
    _add_common(p)
    _add_run_fields(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("latents", help="export z0/zK latents from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--n_per_class", type=int, default=200)

    p = sub.add_parser("density", help="KDE grid of the aggregate zK density")
    _add_common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--latents", help="latents.csv produced by the latents command")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--n_per_class", type=int, default=200)
    p.add_argument("--bounds", type=_bounds, help="x0,x1,y0,y1 (default: padded sample range)")
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--pgm", action="store_true", help="also write density.pgm")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss gradient")
    _add_common(p)
    p.add_argument("--input_dim", type=int, default=16)
    p.add_argument("--hidden_dims", type=lambda s: parse_value("hidden_dims", s), default=(8, 8))
    p.add_argument("--latent_dim", type=int, default=2)
    p.add_argument("--flow_length", type=int, action="append", help="repeatable; default 0, 2, 4")
    p.add_argument("--corrupt-rule", dest="corrupt_rule", help=argparse.SUPPRESS)

    p = sub.add_parser("compare", help="flow vs vanilla twin runs with multimodality scores")
    _add_common(p)
    _add_run_fields(p)

    p = sub.add_parser("prepare-mnist", help="write the 5,000-image MNIST sample bundled with mlxtend as IDX")
    p.add_argument("--out", dest="out_dir", default="data")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "train":
            if args.resume:
                saved = RunConfig.from_text(ckpt_io.load(args.resume).config_text)
                keep = {k: v for k, v in vars(args).items()
                        if k in ("iterations", "out_dir", "checkpoint_every") and v is not None}
                config = saved.replace(**keep)
            else:
                config = _config_from(args)
            result = cmd_train(config, args.resume)
            print(f"wrote {result.log_path} and {result.checkpoint_path}")
        elif args.command == "latents":
            out = cmd_latents(args.checkpoint, args.out_dir or ".", args.split, args.n_per_class,
                              args.seed or 0)
            print(f"wrote {out}")
        elif args.command == "density":
            out_dir = args.out_dir or "."
            latents = args.latents
            if latents is None:
                latents = cmd_latents(args.checkpoint, out_dir, args.split, args.n_per_class, args.seed or 0)
            grid = cmd_density(latents, out_dir, args.bounds, args.resolution, args.pgm)
            print(f"grid mass {grid.mass():.4f}, high-density regions {high_density_regions(grid)}")
        elif args.command == "gradcheck":
            lengths = tuple(args.flow_length) if args.flow_length else (0, 2, 4)
            return cmd_gradcheck(args.input_dim, args.hidden_dims, args.latent_dim, lengths,
                                 args.seed or 0, args.corrupt_rule)
        elif args.command == "compare":
            report = cmd_compare(_config_from(args))
            print(report.read_text(), end="")
        elif args.command == "prepare-mnist":
            paths = write_bundled_subset(args.out_dir)
            print("wrote " + " ".join(map(str, paths)))
    except TrainingDiverged as exc:
        log.error("training aborted: %s (last periodic checkpoint kept)", exc)
        return 2
    except (ValueError, OSError, ckpt_io.CheckpointError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
