"""Training loop: iterate -> flow_elbo -> backward -> Adam, with CSV logging and checkpoints."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import gradcore as gc
from .config import RunConfig
from .data import MnistSet, iterate, load_mnist
from .elbo import flow_elbo
from .nets import VaeModel
from .optim import Adam

log = logging.getLogger(__name__)

LOG_HEADER = "iter,recon,kl,flow_correction,total"
LOG_NAME = "train_log.csv"
CKPT_NAME = "checkpoint.bin"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: VaeModel
    optimizer: Adam
    iteration: int
    log_path: Path
    checkpoint_path: Path


def noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2]))


def model_from_checkpoint(ck: ckpt_io.Checkpoint) -> tuple[RunConfig, VaeModel]:
    config = RunConfig.from_text(ck.config_text)
    model = VaeModel(config.model, seed=config.seed)
    named = model.named_parameters()
    if set(named) != set(ck.params):
        raise ckpt_io.CheckpointError("checkpoint parameters do not match the configured model")
    for name, p in named.items():
        if ck.params[name].shape != p.value.shape:
            raise ckpt_io.CheckpointError(f"shape mismatch for {name}")
        p.value = ck.params[name].copy()
    return config, model


def _format_row(it: int, vals) -> str:
    return f"{it}," + ",".join(f"{v:.17g}" for v in vals) + "\n"


def _truncate_log(path: Path, keep_through: int) -> None:
    lines = path.read_text().splitlines(keepends=True)
    kept = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= keep_through]
    path.write_text("".join(kept))


def train(config: RunConfig, resume: str | Path | None = None, dataset: MnistSet | None = None) -> TrainResult:
    """Train a flow VAE.  Deterministic in (config, dataset bytes).

    With ``resume``, parameters, optimizer moments, the noise generator and
    the partially accumulated log window are restored from the checkpoint,
    and the log is continued from that iteration.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path, ckpt_path = out / LOG_NAME, out / CKPT_NAME
    if dataset is None:
        dataset = load_mnist(config.train_images, config.train_labels, "train")
    if dataset.images.shape[1] != config.input_dim:
        raise ValueError(f"dataset has {dataset.images.shape[1]} pixels, config.input_dim is {config.input_dim}")

    rng = noise_rng(config.seed)
    window = np.zeros(4)
    window_count = 0
    start = 0
    if resume is not None:
        ck = ckpt_io.load(resume)
        saved, model = model_from_checkpoint(ck)
        if saved.replace(iterations=config.iterations, out_dir=config.out_dir,
                         checkpoint_every=config.checkpoint_every) != config:
            raise ValueError("resume config differs from the checkpoint beyond iterations/out_dir/checkpoint_every")
        optimizer = Adam.from_state_tensors(ck.state)
        rng.bit_generator.state = ck.rng_state
        window = ck.state["train.window_sum"].copy()
        window_count = int(ck.state["train.window_count"])
        start = ck.iteration
        if log_path.exists():
            _truncate_log(log_path, start - window_count)
        else:
            log_path.write_text(LOG_HEADER + "\n")
    else:
        model = VaeModel(config.model, seed=config.seed)
        optimizer = Adam(config.lr, clip_norm=config.clip_norm)
        log_path.write_text(LOG_HEADER + "\n")

    params = model.named_parameters()
    plist = list(params.values())
    stream = iterate(dataset, config.batch_size, config.seed, config.subset, start=start)

    def snapshot(iteration: int) -> ckpt_io.Checkpoint:
        state = optimizer.state_tensors()
        state["train.window_sum"] = window.copy()
        state["train.window_count"] = np.array(float(window_count))
        return ckpt_io.Checkpoint(
            config.to_text(),
            {name: p.value for name, p in params.items()},
            state,
            iteration,
            rng.bit_generator.state,
        )

    with open(log_path, "a") as fh:
        for it in range(start, config.iterations):
            images, _ = next(stream)
            eps = rng.standard_normal((images.shape[0], config.latent_dim))
            try:
                parts = [flow_elbo(model, x, e, config.prior_at) for x, e in zip(images, eps)]
                loss = _mean([p.total for p in parts])
                grads = gc.backward(loss, plist)
                optimizer.step(params, {p.name: grads[p] for p in plist})
            except (gc.NonFiniteError, gc.DomainError) as exc:
                raise TrainingDiverged(f"iteration {it + 1}: {exc}") from exc
            window += np.mean([p.values() for p in parts], axis=0)
            window_count += 1
            done = it + 1
            if done % config.log_interval == 0:
                fh.write(_format_row(done, window / window_count))
                fh.flush()
                window[:] = 0.0
                window_count = 0
            if config.checkpoint_every and done % config.checkpoint_every == 0:
                ckpt_io.save(ckpt_path, snapshot(done))
                log.info("iteration %d: checkpoint written", done)
        final_state = snapshot(config.iterations)
        if window_count:
            fh.write(_format_row(config.iterations, window / window_count))
    ckpt_io.save(ckpt_path, final_state)
    return TrainResult(model, optimizer, config.iterations, log_path, ckpt_path)


def _mean(nodes: list[gc.Node]) -> gc.Node:
    if len(nodes) == 1:
        return nodes[0]
    total = nodes[0]
    for n in nodes[1:]:
        total = total + n
    return total / float(len(nodes))


def read_log(path) -> np.ndarray:
    """Training log as an array with columns iter, recon, kl, flow_correction, total."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def smoothed_totals(path, fraction: float = 0.25) -> tuple[float, float]:
    """Mean logged total over the first and last ``fraction`` of log rows."""
    rows = read_log(path)
    k = max(1, int(round(fraction * rows.shape[0])))
    return float(rows[:k, 4].mean()), float(rows[-k:, 4].mean())
