"""Online training of the marginaliser on masked ancestral samples."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .masking import MaskingScheme, apply_mask, make_scheme
from .model import AdamState, ForwardMode, UmModel, adam_step, init_model, load_model, loss, save_model
from .network import NoisyOrNetwork

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    scheme: str = "sizewise"
    samples_per_epoch: int = 2_000_000
    epochs: int = 1
    # at lr 1e-4, smaller batches leave the final iterate visibly noisy at a 2e6-sample budget
    batch_size: int = 2048
    lr: float = 1e-4
    data_seed: int = 0
    init_seed: int = 1
    checkpoint_every: int = 0
    scheme_options: dict = field(default_factory=dict)
    hidden_width: int = 512
    n_hidden: int = 3

    def validate(self) -> None:
        if self.samples_per_epoch < 1 or self.batch_size < 2 or self.epochs < 0:
            raise TrainingError("samples_per_epoch >= 1, batch_size >= 2 and epochs >= 0 required")
        if self.samples_per_epoch % self.batch_size == 1:
            raise TrainingError("the last batch of an epoch would hold a single sample")
        if self.lr <= 0:
            raise TrainingError("learning rate must be positive")

    def batch_sizes(self) -> list[int]:
        full, rest = divmod(self.samples_per_epoch, self.batch_size)
        return [self.batch_size] * full + ([rest] if rest else [])


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    median_loss: float
    samples: int
    wall_clock: float
    p_values: dict | None = None


@dataclass
class TrainingMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def samples_consumed(self) -> int:
        return sum(r.samples for r in self.epochs)

    def to_records(self) -> list[dict]:
        return [asdict(r) for r in self.epochs]


def generate_training_batch(
    net: NoisyOrNetwork, scheme: MaskingScheme, batch_size: int, rng: np.random.Generator
):
    """Return ``(inputs, targets, p)``; targets are the full unmasked samples.

    The batch-level observation probability (if the scheme uses one) is drawn
    before any sample.
    """
    p = scheme.batch_probability(rng)
    x = net.sample(batch_size, rng)
    masks = scheme.sample(net.n, batch_size, p, rng)
    return apply_mask(x, masks), x, p


def _p_summary(values: list[float]) -> dict | None:
    if not values:
        return None
    arr = np.asarray(values)
    return {"count": len(values), "min": float(arr.min()), "max": float(arr.max()), "mean": float(arr.mean())}


def train(
    net: NoisyOrNetwork,
    config: TrainingConfig,
    checkpoint_dir=None,
    metrics_path=None,
    resume_from=None,
    final_checkpoint=None,
):
    """Run the optimisation loop; returns ``(model, metrics, adam_state)``.

    Everything random flows from ``config.data_seed`` (samples, masks, batch
    probabilities) and ``config.init_seed`` (weights). Checkpoints written
    every ``config.checkpoint_every`` epochs carry the generator and scheme
    state, so resuming from one reproduces the uninterrupted run exactly.
    ``final_checkpoint`` names a file for the same kind of checkpoint after
    the last epoch.
    """
    config.validate()
    scheme = make_scheme(config.scheme, net, **config.scheme_options)
    rng = np.random.default_rng(config.data_seed)
    metrics = TrainingMetrics()
    start_epoch = 0

    if resume_from is not None:
        model, adam, meta = load_model(resume_from)
        if adam is None or "trainer" not in meta:
            raise TrainingError(f"{resume_from} is not a resumable training checkpoint")
        state = meta["trainer"]
        rng.bit_generator.state = state["rng"]
        scheme.set_state(state["scheme"])
        start_epoch = state["epoch"]
        metrics.epochs = [EpochRecord(**r) for r in state["metrics"]]
    else:
        model = init_model(net.layer_sizes, config.init_seed, config.hidden_width, config.n_hidden)
        adam = AdamState.for_model(model, lr=config.lr)
    if list(model.layer_sizes) != list(net.layer_sizes):
        raise TrainingError("model shape does not match the network")

    if metrics_path is not None and resume_from is None:
        Path(metrics_path).write_text("")

    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        losses, p_values = [], []
        for size in config.batch_sizes():
            inputs, targets, p = generate_training_batch(net, scheme, size, rng)
            if p is not None:
                p_values.append(p)
            q, cache = model.forward(inputs, ForwardMode.TRAIN)
            value = loss(q, targets)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, batch {len(losses)} (p={p})"
                )
            losses.append(value)
            grads = model.backward(cache, targets)
            adam_step(model, grads, adam)
        record = EpochRecord(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            median_loss=float(np.median(losses)),
            samples=config.samples_per_epoch,
            wall_clock=time.perf_counter() - t0,
            p_values=_p_summary(p_values),
        )
        metrics.epochs.append(record)
        log.info("%s epoch %d: mean loss %.5f (%.1fs)", config.scheme, epoch, record.mean_loss, record.wall_clock)
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
        if checkpoint_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_training_checkpoint(
                Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.npz",
                model, adam, config, epoch + 1, rng, scheme, metrics,
            )
    if final_checkpoint is not None:
        save_training_checkpoint(final_checkpoint, model, adam, config, config.epochs, rng, scheme, metrics)
    return model, metrics, adam


def save_training_checkpoint(path, model: UmModel, adam: AdamState, config: TrainingConfig,
                             epoch: int, rng: np.random.Generator, scheme: MaskingScheme,
                             metrics: TrainingMetrics | None = None) -> None:
    """Checkpoint with everything needed to resume; wall-clock times are left out
    so identical runs write identical bytes."""
    records = []
    for r in (metrics.to_records() if metrics else []):
        records.append({**r, "wall_clock": 0.0})
    meta = {
        "config": asdict(config),
        "trainer": {
            "epoch": epoch,
            "rng": rng.bit_generator.state,
            "scheme": scheme.get_state(),
            "metrics": records,
        },
    }
    save_model(path, model, adam, meta)
