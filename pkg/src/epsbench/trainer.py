"""Patch-based training loop with convergence-triggered learning-rate decay.

The schedule follows the benchmark protocol: ADAM (0.9 / 0.999 / 1e-8) from
lr 1e-3, one decay by 10x when the training loss converges, termination on
the second convergence or the step budget. Convergence means the moving
average of the normalized loss over `convergence_window` steps improved by
less than `convergence_threshold` relative to its value
`convergence_lookback` steps earlier; if it never fires, the decay is forced
at `decay_deadline_fraction * max_steps` so every run decays exactly once.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import AdamState, Tensor, adam_step
from .dataset import Dataset, sample_patches
from .losses import NeighborhoodSpec, batch_loss
from .metrics import pooled_errors
from .models import Model, ModelSpec, build_model, forward, resnet_spec, vdcnn_spec


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: ModelSpec = field(default_factory=vdcnn_spec)
    patch_size: int = 41
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 10.0
    convergence_window: int = 1000
    convergence_lookback: int = 2000
    convergence_threshold: float = 0.005
    decay_deadline_fraction: float = 0.5
    max_steps: int = 100_000
    seed: int = 0
    init_seed: int = 0
    loss: str = "l1+nb"  # l2 | l1 | l1+nb
    lambda_nb: float = 1.0
    nb_extent: int = 5
    grad_clip: float = 0.0  # 0 disables clipping
    log_interval: int = 100
    val_interval: int = 0  # 0 disables validation logging
    log_wall_clock: bool = False  # off keeps the log byte-reproducible

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


def vdcnn_paper_config(**overrides) -> TrainConfig:
    """The full-scale VDCNN protocol (41x41 patches, batch 64)."""
    return TrainConfig(model=vdcnn_spec(), patch_size=41, batch_size=64, **overrides)


def resnet_paper_config(**overrides) -> TrainConfig:
    """The full-scale ResNet protocol (96x96 patches, batch 16)."""
    return TrainConfig(model=resnet_spec(), patch_size=96, batch_size=16, **overrides)


def resnet_mini_config(**overrides) -> TrainConfig:
    """Desk-scale ResNet: 4 blocks, width 16; overfits the 4-image fixture
    to WMAE < 2 within 5000 steps on a laptop CPU."""
    defaults = dict(
        model=resnet_spec(blocks=4, width=16, global_residual=True),
        patch_size=24, batch_size=6, loss="l1", max_steps=5000,
        convergence_window=200, convergence_lookback=400,
        decay_deadline_fraction=0.6, log_interval=50)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def vdcnn_mini_config(**overrides) -> TrainConfig:
    defaults = dict(
        model=vdcnn_spec(depth=4, width=16, global_residual=True),
        patch_size=24, batch_size=8, loss="l1", max_steps=5000,
        convergence_window=200, convergence_lookback=400,
        decay_deadline_fraction=0.6, log_interval=50)
    defaults.update(overrides)
    return TrainConfig(**defaults)


# ---------------------------------------------------------------------------
# Training log


@dataclass
class TrainLog:
    """Interval records plus schedule events, serializable as JSONL."""

    records: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def add_record(self, **kv) -> None:
        if self.records and kv["step"] <= self.records[-1]["step"]:
            raise TrainingError("log steps must be strictly increasing")
        self.records.append(kv)

    def add_event(self, **kv) -> None:
        self.events.append(kv)

    def decay_events(self) -> list[dict]:
        return [e for e in self.events if e["event"] == "lr_decay"]

    def lr_sequence(self) -> list[float]:
        seq = []
        for r in self.records:
            if not seq or seq[-1] != r["lr"]:
                seq.append(r["lr"])
        return seq

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "record", **r}, sort_keys=True)
                 for r in self.records]
        lines += [json.dumps({"kind": "event", **e}, sort_keys=True)
                  for e in self.events]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.strip().split("\n"):
            d = json.loads(line)
            kind = d.pop("kind")
            (log.records if kind == "record" else log.events).append(d)
        return log


@dataclass
class TrainResult:
    model: Model
    optimizer: AdamState
    log: TrainLog
    steps: int
    aborted: bool = False
    abort_reason: str = ""


# ---------------------------------------------------------------------------


def _moving_average(history: list[float], width: int, end_offset: int = 0) -> float:
    stop = len(history) - end_offset
    return float(np.mean(history[stop - width:stop]))


def train(dataset: Dataset, config: TrainConfig,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run the sample -> forward -> loss -> backward -> ADAM loop.

    Deterministic for a fixed config and dataset: sampling uses one seeded
    generator and reduction order is fixed. On a non-finite loss the run
    aborts, returning the parameters from the last logged interval.
    """
    if not dataset.split_ids("train"):
        raise TrainingError("training split is empty")
    if config.loss not in ("l2", "l1", "l1+nb"):
        raise TrainingError(f"unknown loss {config.loss!r}")
    rng = np.random.default_rng(config.seed)
    model = build_model(config.model, seed=config.init_seed)
    if config.patch_size < model.receptive_field():
        raise TrainingError(
            f"patch size {config.patch_size} is smaller than the model's "
            f"receptive field {model.receptive_field()}")
    params = model.parameters()
    adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                     eps=config.eps)
    nb = NeighborhoodSpec(extent=config.nb_extent)
    log = TrainLog()
    log.add_event(step=0, event="start", config=config.to_dict(),
                  convergence_rule=(
                      f"ma({config.convergence_window}) improved < "
                      f"{config.convergence_threshold:.3%} vs "
                      f"{config.convergence_lookback} steps earlier"))

    phase = 1
    deadline = max(1, int(config.max_steps * config.decay_deadline_fraction))
    history: list[float] = []
    keep = config.convergence_window + config.convergence_lookback
    snapshot = [p.data.copy() for p in params]
    n_pixels = config.batch_size * config.patch_size ** 2
    t0 = time.monotonic()
    step = 0

    def converged() -> bool:
        if len(history) < keep:
            return False
        now = _moving_average(history, config.convergence_window)
        then = _moving_average(history, config.convergence_window,
                               end_offset=config.convergence_lookback)
        if then <= 0:
            return True
        return (then - now) / then < config.convergence_threshold

    while step < config.max_steps:
        step += 1
        batch = sample_patches(dataset, config.patch_size, config.batch_size, rng)
        model.zero_grad()
        out = model.forward_tensor(Tensor(batch.x), training=True)
        loss = batch_loss(out, batch.targets, batch.weights, kind=config.loss,
                          nb=nb, lambda_nb=config.lambda_nb, normalize=True)
        loss_norm = loss.item()
        if not np.isfinite(loss_norm):
            for p, saved in zip(params, snapshot):
                p.data = saved
            log.add_event(step=step, event="abort", reason="non-finite loss")
            return TrainResult(model=model, optimizer=adam, log=log, steps=step,
                               aborted=True, abort_reason=f"non-finite loss at step {step}")
        loss.backward()
        grads = [p.grad for p in params]
        if config.grad_clip > 0:
            total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
            if total > config.grad_clip:
                scale = config.grad_clip / total
                grads = [g * scale for g in grads]
        adam_step(params, grads, adam)
        history.append(loss_norm)
        if len(history) > keep:
            del history[:len(history) - keep]

        if step % config.log_interval == 0 or step == config.max_steps:
            rec = {"step": step, "loss_norm": loss_norm,
                   "loss_raw": loss_norm * n_pixels, "lr": adam.lr}
            if config.val_interval and step % config.val_interval == 0 \
                    and dataset.split_ids("test"):
                vr, va = evaluate_split(model, dataset, "test")
                rec["wrmse_val"] = vr
                rec["wmae_val"] = va
            if config.log_wall_clock:
                rec["wall_clock"] = round(time.monotonic() - t0, 3)
            log.add_record(**rec)
            if progress:
                progress(rec)
            snapshot = [p.data.copy() for p in params]

            if phase == 1:
                reason = None
                if converged():
                    reason = "converged"
                elif step >= deadline:
                    reason = "deadline"
                if reason:
                    log.add_event(step=step, event="lr_decay", lr_from=adam.lr,
                                  lr_to=adam.lr / config.decay_factor, reason=reason)
                    adam.lr /= config.decay_factor
                    phase = 2
                    history.clear()
            elif converged():
                log.add_event(step=step, event="stop", reason="second convergence")
                break
    else:
        log.add_event(step=step, event="stop", reason="max steps")

    return TrainResult(model=model, optimizer=adam, log=log, steps=step)


def evaluate_split(model, dataset: Dataset, split: str,
                   mode: str = "entry") -> tuple[float, float]:
    """Full-image inference over a split, pooled WRMSE/WMAE on 0-255 scale.

    model may be a Model instance or a checkpoint path.
    """
    if not isinstance(model, Model):
        from .models import load_checkpoint
        model = load_checkpoint(model)
    ids = dataset.split_ids(split)
    if not ids:
        raise TrainingError(f"split {split!r} is empty")
    outputs = {t: forward(model, dataset.source(t)) for t in ids}
    sets = {t: dataset.groundtruth_set(t) for t in ids}
    return pooled_errors(outputs, sets, mode=mode)


# ---------------------------------------------------------------------------
# Run-time measurement


@dataclass
class TimingResult:
    name: str
    mean_seconds: float
    per_image: list[float]

    def row(self) -> str:
        from .reports import format_timing_row
        return format_timing_row(self.name, self.mean_seconds)


def timeit(smoother: Callable[[np.ndarray], np.ndarray], images: list[np.ndarray],
           name: str = "smoother", warmup: int = 2) -> TimingResult:
    """Mean wall-clock seconds per image, with warm-up runs excluded."""
    if images:
        for img in images[:warmup]:
            smoother(img)
    times = []
    for img in images:
        start = time.perf_counter()
        smoother(img)
        times.append(time.perf_counter() - start)
    mean = float(np.mean(times)) if times else 0.0
    return TimingResult(name=name, mean_seconds=mean, per_image=times)
