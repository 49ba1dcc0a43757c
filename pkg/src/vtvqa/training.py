"""Teacher-forced training with deterministic batching and CSV loss logging."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch

from .entities import VideoSample
from .errors import ConfigError, NumericError
from .model import VideoTextQAModel
from .preparation import prepare_batch


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 0.05
    optimizer: str = "sgd"  # or "adam"
    momentum: float = 0.0
    grad_clip: float = 0.0  # 0 disables clipping
    seed: int = 0
    threads: int = 1
    log_wall: bool = True  # False writes wall_ms as 0 for byte-stable logs

    def validate(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")


def set_determinism(seed: int, threads: int = 1) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(max(1, threads))


def build_optimizer(model: VideoTextQAModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)


def train_step(
    model: VideoTextQAModel,
    samples: Sequence[VideoSample],
    optimizer: torch.optim.Optimizer,
    grad_clip: float = 0.0,
) -> float:
    """One optimizer update on a batch; returns the pre-update loss."""
    if not samples:
        raise ConfigError("empty training batch")
    cfg = model.config
    pb = prepare_batch(
        samples, model.vocab, cfg.M, cfg.N, cfg.max_answer_len, with_targets=True
    )
    model.train()
    loss = model.loss_on_batch(pb)
    if not torch.isfinite(loss):
        raise NumericError(
            f"non-finite loss on batch starting with sample {samples[0].video_id!r}"
        )
    optimizer.zero_grad()
    loss.backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


def _epoch_batches(
    samples: Sequence[VideoSample], batch_size: int, rng: random.Random
) -> list[list[int]]:
    by_frames: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_frames.setdefault(s.num_frames, []).append(i)
    batches: list[list[int]] = []
    for key in sorted(by_frames):
        group = by_frames[key][:]
        rng.shuffle(group)
        batches.extend(group[i : i + batch_size] for i in range(0, len(group), batch_size))
    rng.shuffle(batches)
    return batches


def train(
    model: VideoTextQAModel,
    samples: Sequence[VideoSample],
    cfg: TrainConfig,
    csv_path: Optional[str | Path] = None,
) -> list[tuple[int, float, float]]:
    """Run cfg.steps optimizer updates; returns (step, loss, wall_ms) history."""
    cfg.validate()
    optimizer = build_optimizer(model, cfg)
    rng = random.Random(f"batches:{cfg.seed}")
    history: list[tuple[int, float, float]] = []
    step = 0
    while step < cfg.steps:
        for batch in _epoch_batches(samples, cfg.batch_size, rng):
            start = time.perf_counter()
            loss = train_step(model, [samples[i] for i in batch], optimizer, cfg.grad_clip)
            wall_ms = (time.perf_counter() - start) * 1000.0 if cfg.log_wall else 0.0
            history.append((step, loss, wall_ms))
            step += 1
            if step >= cfg.steps:
                break
    if csv_path is not None:
        write_loss_csv(csv_path, history)
    return history


def write_loss_csv(path: str | Path, history: Sequence[tuple[int, float, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,loss,wall_ms\n")
        for step, loss, wall_ms in history:
            fh.write(f"{step},{loss:.10f},{wall_ms:.3f}\n")
