"""Training loop that teaches the point-cloud encoder to reproduce target
image embeddings: squared-error and negative-cosine losses with analytic
gradients, Adam, and a one-cycle learning-rate schedule.

Runs are fully reproducible: batches are consumed in order, per-item
gradients are reduced in item order, and the optimizer is plain float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderConfig, EncoderParams, VoxelGrid, encode, encoder_grad
from .retrieval import NORM_EPS, DegenerateEmbeddingError


class TrainError(ValueError):
    pass


class NumericTrainError(TrainError):
    pass


@dataclass
class PairBatch:
    """Voxel grids paired with the target embeddings they should reproduce."""

    items: list  # list[(VoxelGrid, np.ndarray target)]

    def __post_init__(self):
        if not self.items:
            raise TrainError("batch must be non-empty")
        d = np.asarray(self.items[0][1]).size
        cleaned = []
        for grid, target in self.items:
            target = np.asarray(target, dtype=np.float64).reshape(-1)
            if target.size != d:
                raise TrainError("all targets in a batch must share one dimension")
            cleaned.append((grid, target))
        self.items = cleaned

    @property
    def d(self) -> int:
        return self.items[0][1].size


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    batch_size: int = 16
    loss_kind: str = "mse"
    base_lr: float = 1e-5
    max_lr: float = 1e-3
    final_lr: float = 1e-7
    warmup_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 0:
            raise TrainError("total_steps must be >= 0")
        if not 0 < self.base_lr <= self.max_lr:
            raise TrainError("need 0 < base_lr <= max_lr")
        if not 0 < self.warmup_frac < 1:
            raise TrainError("warmup_frac must be in (0, 1)")
        if self.loss_kind not in ("mse", "cosine"):
            raise TrainError(f"unknown loss kind {self.loss_kind!r}")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")


def loss_mse(z_target: np.ndarray, z_out: np.ndarray):
    """Mean squared error over dimensions and its gradient w.r.t. z_out."""
    a = np.asarray(z_target, dtype=np.float64).reshape(-1)
    b = np.asarray(z_out, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise TrainError(f"dimension mismatch: {a.size} vs {b.size}")
    diff = b - a
    loss = float(diff @ diff) / a.size
    grad = 2.0 * diff / a.size
    return loss, grad


def loss_cosine(z_target: np.ndarray, z_out: np.ndarray):
    """Negative cosine similarity and its gradient w.r.t. z_out."""
    a = np.asarray(z_target, dtype=np.float64).reshape(-1)
    b = np.asarray(z_out, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise TrainError(f"dimension mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        raise DegenerateEmbeddingError("cosine loss undefined for near-zero embeddings")
    dot = float(a @ b)
    loss = -dot / (na * nb)
    grad = -(a / (na * nb) - dot * b / (na * nb**3))
    return loss, grad


LOSSES = {"mse": loss_mse, "cosine": loss_cosine}


def one_cycle_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from base_lr to max_lr over the first warmup fraction of
    training, then cosine annealing down to final_lr at the last step."""
    if not 0 <= step < cfg.total_steps:
        raise TrainError(f"step {step} outside [0, {cfg.total_steps})")
    warmup = round(cfg.warmup_frac * cfg.total_steps)
    if step < warmup:
        return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * step / warmup
    span = cfg.total_steps - 1 - warmup
    if span <= 0:
        return cfg.max_lr
    t = (step - warmup) / span
    return cfg.final_lr + 0.5 * (cfg.max_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * t))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; inputs are untouched."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise TrainError("params, grads, and state must have equal lengths")
    if not np.isfinite(grads).all():
        raise NumericTrainError("non-finite gradient")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, t)


@dataclass(frozen=True)
class StepRecord:
    step: int
    lr: float
    loss: float

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "lr": self.lr, "loss": self.loss})


def train(
    batches,
    params: EncoderParams,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    log_path=None,
):
    """Run total_steps optimizer steps, cycling through the given batches.

    Returns (trained params, history of StepRecord). The input params object
    is never mutated. Optionally appends one JSON line per step to log_path.
    """
    batches = list(batches)
    if cfg.total_steps and not batches:
        raise TrainError("no batches supplied")
    vector = params.vector.copy()
    state = AdamState.zeros(vector.size)
    history = []
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for step in range(cfg.total_steps):
            batch = batches[step % len(batches)]
            loss_fn = LOSSES[cfg.loss_kind]
            step_params = EncoderParams(enc_cfg, vector)
            total_loss = 0.0
            total_grad = np.zeros_like(vector)
            for grid, target in batch.items:
                z = encode(grid, step_params, enc_cfg)
                loss, dz = loss_fn(target, z)
                total_loss += loss
                total_grad += encoder_grad(grid, step_params, enc_cfg, dz)
            n = len(batch.items)
            mean_loss = total_loss / n
            total_grad /= n
            if not np.isfinite(total_grad).all():
                raise NumericTrainError(f"non-finite gradient at step {step}")
            if not math.isfinite(mean_loss):
                raise NumericTrainError(f"non-finite loss at step {step}")
            lr = one_cycle_lr(step, cfg)
            vector, state = adam_step(
                vector, total_grad, state, lr,
                beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
            )
            record = StepRecord(step, lr, mean_loss)
            history.append(record)
            if log_fh is not None:
                log_fh.write(record.to_json() + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()
    return EncoderParams(enc_cfg, vector), history


def make_batches(pairs, batch_size: int):
    """Chunk (grid, target) pairs into PairBatches in the given order."""
    if batch_size < 1:
        raise TrainError("batch_size must be >= 1")
    pairs = list(pairs)
    return [
        PairBatch(pairs[i:i + batch_size])
        for i in range(0, len(pairs), batch_size)
    ]
