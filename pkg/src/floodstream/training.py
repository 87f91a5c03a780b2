"""Diffusion-forcing training of the denoiser in the frozen VAE latent space."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import ACTIVE, Denoiser, latent_prompt, mask_from_roles, roles_from_alpha
from .errors import DivergenceError, ShapeError
from .motion import MotionSequence, PromptSchedule
from .numeric import Adam, Node, Rng, backward, constant, grad_norm, mul, scale, sub, sum_
from .schedule import ScheduleKind, ScheduleParams, corrupt, sample_training_times
from .vae import CausalVAE

log = logging.getLogger(__name__)


def velocity_target(z: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """d/dt of alpha * z + (1 - alpha) * noise along the ramp: ``z - noise``."""
    z = np.asarray(z)
    noise = np.asarray(noise)
    if z.shape != noise.shape:
        raise ShapeError(f"velocity_target: {z.shape} vs {noise.shape}")
    return (z.astype(np.float64) - noise.astype(np.float64)).astype(np.float32)


@dataclass
class TrainBatch:
    z: np.ndarray           # (B, K, 4) clean normalised latents
    alpha: np.ndarray       # (B, K)
    noise: np.ndarray       # (B, K, 4)
    prompt_ids: np.ndarray  # (B, K)

    def __post_init__(self):
        B, K, C = self.z.shape
        if self.noise.shape != self.z.shape or self.alpha.shape != (B, K) or self.prompt_ids.shape != (B, K):
            raise ShapeError("inconsistent TrainBatch shapes")

    @property
    def x(self) -> np.ndarray:
        return corrupt(self.z, self.alpha, self.noise)


@dataclass
class LatentPool:
    """Encoded training clips with per-latent prompt ids."""

    z: np.ndarray           # (N, K, 4)
    prompt_ids: np.ndarray  # (N, K)

    @classmethod
    def from_sequences(cls, vae: CausalVAE, seqs: list[MotionSequence], vocab, K: int) -> "LatentPool":
        zs, ids = [], []
        for seq in seqs:
            if seq.prompts is None:
                raise ValueError("training sequences need prompt labels")
            z = vae.normalize(vae.encode_array(seq.frames))
            if len(z) < K:
                raise ShapeError(f"sequence of {len(seq)} frames yields {len(z)} latents, need {K}")
            sched = PromptSchedule(seq.prompts)
            zs.append(z[:K])
            ids.append([vocab.index(latent_prompt(sched, k)) for k in range(K)])
        return cls(np.stack(zs), np.asarray(ids, dtype=np.int64))


def make_batch(pool: LatentPool, schedule: ScheduleParams, rng: Rng, batch: int) -> TrainBatch:
    idx = rng.fork("pick").integers(len(pool.z), (batch,))
    times = sample_training_times(schedule, rng.fork("times"), batch)
    noise = rng.fork("noise").randn((batch, schedule.K, pool.z.shape[-1]))
    return TrainBatch(pool.z[idx], times.alpha, noise, pool.prompt_ids[idx])


def batch_masks(batch: TrainBatch, model: Denoiser) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Roles, positions and attention bias for every sample of a batch."""
    B, K = batch.alpha.shape
    roles = np.empty((B, K), dtype=np.int64)
    positions = np.empty((B, K), dtype=np.int64)
    bias = np.empty((B, K, K + len(model.vocab)), dtype=np.float32)
    for b in range(B):
        r = roles_from_alpha(batch.alpha[b], model.config.context_horizon)
        m = mask_from_roles(r, batch.prompt_ids[b], len(model.vocab), model.config.attn_mode)
        roles[b], positions[b], bias[b] = r, m.positions, m.bias()
    return roles, positions, bias


def df_loss(batch: TrainBatch, model: Denoiser, predictor=None) -> Node:
    """Mean over active frames (0 < alpha < 1) of ||v - (z - noise)||^2.

    ``predictor`` overrides the model forward (``(x, alpha, positions, bias) -> Node``),
    which the tests use for perfect and zero predictors.
    """
    roles, positions, bias = batch_masks(batch, model)
    weight = (roles == ACTIVE).astype(np.float32)[..., None]
    n_active = int(weight.sum())
    if n_active == 0:
        log.warning("batch has no active frames; contributing zero loss")
        return constant(np.float32(0.0))
    forward = predictor or model.forward
    v = forward(batch.x, batch.alpha, positions, bias)
    err = sub(v, velocity_target(batch.z, batch.noise))
    w = np.broadcast_to(weight, err.shape)
    return scale(sum_(mul(mul(err, err), w)), 1.0 / n_active)


@dataclass
class DenoiserTrainConfig:
    steps: int = 5000
    batch: int = 16
    lr: float = 1e-3
    log_every: int = 50
    fid_every: int = 0   # 0 disables periodic toy-FID
    divergence_factor: float = 10.0


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["step", "loss", "grad_norm", "toy_fid"])
            w.writeheader()
            for row in self.rows:
                w.writerow({k: ("" if row.get(k) is None else row[k]) for k in w.fieldnames})

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]


class DenoiserTrainer:
    def __init__(self, model: Denoiser, schedule: ScheduleParams, rng: Rng,
                 config: DenoiserTrainConfig | None = None, fid_hook=None):
        self.model = model
        self.schedule = schedule
        self.rng = rng
        self.config = config or DenoiserTrainConfig()
        self.opt = Adam(model.params, lr=self.config.lr)
        self.step = 0
        self.initial_loss: float | None = None
        self.log = MetricsLog()
        self.fid_hook = fid_hook

    def train_step(self, pool: LatentPool) -> float:
        batch = make_batch(pool, self.schedule, self.rng.fork("batch", self.step), self.config.batch)
        loss = df_loss(batch, self.model)
        self.opt.zero_grad()
        if loss.requires_grad:
            backward(loss)
        value = float(loss.value)
        gn = grad_norm(self.model.params)
        if self.initial_loss is None and value > 0:
            self.initial_loss = value
        if not np.isfinite(value) or (self.initial_loss and value > self.config.divergence_factor * self.initial_loss):
            raise DivergenceError(
                f"denoiser loss {value:.4g} at step {self.step} exceeds "
                f"{self.config.divergence_factor}x initial {self.initial_loss} (grad norm {gn:.3g})",
                self.step, value, self.initial_loss or 0.0)
        self.opt.step()
        self.step += 1
        fid = None
        if self.fid_hook and self.config.fid_every and self.step % self.config.fid_every == 0:
            fid = float(self.fid_hook(self.model, self.step))
        self.log.add(step=self.step, loss=value, grad_norm=gn, toy_fid=fid)
        return value

    def run(self, pool: LatentPool, steps: int) -> MetricsLog:
        for _ in range(steps):
            self.train_step(pool)
        return self.log

    def checkpoint_meta(self) -> dict:
        return {"schedule": {"n_s": self.schedule.n_s, "K": self.schedule.K,
                             "kind": self.schedule.kind.value},
                "step": self.step, "lr": self.config.lr, "initial_loss": self.initial_loss}

    def save(self, path) -> None:
        self.model.save(path, meta=self.checkpoint_meta(), extra=self.opt.state_tensors())

    def restore(self, meta: dict, tensors: dict) -> None:
        self.step = int(meta.get("step", 0))
        self.initial_loss = meta.get("initial_loss")
        self.opt.load_state_tensors(tensors, self.step)


def train_denoiser(pool: LatentPool, model: Denoiser, schedule: ScheduleParams, rng: Rng,
                   config: DenoiserTrainConfig | None = None, fid_hook=None) -> tuple[Denoiser, MetricsLog]:
    trainer = DenoiserTrainer(model, schedule, rng, config, fid_hook)
    trainer.run(pool, trainer.config.steps)
    return model, trainer.log


def schedule_kind_of(meta: dict) -> ScheduleKind:
    return ScheduleKind(meta["schedule"]["kind"])
