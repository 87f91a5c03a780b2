"""Strictly causal temporal autoencoder: D channels at fps -> 4 channels at fps/4.

Encoder: stride-1 causal conv, two stride-2 causal convs, linear to the
pre-latent ``e = E(x)``. A learnable 4x4 linear head maps ``sg[e]`` to the
latent ``z``. The decoder reads ``z`` through a straight-through path so the
reconstruction gradient reaches the encoder:

    L = |x - D(z)|^2 + |sg[E(x)] - z|^2 + gamma * |sg[z] - E(x)|^2

Each squared norm is a mean over elements. Latent frame ``u`` depends on
motion frames ``<= 4u + 3``; decoded frame ``f`` depends on latents
``<= f // 4``. Left padding replicates the first frame at every conv.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ShapeError
from .motion import MotionSequence
from .numeric import Adam, Node, Rng, constant, load_checkpoint, mse, save_checkpoint, silu
from .numeric import stop_gradient as sg
from .numeric.layers import ParamSet, causal_conv, init_linear, linear, upsample2

LATENT_DIM = 4
DOWNSAMPLE = 4
# reconstruction of frame f can depend on input frames up to 4 * (f // 4) + 3
DECODER_SLACK = 3
# latents the decoder needs behind the newest one to reproduce its output exactly
DECODE_CONTEXT = 8


@dataclass(frozen=True)
class VaeConfig:
    D_in: int = 16
    latent_dim: int = LATENT_DIM
    downsample: int = DOWNSAMPLE
    hidden: int = 64
    kernel: int = 4
    gamma: float = 0.25

    def __post_init__(self):
        if self.latent_dim != LATENT_DIM or self.downsample != DOWNSAMPLE:
            raise ValueError("latent_dim and downsample are fixed at 4")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.kernel < 2:
            raise ValueError(f"kernel must be >= 2 for the stride-2 stages, got {self.kernel}")
        if self.D_in < 1:
            raise ValueError(f"D_in must be >= 1, got {self.D_in}")


@dataclass
class LatentSequence:
    frames: np.ndarray  # (ceil(T / 4), 4)
    fps: float          # latent rate = source fps / 4

    def __len__(self) -> int:
        return self.frames.shape[0]


class CausalVAE:
    def __init__(self, config: VaeConfig, rng: Rng | None = None):
        self.config = config
        rng = rng or Rng(0)
        D, H, k, L = config.D_in, config.hidden, config.kernel, config.latent_dim
        p = self.p = ParamSet()
        r = rng.fork("vae-init")
        p.add("enc.conv0.w", init_linear(r.fork(0), k * D, H))
        p.add("enc.conv0.b", np.zeros(H))
        p.add("enc.down1.w", init_linear(r.fork(1), k * H, H))
        p.add("enc.down1.b", np.zeros(H))
        p.add("enc.down2.w", init_linear(r.fork(2), k * H, H))
        p.add("enc.down2.b", np.zeros(H))
        p.add("enc.out.w", init_linear(r.fork(3), H, L))
        p.add("enc.out.b", np.zeros(L))
        p.add("head.w", np.eye(L))
        p.add("head.b", np.zeros(L))
        p.add("dec.in.w", init_linear(r.fork(4), L, H))
        p.add("dec.in.b", np.zeros(H))
        p.add("dec.conv0.w", init_linear(r.fork(5), k * H, H))
        p.add("dec.conv0.b", np.zeros(H))
        p.add("dec.up1.w", init_linear(r.fork(6), H, 2 * H))
        p.add("dec.up1.b", np.zeros(2 * H))
        p.add("dec.conv1.w", init_linear(r.fork(7), k * H, H))
        p.add("dec.conv1.b", np.zeros(H))
        p.add("dec.up2.w", init_linear(r.fork(8), H, 2 * H))
        p.add("dec.up2.b", np.zeros(2 * H))
        p.add("dec.conv2.w", init_linear(r.fork(9), k * H, H))
        p.add("dec.conv2.b", np.zeros(H))
        p.add("dec.out.w", init_linear(r.fork(10), H, D))
        p.add("dec.out.b", np.zeros(D))
        self.latent_mean = np.zeros(L, dtype=np.float32)
        self.latent_std = np.ones(L, dtype=np.float32)

    @property
    def params(self) -> dict[str, Node]:
        return self.p.params

    # ------------------------------------------------------------ graph pieces

    def encoder(self, x: Node) -> Node:
        p, k = self.p, self.config.kernel
        h = silu(causal_conv(x, p["enc.conv0.w"], p["enc.conv0.b"], k, 1))
        h = silu(causal_conv(h, p["enc.down1.w"], p["enc.down1.b"], k, 2))
        h = silu(causal_conv(h, p["enc.down2.w"], p["enc.down2.b"], k, 2))
        return linear(h, p["enc.out.w"], p["enc.out.b"])

    def head(self, e: Node) -> Node:
        return linear(e, self.p["head.w"], self.p["head.b"])

    def decoder(self, z: Node) -> Node:
        p, k = self.p, self.config.kernel
        h = silu(linear(z, p["dec.in.w"], p["dec.in.b"]))
        h = silu(causal_conv(h, p["dec.conv0.w"], p["dec.conv0.b"], k, 1))
        h = silu(upsample2(h, p["dec.up1.w"], p["dec.up1.b"]))
        h = silu(causal_conv(h, p["dec.conv1.w"], p["dec.conv1.b"], k, 1))
        h = silu(upsample2(h, p["dec.up2.w"], p["dec.up2.b"]))
        h = silu(causal_conv(h, p["dec.conv2.w"], p["dec.conv2.b"], k, 1))
        return linear(h, p["dec.out.w"], p["dec.out.b"])

    # ------------------------------------------------------------ array API

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        """(B, T, D) or (T, D) motion -> latents with length ceil(T / 4)."""
        x = np.asarray(x, dtype=np.float32)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[-1] != self.config.D_in:
            raise ShapeError(f"expected {self.config.D_in} channels, got {x.shape[-1]}")
        T = x.shape[1]
        if T < DOWNSAMPLE:
            raise ShapeError(f"need at least {DOWNSAMPLE} frames to encode, got {T}")
        rem = (-T) % DOWNSAMPLE
        if rem:
            x = np.concatenate([x, np.repeat(x[:, -1:], rem, axis=1)], axis=1)
        z = self.head(self.encoder(constant(x))).value
        return z[0] if single else z

    def decode_array(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float32)
        single = z.ndim == 2
        if single:
            z = z[None]
        if z.shape[1] == 0:
            raise ShapeError("cannot decode an empty latent sequence")
        if z.shape[-1] != LATENT_DIM:
            raise ShapeError(f"latents must have {LATENT_DIM} channels, got {z.shape[-1]}")
        x = self.decoder(constant(z)).value
        return x[0] if single else x

    def encode(self, seq: MotionSequence) -> LatentSequence:
        return LatentSequence(self.encode_array(seq.frames), fps=seq.fps / DOWNSAMPLE)

    def decode(self, latents: LatentSequence) -> MotionSequence:
        return MotionSequence(self.decode_array(latents.frames), fps=latents.fps * DOWNSAMPLE)

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return ((z - self.latent_mean) / self.latent_std).astype(np.float32)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return (z * self.latent_std + self.latent_mean).astype(np.float32)

    def fit_latent_stats(self, seqs: list[MotionSequence]) -> None:
        z = np.concatenate([self.encode_array(s.frames) for s in seqs])
        self.latent_mean = z.mean(axis=0).astype(np.float32)
        self.latent_std = np.maximum(z.std(axis=0), 1e-3).astype(np.float32)

    # ------------------------------------------------------------ persistence

    def save(self, path, meta: dict | None = None, extra: dict | None = None) -> None:
        tensors = self.p.tensors()
        tensors["latent.mean"] = self.latent_mean
        tensors["latent.std"] = self.latent_std
        tensors.update(extra or {})
        save_checkpoint(path, tensors, {"kind": "vae", "config": asdict(self.config), **(meta or {})})

    @classmethod
    def load(cls, path) -> tuple["CausalVAE", dict, dict]:
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "vae":
            raise ValueError(f"{path} is not a VAE checkpoint (kind={meta.get('kind')!r})")
        vae = cls(VaeConfig(**meta["config"]))
        vae.p.load(tensors)
        vae.latent_mean = tensors["latent.mean"]
        vae.latent_std = tensors["latent.std"]
        return vae, meta, tensors


class IncrementalDecoder:
    """Decodes committed latents one at a time from a ring of recent latents.

    Output for latent ``u`` equals rows ``4u .. 4u+3`` of a full decode of all
    latents up to ``u``.
    """

    def __init__(self, vae: CausalVAE, context: int = DECODE_CONTEXT):
        self.vae = vae
        self.context = context
        self.ring = np.zeros((context, LATENT_DIM), dtype=np.float32)
        self.count = 0

    def push(self, z: np.ndarray) -> np.ndarray:
        self.ring[self.count % self.context] = z
        self.count += 1
        n = min(self.count, self.context)
        order = [(self.count - n + i) % self.context for i in range(n)]
        window = self.ring[order]
        return self.vae.decode_array(window)[-DOWNSAMPLE:]


# ---------------------------------------------------------------- loss and training

@dataclass
class VaeLoss:
    total: Node
    recon: Node
    codebook: Node
    commit: Node

    def terms(self) -> dict[str, float]:
        return {k: float(getattr(self, k).value) for k in ("total", "recon", "codebook", "commit")}


def vae_loss(x, encoder, head, decoder, gamma: float) -> VaeLoss:
    """Reconstruction + codebook + gamma * commitment.

    ``encoder``, ``head`` and ``decoder`` are callables on nodes. The head only
    sees ``sg[e]``, and the decoder input is ``e + sg[z - e]`` (value ``z``,
    gradient to ``e``), so encoder gradients come from the reconstruction and
    commitment terms only.
    """
    x = constant(x)
    e = encoder(x)
    z = head(sg(e))
    z_st = e + sg(z - e)
    x_hat = decoder(z_st)
    if x_hat.shape != x.shape:
        raise ShapeError(f"reconstruction {x_hat.shape} does not match input {x.shape}")
    recon = mse(x, x_hat)
    codebook = mse(sg(e), z)
    commit = mse(sg(z), e)
    total = recon + codebook + commit * gamma if gamma else recon + codebook
    return VaeLoss(total, recon, codebook, commit)


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    extra: dict[str, list[float]] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        keys = sorted(self.extra)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "grad_norm", *keys])
            for i, step in enumerate(self.steps):
                w.writerow([step, self.loss[i], self.grad_norm[i], *(self.extra[k][i] for k in keys)])


def sample_clips(rng: Rng, dataset: list[MotionSequence], batch: int, clip_len: int) -> np.ndarray:
    out = np.empty((batch, clip_len, dataset[0].D), dtype=np.float32)
    idx = rng.integers(len(dataset), (batch,))
    for b, i in enumerate(idx):
        seq = dataset[i]
        if len(seq) < clip_len:
            raise ShapeError(f"sequence {i} has {len(seq)} frames, need {clip_len}")
        start = int(rng.integers(len(seq) - clip_len + 1))
        out[b] = seq.frames[start:start + clip_len]
    return out


class VaeTrainer:
    def __init__(self, vae: CausalVAE, rng: Rng, lr: float = 2e-3, batch: int = 16,
                 clip_len: int = 64, divergence_factor: float = 10.0):
        self.vae = vae
        self.rng = rng
        self.batch, self.clip_len = batch, clip_len
        self.opt = Adam(vae.params, lr=lr)
        self.step = 0
        self.initial_loss: float | None = None
        self.divergence_factor = divergence_factor
        self.log = TrainLog()

    def train_step(self, dataset: list[MotionSequence]) -> VaeLoss:
        from .numeric import backward, grad_norm
        x = sample_clips(self.rng.fork("batch", self.step), dataset, self.batch, self.clip_len)
        v = self.vae
        loss = vae_loss(x, v.encoder, v.head, v.decoder, v.config.gamma)
        self.opt.zero_grad()
        backward(loss.total)
        gn = grad_norm(v.params)
        value = float(loss.total.value)
        if self.initial_loss is None:
            self.initial_loss = value
        if not np.isfinite(value) or value > self.divergence_factor * self.initial_loss:
            raise DivergenceError(
                f"VAE loss {value:.4g} at step {self.step} exceeds {self.divergence_factor}x "
                f"initial {self.initial_loss:.4g} (grad norm {gn:.3g})",
                self.step, value, self.initial_loss)
        self.opt.step()
        self.step += 1
        self.log.steps.append(self.step)
        self.log.loss.append(value)
        self.log.grad_norm.append(gn)
        for k, val in loss.terms().items():
            if k != "total":
                self.log.extra.setdefault(k, []).append(val)
        return loss

    def save(self, path) -> None:
        self.vae.save(path, meta={"step": self.step, "initial_loss": self.initial_loss},
                      extra=self.opt.state_tensors())

    def restore(self, meta: dict, tensors: dict) -> None:
        self.step = int(meta.get("step", 0))
        self.initial_loss = meta.get("initial_loss")
        self.opt.load_state_tensors(tensors, self.step)

    def run(self, dataset: list[MotionSequence], steps: int) -> TrainLog:
        if not dataset:
            raise ValueError("training dataset is empty")
        for _ in range(steps):
            self.train_step(dataset)
        return self.log


def train_vae(dataset: list[MotionSequence], config: VaeConfig, rng: Rng, steps: int,
              **trainer_kwargs) -> tuple[CausalVAE, TrainLog]:
    """Train from a fresh init; latent normalisation stats are fitted at the end."""
    if not dataset:
        raise ValueError("training dataset is empty")
    vae = CausalVAE(config, rng.fork("init"))
    trainer = VaeTrainer(vae, rng.fork("train"), **trainer_kwargs)
    trainer.run(dataset, steps)
    if steps:
        vae.fit_latent_stats(dataset)
    return vae, trainer.log


def reconstruction_error(vae: CausalVAE, seqs: list[MotionSequence]) -> np.ndarray:
    """Per-channel MSE divided by per-channel data variance."""
    x = np.stack([s.frames for s in seqs]).astype(np.float64)
    x_hat = vae.decode_array(vae.encode_array(x.astype(np.float32))).astype(np.float64)
    x_hat = x_hat[:, : x.shape[1]]
    mse_c = ((x - x_hat) ** 2).reshape(-1, x.shape[-1]).mean(axis=0)
    var_c = x.reshape(-1, x.shape[-1]).var(axis=0)
    return mse_c / var_c
