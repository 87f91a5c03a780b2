"""Windowed transformer velocity predictor over latent frames.

Tokens are latent frames. Each token carries one of three roles:

* ``ACTIVE``  - being denoised; attends to every active token (or only earlier
  ones in ``causal_window`` mode) and to the visible committed context.
* ``CONTEXT`` - committed frames within ``context_horizon`` of the window;
  attend causally among themselves. Keys/values only, never outputs.
* ``HIDDEN``  - pure-noise future frames or history past the horizon; never
  attended to. Training batches carry them as padding.

Text conditioning is folded into the same attention: every vocabulary entry
contributes one extra key/value slot, and a frame may only attend to the slot
of the prompt active at that frame. Positions are sinusoidal offsets from the
newest visible frame, so the model is shift-invariant along the stream.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .errors import PromptError, ShapeError
from .motion import PromptSchedule
from .numeric import (Node, Rng, add, concat, constant, expand, layer_norm, load_checkpoint, matmul,
                      mul, reshape, save_checkpoint, scale, silu, softmax, transpose)
from .numeric.layers import ParamSet, init_linear, linear
from .schedule import RegionPartition
from .vae import DOWNSAMPLE, LATENT_DIM

HIDDEN, CONTEXT, ACTIVE = 0, 1, 2
MASK_BIAS = -1e9
NOISE_FREQS = 8


class AttnMode(str, Enum):
    BIDIRECTIONAL = "bidirectional_window"
    CAUSAL = "causal_window"


@dataclass(frozen=True)
class DenoiserConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 64
    context_horizon: int = 32
    attn_mode: AttnMode = AttnMode.BIDIRECTIONAL
    mlp_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "attn_mode", AttnMode(self.attn_mode))
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.context_horizon < 0:
            raise ValueError("context_horizon must be >= 0")
        if self.layers < 1:
            raise ValueError("need at least one layer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attn_mode"] = self.attn_mode.value
        return d


class PromptVocab:
    def __init__(self, prompts):
        self.prompts = list(dict.fromkeys(prompts))

    def __len__(self) -> int:
        return len(self.prompts)

    def __contains__(self, prompt) -> bool:
        return prompt in self.prompts

    def index(self, prompt: str) -> int:
        try:
            return self.prompts.index(prompt)
        except ValueError:
            raise PromptError(f"prompt {prompt!r} not in vocabulary {self.prompts}") from None


# ---------------------------------------------------------------- masks

@dataclass
class AttentionMask:
    frames: np.ndarray      # absolute latent index per token
    roles: np.ndarray       # HIDDEN / CONTEXT / ACTIVE per token
    prompt_ids: np.ndarray  # vocabulary index per token
    positions: np.ndarray   # offset from the newest visible token
    allowed: np.ndarray     # (L, L + P) bool: frame keys then prompt keys

    @property
    def active_rows(self) -> np.ndarray:
        return np.flatnonzero(self.roles == ACTIVE)

    @property
    def n_tokens(self) -> int:
        return len(self.roles)

    def frame_block(self) -> np.ndarray:
        return self.allowed[:, : self.n_tokens]

    def prompt_block(self) -> np.ndarray:
        return self.allowed[:, self.n_tokens:]

    def bias(self) -> np.ndarray:
        return np.where(self.allowed, 0.0, MASK_BIAS).astype(np.float32)


def mask_from_roles(roles: np.ndarray, prompt_ids: np.ndarray, vocab_size: int,
                    mode: AttnMode, frames: np.ndarray | None = None) -> AttentionMask:
    roles = np.asarray(roles)
    L = len(roles)
    act = roles == ACTIVE
    ctx = roles == CONTEXT
    i = np.arange(L)[:, None]
    j = np.arange(L)[None, :]
    ff = np.zeros((L, L), dtype=bool)
    ff |= act[:, None] & ctx[None, :]
    if AttnMode(mode) is AttnMode.CAUSAL:
        ff |= act[:, None] & act[None, :] & (j <= i)
    else:
        ff |= act[:, None] & act[None, :]
    ff |= ctx[:, None] & ctx[None, :] & (j <= i)
    hidden = roles == HIDDEN
    ff[hidden, hidden] = True  # padding rows look at themselves only
    fp = np.zeros((L, vocab_size), dtype=bool)
    fp[np.arange(L), prompt_ids] = ~hidden
    visible = np.flatnonzero(~hidden)
    newest = visible[-1] if visible.size else L - 1
    return AttentionMask(
        frames=np.arange(L) if frames is None else np.asarray(frames),
        roles=roles, prompt_ids=np.asarray(prompt_ids), positions=np.arange(L) - newest,
        allowed=np.concatenate([ff, fp], axis=1))


def latent_prompt(schedule: PromptSchedule, k: int) -> str:
    """Prompt governing latent frame ``k`` (the one active at its last motion frame)."""
    return schedule.prompt_at(DOWNSAMPLE * k + DOWNSAMPLE - 1)


def build_attention_mask(partition: RegionPartition, schedule: PromptSchedule,
                         config: DenoiserConfig, vocab: PromptVocab) -> AttentionMask:
    """Mask over the visible slice ``[max(0, m - horizon), n)``."""
    m, n = partition.m, partition.n
    if not 0 <= m <= n:
        raise ShapeError(f"bad partition m={m}, n={n}")
    start = max(0, m - config.context_horizon)
    frames = np.arange(start, n)
    roles = np.where(frames < m, CONTEXT, ACTIVE)
    prompt_ids = np.array([vocab.index(latent_prompt(schedule, int(k))) for k in frames], dtype=np.int64)
    return mask_from_roles(roles, prompt_ids, len(vocab), config.attn_mode, frames)


def roles_from_alpha(alpha: np.ndarray, horizon: int) -> np.ndarray:
    """Token roles for a training sample with arbitrary per-frame alpha."""
    alpha = np.asarray(alpha)
    below = np.flatnonzero(alpha < 1.0)
    m = int(below[0]) if below.size else len(alpha)
    k = np.arange(len(alpha))
    roles = np.full(len(alpha), HIDDEN)
    roles[(alpha > 0.0) & (alpha < 1.0)] = ACTIVE
    roles[(alpha == 1.0) & (k >= m - horizon)] = CONTEXT
    return roles


# ---------------------------------------------------------------- model

def noise_features(alpha: np.ndarray) -> np.ndarray:
    """Sinusoidal features of alpha in [0, 1]: sin/cos(pi * 2^i * alpha)."""
    a = np.asarray(alpha, dtype=np.float64)[..., None]
    f = np.pi * (2.0 ** np.arange(NOISE_FREQS))
    return np.concatenate([np.sin(a * f), np.cos(a * f)], axis=-1).astype(np.float32)


def position_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    p = np.asarray(positions, dtype=np.float64)[..., None]
    freqs = 1.0 / (100.0 ** (np.arange(dim // 2) / (dim // 2)))
    return np.concatenate([np.sin(p * freqs), np.cos(p * freqs)], axis=-1).astype(np.float32)


class Denoiser:
    def __init__(self, config: DenoiserConfig, vocab: PromptVocab, rng: Rng | None = None):
        self.config = config
        self.vocab = vocab
        rng = (rng or Rng(0)).fork("denoiser-init")
        d, P = config.model_dim, len(vocab)
        p = self.p = ParamSet()
        p.add("in.w", init_linear(rng.fork("in"), LATENT_DIM, d))
        p.add("in.b", np.zeros(d))
        p.add("noise.w1", init_linear(rng.fork("n1"), 2 * NOISE_FREQS, d))
        p.add("noise.b1", np.zeros(d))
        p.add("noise.w2", init_linear(rng.fork("n2"), d, d))
        p.add("noise.b2", np.zeros(d))
        p.add("prompt.table", 0.5 * rng.fork("table").randn((P, d), dtype=np.float64))
        hid = config.mlp_ratio * d
        for l in range(config.layers):
            r = rng.fork("layer", l)
            p.add(f"l{l}.ln1.g", np.ones(d))
            p.add(f"l{l}.ln1.b", np.zeros(d))
            for name in ("q", "k", "v"):
                p.add(f"l{l}.{name}.w", init_linear(r.fork(name), d, d))
            p.add(f"l{l}.o.w", init_linear(r.fork("o"), d, d, gain=0.5))
            p.add(f"l{l}.o.b", np.zeros(d))
            p.add(f"l{l}.ln2.g", np.ones(d))
            p.add(f"l{l}.ln2.b", np.zeros(d))
            p.add(f"l{l}.mlp.w1", init_linear(r.fork("w1"), d, hid))
            p.add(f"l{l}.mlp.b1", np.zeros(hid))
            p.add(f"l{l}.mlp.w2", init_linear(r.fork("w2"), hid, d, gain=0.5))
            p.add(f"l{l}.mlp.b2", np.zeros(d))
        p.add("out.ln.g", np.ones(d))
        p.add("out.ln.b", np.zeros(d))
        # zero head: an untrained model predicts v == 0
        p.add("out.w", np.zeros((d, LATENT_DIM)))
        p.add("out.b", np.zeros(LATENT_DIM))
        self.record_attention = False
        self.last_attention: list[np.ndarray] = []

    @property
    def params(self) -> dict[str, Node]:
        return self.p.params

    def _ln(self, x: Node, prefix: str) -> Node:
        return add(mul(layer_norm(x), self.p[prefix + ".g"]), self.p[prefix + ".b"])

    def forward(self, x, alpha, positions, bias) -> Node:
        """Batched forward.

        x: (B, L, 4) noisy latents; alpha: (B, L); positions: (B, L);
        bias: (B, L, L + P) additive attention bias. Returns v as (B, L, 4).
        """
        cfg, p = self.config, self.p
        x = constant(x)
        B, L, _ = x.shape
        d, H = cfg.model_dim, cfg.heads
        dh = d // H
        P = len(self.vocab)
        if np.shape(bias) != (B, L, L + P):
            raise ShapeError(f"bias shape {np.shape(bias)} != {(B, L, L + P)}")
        h = linear(x, p["in.w"], p["in.b"])
        nf = constant(noise_features(alpha))
        h = add(h, linear(silu(linear(nf, p["noise.w1"], p["noise.b1"])), p["noise.w2"], p["noise.b2"]))
        h = add(h, constant(position_encoding(positions, d)))
        full_bias = constant(np.broadcast_to(np.asarray(bias, dtype=np.float32)[:, None], (B, H, L, L + P)))
        self.last_attention = []
        for l in range(cfg.layers):
            a = self._ln(h, f"l{l}.ln1")
            pe = self._ln(p["prompt.table"], f"l{l}.ln1")  # (P, d)
            q = matmul(a, p[f"l{l}.q.w"])
            k = concat([matmul(a, p[f"l{l}.k.w"]), expand(matmul(pe, p[f"l{l}.k.w"]), B)], axis=1)
            v = concat([matmul(a, p[f"l{l}.v.w"]), expand(matmul(pe, p[f"l{l}.v.w"]), B)], axis=1)
            q = transpose(reshape(q, (B, L, H, dh)), (0, 2, 1, 3))
            k = transpose(reshape(k, (B, L + P, H, dh)), (0, 2, 3, 1))
            v = transpose(reshape(v, (B, L + P, H, dh)), (0, 2, 1, 3))
            scores = add(scale(matmul(q, k), 1.0 / np.sqrt(dh)), full_bias)
            attn = softmax(scores)
            if self.record_attention:
                self.last_attention.append(attn.value.copy())
            o = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (B, L, d))
            h = add(h, linear(o, p[f"l{l}.o.w"], p[f"l{l}.o.b"]))
            m = self._ln(h, f"l{l}.ln2")
            m = linear(silu(linear(m, p[f"l{l}.mlp.w1"], p[f"l{l}.mlp.b1"])), p[f"l{l}.mlp.w2"], p[f"l{l}.mlp.b2"])
            h = add(h, m)
        return linear(self._ln(h, "out.ln"), p["out.w"], p["out.b"])

    def predict_velocity(self, x: np.ndarray, alpha: np.ndarray, mask: AttentionMask) -> np.ndarray:
        """Velocity for the active tokens of one window, shape (|active|, 4).

        ``x`` and ``alpha`` cover the same tokens as ``mask``.
        """
        rows = mask.active_rows
        if rows.size == 0:
            return np.zeros((0, LATENT_DIM), dtype=np.float32)
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (mask.n_tokens, LATENT_DIM):
            raise ShapeError(f"window latents {x.shape} do not match mask with {mask.n_tokens} tokens")
        v = self.forward(x[None], np.asarray(alpha)[None], mask.positions[None], mask.bias()[None])
        return v.value[0, rows]

    def flops(self, n_tokens: int) -> int:
        """Multiply-add count of one forward over ``n_tokens`` frames."""
        d, P, Lr = self.config.model_dim, len(self.vocab), self.config.layers
        hid = self.config.mlp_ratio * d
        L = n_tokens
        per_layer = (L * d * 3 * d + P * d * 2 * d + 2 * L * (L + P) * d + L * d * d + 2 * L * d * hid)
        return 2 * (L * (LATENT_DIM * d + 2 * NOISE_FREQS * d + d * d) + Lr * per_layer + L * d * LATENT_DIM)

    # ------------------------------------------------------------ persistence

    def save(self, path, meta: dict | None = None, extra: dict | None = None) -> None:
        tensors = self.p.tensors()
        tensors.update(extra or {})
        save_checkpoint(path, tensors, {"kind": "denoiser", "config": self.config.to_dict(),
                                        "vocab": self.vocab.prompts, **(meta or {})})

    @classmethod
    def load(cls, path) -> tuple["Denoiser", dict, dict]:
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "denoiser":
            raise ValueError(f"{path} is not a denoiser checkpoint (kind={meta.get('kind')!r})")
        model = cls(DenoiserConfig(**meta["config"]), PromptVocab(meta["vocab"]))
        model.p.load(tensors)
        return model, meta, tensors
