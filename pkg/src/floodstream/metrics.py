"""Smoothness and distribution metrics plus the latency benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .motion import MotionSequence, dominant_frequency

EIG_FLOOR = 1e-6
# Edges (Hz) of the dominant-frequency bins used by toy-FID; bin 0 holds rest.
FREQ_BIN_EDGES = (0.25, 0.75, 1.25, 1.75, 2.5)


@dataclass
class JerkProfile:
    magnitude: np.ndarray  # (n_frames - 3,)
    fps: float


def jerk_profile(seq: MotionSequence) -> JerkProfile:
    """Forward third difference times fps^3, L2 norm across channels."""
    x = np.asarray(seq.frames, dtype=np.float64)
    if len(x) < 4:
        raise ShapeError(f"jerk needs at least 4 frames, got {len(x)}")
    d3 = (x[3:] - 3 * x[2:-1] + 3 * x[1:-2] - x[:-3]) * seq.fps ** 3
    return JerkProfile(np.sqrt((d3 ** 2).sum(axis=1)), float(seq.fps))


def peak_jerk(profile: JerkProfile) -> float:
    if profile.magnitude.size == 0:
        raise ShapeError("empty jerk profile")
    return float(profile.magnitude.max())


def area_under_jerk(profile: JerkProfile) -> float:
    """Rectangle rule: sum of magnitudes / fps."""
    if profile.magnitude.size == 0:
        raise ShapeError("empty jerk profile")
    return float(profile.magnitude.sum() / profile.fps)


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "GaussianStats":
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or len(f) < 2:
            raise ShapeError(f"need a (n >= 2, d) feature matrix, got {f.shape}")
        return cls(f.mean(axis=0), np.atleast_2d(np.cov(f, rowvar=False)))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    if w.min() < -1e-6 * max(1.0, abs(w).max()):
        raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def _floor(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((cov + cov.T) / 2)
    if w.min() < -1e-6 * max(1.0, abs(w).max()):
        raise ValueError(f"covariance is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return (v * np.maximum(w, EIG_FLOOR)) @ v.T


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """||mu_p - mu_q||^2 + Tr(S_p + S_q - 2 (S_p S_q)^(1/2)).

    The cross term uses Tr((sqrt(S_p) S_q sqrt(S_p))^(1/2)), which has the
    same trace and is symmetric, so eigh applies.
    """
    if p.mean.shape != q.mean.shape:
        raise ShapeError(f"feature dims differ: {p.mean.shape} vs {q.mean.shape}")
    sp, sq = _floor(p.cov), _floor(q.cov)
    root_p = _psd_sqrt(sp)
    cross = _psd_sqrt(root_p @ sq @ root_p)
    diff = p.mean - q.mean
    d = float(diff @ diff + np.trace(sp) + np.trace(sq) - 2.0 * np.trace(cross))
    return max(d, 0.0)


def freq_bin(freq: float) -> int:
    return int(np.searchsorted(FREQ_BIN_EDGES, freq, side="right"))


def toy_features(seq: MotionSequence) -> np.ndarray:
    x = np.asarray(seq.frames, dtype=np.float64)
    onehot = np.zeros(len(FREQ_BIN_EDGES) + 1)
    onehot[freq_bin(dominant_frequency(x, seq.fps))] = 1.0
    return np.concatenate([x.mean(axis=0), x.std(axis=0), onehot])


def toy_fid(samples: list[MotionSequence], reference: list[MotionSequence]) -> float:
    if len(samples) < 10 or len(reference) < 10:
        raise ValueError(f"toy_fid needs >= 10 sequences per set, got {len(samples)} and {len(reference)}")
    fs = np.stack([toy_features(s) for s in samples])
    fr = np.stack([toy_features(s) for s in reference])
    if fs.shape[1] != fr.shape[1]:
        raise ShapeError(f"channel count differs: {fs.shape[1]} vs {fr.shape[1]}")
    return frechet_distance(GaussianStats.fit(fs), GaussianStats.fit(fr))


def iis_som(fid: float, pj: float) -> float:
    """Somatic score 0.5 * (100 exp(-2 fid) + 100 exp(-0.3 pj))."""
    if fid < 0 or pj < 0:
        raise ValueError(f"iis_som needs non-negative inputs, got fid={fid}, pj={pj}")
    return 0.5 * (100.0 * math.exp(-2.0 * fid) + 100.0 * math.exp(-0.3 * pj))


def latency_bench(denoiser, vae, steps: int = 2000, n_s: float = 4.0, dt: float = 0.05,
                  budget_ms: float = 33.0, seed: int = 0, prompt: str | None = None):
    """Time ``steps`` steady-state engine steps under a single prompt."""
    from .streaming import StreamEngine

    engine = StreamEngine(denoiser, vae, n_s=n_s, dt=dt, seed=seed, frame_budget_ms=budget_ms)
    engine.push_prompt(prompt or denoiser.vocab.prompts[0], 0)
    for _ in range(math.ceil(engine.clock.lifetime_steps()) + steps):
        engine.step()
        engine.poll()
    return engine.latency
