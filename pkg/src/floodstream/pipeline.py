"""Glue used by the CLI, the scripts and the acceptance tests: dataset
construction, the two training stages, and stream-based evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .denoiser import Denoiser, PromptVocab
from .metrics import area_under_jerk, iis_som, jerk_profile, peak_jerk, toy_fid
from .motion import CLASSES, MotionSequence, NearestCentroid, PromptSchedule, gen_schedule_clip, gen_synthetic
from .numeric import Rng
from .streaming import StreamEngine, run_stream
from .training import DenoiserTrainConfig, DenoiserTrainer, LatentPool, MetricsLog
from .vae import CausalVAE, TrainLog, VaeTrainer

log = logging.getLogger(__name__)

EVAL_SCHEDULE = PromptSchedule([(0, "walk"), (200, "run"), (400, "wave"), (600, "stand")])
EVAL_FRAMES = 800
SEGMENT = 40   # frames per toy-FID segment (an integer number of periods for every class)
SETTLE = 40    # frames skipped after each prompt change before cutting segments
MIN_SPAN = 32


def build_dataset(cfg: RunConfig, rng: Rng) -> list[MotionSequence]:
    """``per_class`` clips per class; a ``multi_fraction`` share of them chain
    the class with one or two others so transitions are seen in training."""
    d = cfg.data
    out = []
    for ci, cls in enumerate(d.classes):
        for j in range(d.per_class):
            r = rng.fork("clip", cls, j)
            if len(d.classes) > 1 and r.uniform(()) < d.multi_fraction:
                n_spans = 2 + int(r.integers(2, ()))
                others = [c for c in d.classes if c != cls]
                chain = [cls]
                for _ in range(n_spans - 1):
                    pool = [c for c in others if c != chain[-1]]
                    chain.append(pool[int(r.integers(len(pool), ()))])
                cuts = np.sort(r.integers(d.n_frames - 2 * MIN_SPAN * (n_spans - 1) + 1, (n_spans - 1,)))
                bounds = [0] + [int(c) + MIN_SPAN * (2 * i + 1) for i, c in enumerate(cuts)] + [d.n_frames]
                spans = [b - a for a, b in zip(bounds, bounds[1:])]
                out.append(gen_schedule_clip(r.fork("gen"), chain, spans, crossfade=d.crossfade))
            else:
                out.append(gen_synthetic(r.fork("gen"), cls, d.n_frames))
    return out


def config_digest(cfg: RunConfig, *sections: str) -> str:
    d = cfg.to_dict()
    d.pop("out_dir")
    if sections:
        d = {k: d[k] for k in ("seed",) + sections}
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def train_vae_stage(cfg: RunConfig, dataset, rng: Rng | None = None, vae: CausalVAE | None = None,
                    steps: int | None = None) -> tuple[CausalVAE, TrainLog]:
    rng = rng or Rng(cfg.seed).fork("vae")
    vae = vae or CausalVAE(cfg.vae_config(), rng.fork("init"))
    trainer = VaeTrainer(vae, rng.fork("train"), lr=cfg.vae.lr, batch=cfg.vae.batch, clip_len=cfg.vae.clip_len)
    n = cfg.vae.steps if steps is None else steps
    trainer.run(dataset, n)
    if n:
        vae.fit_latent_stats(dataset)
    return vae, trainer.log


def make_denoiser_trainer(cfg: RunConfig, vocab: PromptVocab, fid_hook=None) -> DenoiserTrainer:
    rng = Rng(cfg.seed).fork("denoiser")
    model = Denoiser(cfg.denoiser_config(), vocab, rng.fork("init"))
    s = cfg.denoiser
    tcfg = DenoiserTrainConfig(steps=s.steps, batch=s.batch, lr=s.lr, log_every=s.log_every, fid_every=s.fid_every)
    return DenoiserTrainer(model, cfg.schedule_params(), rng.fork("train"), tcfg, fid_hook)


def train_denoiser_stage(cfg: RunConfig, vae: CausalVAE, dataset) -> tuple[Denoiser, MetricsLog]:
    vocab = PromptVocab(cfg.data.classes)
    pool = LatentPool.from_sequences(vae, dataset, vocab, cfg.schedule.K)
    trainer = make_denoiser_trainer(cfg, vocab)
    trainer.run(pool, cfg.denoiser.steps)
    return trainer.model, trainer.log


@dataclass
class TrainedModels:
    vae: CausalVAE
    denoiser: Denoiser
    vae_log: TrainLog | None = None
    denoiser_log: MetricsLog | None = None


def train_all(cfg: RunConfig, cache_dir=None) -> TrainedModels:
    """Both stages, reusing checkpoints in ``cache_dir`` keyed by config digest."""
    vae_path = den_path = None
    if cache_dir is not None:
        cache = Path(cache_dir)
        cache.mkdir(parents=True, exist_ok=True)
        vae_path = cache / f"vae-{config_digest(cfg, 'data', 'vae')}.fsck"
        den_path = cache / f"denoiser-{config_digest(cfg)}.fsck"
    dataset = None
    if vae_path is not None and vae_path.exists():
        vae, _, _ = CausalVAE.load(vae_path)
        vae_log = None
    else:
        dataset = build_dataset(cfg, Rng(cfg.seed).fork("data"))
        vae, vae_log = train_vae_stage(cfg, dataset)
        if vae_path is not None:
            vae.save(vae_path)
    if den_path is not None and den_path.exists():
        den, _, _ = Denoiser.load(den_path)
        den_log = None
    else:
        dataset = dataset or build_dataset(cfg, Rng(cfg.seed).fork("data"))
        den, den_log = train_denoiser_stage(cfg, vae, dataset)
        if den_path is not None:
            den.save(den_path)
    return TrainedModels(vae, den, vae_log, den_log)


# ---------------------------------------------------------------- evaluation

def fit_classifier(classes, n_per_class: int = 100, seed: int = 12345) -> NearestCentroid:
    rng = Rng(seed).fork("classifier")
    seqs, labels = [], []
    for c in classes:
        for j in range(n_per_class):
            seqs.append(gen_synthetic(rng.fork(c, j), c, SEGMENT))
            labels.append(c)
    return NearestCentroid.fit(seqs, labels)


def frame_labels(schedule: PromptSchedule, n: int) -> list[str]:
    return [schedule.prompt_at(i) for i in range(n)]


def frame_accuracy(clf: NearestCentroid, seq: MotionSequence, schedule: PromptSchedule) -> float:
    pred = clf.predict_frames(seq, window=SEGMENT)
    truth = frame_labels(schedule, len(seq))
    return float(np.mean([p == t for p, t in zip(pred, truth)]))


def span_segments(seq: MotionSequence, schedule: PromptSchedule, settle: int = SETTLE,
                  seg: int = SEGMENT) -> list[MotionSequence]:
    bounds = [f for f, _ in schedule.entries] + [len(seq)]
    out = []
    for a, b in zip(bounds, bounds[1:]):
        for lo in range(a + settle, b - seg + 1, seg):
            out.append(MotionSequence(seq.frames[lo:lo + seg], fps=seq.fps))
    return out


def reference_segments(classes, n: int, seed: int = 777, seg: int = SEGMENT) -> list[MotionSequence]:
    rng = Rng(seed).fork("reference")
    return [gen_synthetic(rng.fork(i), classes[i % len(classes)], seg) for i in range(n)]


def noise_segments(n: int, D: int = 16, seed: int = 999, seg: int = SEGMENT) -> list[MotionSequence]:
    rng = Rng(seed).fork("noise-seq")
    return [MotionSequence(rng.fork(i).randn((seg, D))) for i in range(n)]


def generate_streams(models: TrainedModels, schedule: PromptSchedule, n_frames: int, seeds,
                     n_s: float = 4.0, dt: float = 0.05) -> list[MotionSequence]:
    out = []
    for s in seeds:
        engine = StreamEngine(models.denoiser, models.vae, n_s=n_s, dt=dt, seed=int(s))
        seq, _ = run_stream(engine, schedule, n_frames)
        out.append(seq)
    return out


def evaluate_streams(streams: list[MotionSequence], schedule: PromptSchedule, n_reference: int = 400) -> dict:
    classes = list(dict.fromkeys(p for _, p in schedule.entries))
    clf = fit_classifier(CLASSES)
    acc = [frame_accuracy(clf, s, schedule) for s in streams]
    samples = [seg for s in streams for seg in span_segments(s, schedule)]
    ref = reference_segments(classes, n_reference)
    fid = toy_fid(samples, ref)
    noise_fid = toy_fid(noise_segments(len(samples)), ref)
    pj = [peak_jerk(jerk_profile(s)) for s in streams]
    auj = [area_under_jerk(jerk_profile(s)) for s in streams]
    return {
        "frame_accuracy": float(np.mean(acc)),
        "frame_accuracy_min": float(np.min(acc)),
        "toy_fid": fid,
        "toy_fid_noise": noise_fid,
        "fid_ratio": fid / noise_fid if noise_fid > 0 else float("inf"),
        "pj": float(np.mean(pj)),
        "auj": float(np.mean(auj)),
        "iis_som": iis_som(fid, float(np.mean(pj))),
        "n_streams": len(streams),
        "n_segments": len(samples),
    }
