import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from floodstream.config import RunConfig
from floodstream.denoiser import Denoiser, DenoiserConfig, PromptVocab
from floodstream.motion import CLASSES, gen_synthetic
from floodstream.numeric import Rng
from floodstream.pipeline import build_dataset, train_all, train_vae_stage
from floodstream.schedule import ScheduleParams
from floodstream.training import DenoiserTrainConfig, DenoiserTrainer, LatentPool
from floodstream.vae import CausalVAE, VaeConfig

settings.register_profile("repo", deadline=None, max_examples=60)
settings.load_profile("repo")

CACHE = Path(os.environ.get("FLOODSTREAM_CACHE", Path(__file__).resolve().parents[1] / ".cache"))


@pytest.fixture(scope="session")
def small_data():
    cfg = RunConfig()
    cfg.data.per_class = 8
    return build_dataset(cfg, Rng(3).fork("data"))


@pytest.fixture(scope="session")
def small_vae(small_data):
    cfg = RunConfig()
    cfg.vae.hidden = 16
    cfg.vae.steps = 150
    vae, _ = train_vae_stage(cfg, small_data, Rng(3).fork("vae"))
    return vae


@pytest.fixture(scope="session")
def small_denoiser(small_vae, small_data):
    """Two-layer model trained briefly so its output head is no longer zero."""
    vocab = PromptVocab(CLASSES)
    model = Denoiser(DenoiserConfig(layers=2, heads=2, model_dim=16, context_horizon=6), vocab, Rng(5))
    pool = LatentPool.from_sequences(small_vae, small_data, vocab, 48)
    trainer = DenoiserTrainer(model, ScheduleParams(), Rng(6), DenoiserTrainConfig(batch=8, lr=3e-3))
    trainer.run(pool, 40)
    return model


@pytest.fixture(scope="session")
def pinned():
    """Models at the pinned budget (VAE 2k steps, denoiser 5k steps), cached on disk."""
    return train_all(RunConfig(), CACHE)


@pytest.fixture(scope="session")
def pinned_causal():
    cfg = RunConfig()
    cfg.denoiser.attn_mode = "causal_window"
    return train_all(cfg, CACHE)


@pytest.fixture(scope="session")
def pinned_random():
    cfg = RunConfig()
    cfg.schedule.kind = "random"
    return train_all(cfg, CACHE)
