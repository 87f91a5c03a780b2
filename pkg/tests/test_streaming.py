import threading

import numpy as np
import pytest

from floodstream.denoiser import Denoiser, DenoiserConfig, PromptVocab
from floodstream.errors import PromptError
from floodstream.motion import CLASSES, PromptSchedule
from floodstream.numeric import Rng
from floodstream.streaming import StreamEngine, frame_noise, run_stream

import checks
from oracles import offline_replay


def test_streaming_matches_offline_replay(small_denoiser, small_vae):
    res = checks.streaming_equivalence(small_denoiser, small_vae, n_seeds=3, n_latents=20, seed=5)
    assert res.passed, res.detail


def test_streaming_matches_offline_replay_other_rates(small_denoiser, small_vae):
    sched = PromptSchedule([(0, "walk"), (30, "wave")])
    for n_s, dt in [(2.0, 0.1), (3.0, 0.25), (6.0, 0.05)]:
        eng = StreamEngine(small_denoiser, small_vae, n_s=n_s, dt=dt, seed=11)
        seq, _ = run_stream(eng, sched, 64)
        z_ref, x_ref = offline_replay(small_denoiser, small_vae, sched, 16, 11, n_s=n_s, dt=dt)
        assert np.array_equal(np.stack(eng.committed_latents[:16]), z_ref)
        assert np.array_equal(seq.frames, x_ref)


def test_causal_mode_matches_offline_replay(small_denoiser, small_vae):
    cfg = small_denoiser.config
    model = Denoiser(DenoiserConfig(layers=cfg.layers, heads=cfg.heads, model_dim=cfg.model_dim,
                                    context_horizon=cfg.context_horizon, attn_mode="causal_window"),
                     small_denoiser.vocab)
    model.p.load(small_denoiser.p.tensors())
    res = checks.streaming_equivalence(model, small_vae, n_seeds=2, n_latents=16, seed=9)
    assert res.passed, res.detail


def test_zero_velocity_commits_the_initial_noise(small_vae):
    untrained = Denoiser(DenoiserConfig(layers=1, heads=2, model_dim=8), PromptVocab(CLASSES), Rng(0))
    eng = StreamEngine(untrained, small_vae, seed=3)
    run_stream(eng, PromptSchedule([(0, "walk")]), 40)
    for k, z in enumerate(eng.committed_latents):
        assert np.array_equal(z, frame_noise(3, k))


def test_window_sizes_and_ring(small_denoiser, small_vae):
    eng = StreamEngine(small_denoiser, small_vae)
    eng.push_prompt("walk", 0)
    for _ in range(200):
        rep = eng.step()
    lat = eng.latency
    assert set(lat.window_sizes) <= {3, 4} and set(lat.denoised_counts) == {4}
    assert lat.max_frames_in_flight <= eng.capacity
    assert lat.warmup_steps == 20 and len(lat.step_ms) == 180
    assert rep.newly_committed.shape[1] == 16


def test_poll_returns_each_frame_once(small_denoiser, small_vae):
    eng = StreamEngine(small_denoiser, small_vae, seed=1)
    eng.push_prompt("run", 0)
    chunks = []
    for _ in range(60):
        eng.step()
        chunks.append(eng.poll())
    assert len(eng.poll()) == 0
    assert sum(len(c) for c in chunks) == 4 * len(eng.committed_latents)


def test_push_errors(small_denoiser, small_vae):
    eng = StreamEngine(small_denoiser, small_vae)
    with pytest.raises(PromptError, match="vocabulary"):
        eng.push_prompt("dance", 0)
    with pytest.raises(PromptError, match="no prompt"):
        eng.step()
    eng.push_prompt("walk", 0)
    for _ in range(40):
        eng.step()
    assert eng.watermark_motion > 0
    with pytest.raises(PromptError, match="already committed"):
        eng.push_prompt("run", eng.watermark_motion - 1)


def test_first_prompt_must_start_at_zero(small_denoiser, small_vae):
    eng = StreamEngine(small_denoiser, small_vae)
    eng.push_prompt("walk", 8)
    with pytest.raises(PromptError, match="frame 0"):
        eng.step()


def test_later_push_truncates_and_duplicates_coalesce(small_denoiser, small_vae):
    eng = StreamEngine(small_denoiser, small_vae)
    eng.push_prompt("walk", 0)
    eng.push_prompt("run", 100)
    eng.push_prompt("wave", 200)
    eng.push_prompt("stand", 150)
    eng.push_prompt("stand", 180)
    eng.step()
    assert eng.prompt_schedule().entries == [(0, "walk"), (100, "run"), (150, "stand")]


def test_push_from_another_thread(small_denoiser, small_vae):
    """Pushes from a control thread land at step boundaries and match the scripted run."""
    sched = PromptSchedule([(0, "walk"), (48, "wave")])
    ref = StreamEngine(small_denoiser, small_vae, seed=2)
    want, _ = run_stream(ref, sched, 96)

    eng = StreamEngine(small_denoiser, small_vae, seed=2)
    eng.push_prompt("walk", 0)
    t = threading.Thread(target=eng.push_prompt, args=("wave", 48))
    t.start()
    t.join()
    got = []
    while sum(len(g) for g in got) < 96:
        eng.step()
        got.append(eng.poll())
    assert np.array_equal(np.concatenate(got)[:96], want.frames)


def test_seed_changes_output(small_denoiser, small_vae):
    sched = PromptSchedule([(0, "walk")])
    a, _ = run_stream(StreamEngine(small_denoiser, small_vae, seed=0), sched, 32)
    b, _ = run_stream(StreamEngine(small_denoiser, small_vae, seed=1), sched, 32)
    c, _ = run_stream(StreamEngine(small_denoiser, small_vae, seed=0), sched, 32)
    assert a == c and a != b


def test_latency_report_json(small_denoiser, small_vae):
    _, lat = run_stream(StreamEngine(small_denoiser, small_vae), PromptSchedule([(0, "walk")]), 40)
    js = lat.to_json()
    assert js["steps"] + js["warmup_steps"] == 20 + 5 * 9
    assert js["p50_ms"] <= js["p99_ms"] <= js["max_ms"]
    assert set(js["denoised_counts"]) == {"4"}
