import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from floodstream import numeric as nm
from floodstream.denoiser import ACTIVE, Denoiser, DenoiserConfig, PromptVocab
from floodstream.errors import DivergenceError
from floodstream.motion import CLASSES
from floodstream.numeric import Rng
from floodstream.schedule import ScheduleKind, ScheduleParams, corrupt
from floodstream.streaming import euler_step
from floodstream.training import (DenoiserTrainConfig, DenoiserTrainer, LatentPool, TrainBatch, batch_masks,
                                  df_loss, make_batch, schedule_kind_of, velocity_target)

import checks
from gradcases import df_loss_case
from oracles import directional_probe, probe_rel_err

VOCAB = PromptVocab(CLASSES)


def _model(seed=0):
    return Denoiser(DenoiserConfig(layers=1, heads=2, model_dim=8, context_horizon=4), VOCAB, Rng(seed))


def _batch(seed=0, K=16):
    rs = np.random.default_rng(seed)
    t = rs.uniform(0.5, 4.0, 3)
    alpha = np.clip(t[:, None] - np.arange(K) / 4.0, 0, 1)
    return TrainBatch(rs.standard_normal((3, K, 4)).astype(np.float32), alpha,
                      rs.standard_normal((3, K, 4)).astype(np.float32), rs.integers(0, 5, (3, K)))


def test_euler_identity():
    res = checks.euler_identity(n=200)
    assert res.passed, res.detail


@given(st.floats(0.0, 1.0))
def test_euler_from_alpha_to_one(a):
    rs = np.random.default_rng(0)
    z, eps = rs.standard_normal((2, 4)), rs.standard_normal((2, 4))
    x = corrupt(z, np.full(2, a), eps)
    assert np.allclose(euler_step(x, velocity_target(z, eps), np.full(2, 1.0 - a)), z, atol=1e-6)


def test_perfect_predictor_has_zero_loss():
    b = _batch()
    target = velocity_target(b.z, b.noise)
    loss = df_loss(b, _model(), predictor=lambda *args: nm.constant(target))
    assert float(loss.value) == 0.0


def test_zero_predictor_loss_is_target_energy():
    b = _batch(1)
    roles, _, _ = batch_masks(b, _model())
    act = roles == ACTIVE
    want = ((b.z.astype(np.float64) - b.noise) ** 2).sum(axis=-1)[act].mean()
    got = float(df_loss(b, _model(), predictor=lambda x, *a: nm.constant(np.zeros_like(x))).value)
    assert got == pytest.approx(want, rel=1e-5)


def test_only_active_frames_count():
    b = _batch(2)
    roles, _, _ = batch_masks(b, _model())
    target = velocity_target(b.z, b.noise)
    junk = np.where((roles == ACTIVE)[..., None], target, 1e3).astype(np.float32)
    assert float(df_loss(b, _model(), predictor=lambda *a: nm.constant(junk)).value) == 0.0


def test_df_loss_gradient():
    for seed in range(3):
        arrays, build = df_loss_case(seed)
        assert probe_rel_err(*directional_probe(build, arrays, seed)) < 1e-4


def _pool(small_vae, small_data):
    return LatentPool.from_sequences(small_vae, small_data, VOCAB, 48)


def test_pool_labels(small_vae, small_data):
    pool = _pool(small_vae, small_data)
    assert pool.z.shape == (len(small_data), 48, 4)
    assert pool.prompt_ids.max() < len(VOCAB)


def test_loss_decreases(small_vae, small_data):
    pool = _pool(small_vae, small_data)
    model = _model(1)
    held_out = make_batch(pool, ScheduleParams(), Rng(99), 64)
    before = float(df_loss(held_out, model).value)
    DenoiserTrainer(model, ScheduleParams(), Rng(2), DenoiserTrainConfig(batch=8, lr=3e-3)).run(pool, 150)
    assert float(df_loss(held_out, model).value) < 0.8 * before


def test_divergence_raises(small_vae, small_data):
    pool = _pool(small_vae, small_data)
    tr = DenoiserTrainer(_model(1), ScheduleParams(), Rng(2),
                         DenoiserTrainConfig(batch=4, lr=0.5, divergence_factor=1.5))
    with pytest.raises(DivergenceError) as err:
        tr.run(pool, 200)
    assert err.value.step > 0


def test_batches_are_deterministic(small_vae, small_data):
    pool = _pool(small_vae, small_data)
    a = make_batch(pool, ScheduleParams(), Rng(7), 4)
    b = make_batch(pool, ScheduleParams(), Rng(7), 4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.prompt_ids, b.prompt_ids)


def test_checkpoint_records_schedule_and_resumes(tmp_path, small_vae, small_data):
    pool = _pool(small_vae, small_data)
    cfg = DenoiserTrainConfig(batch=4)
    tr = DenoiserTrainer(_model(3), ScheduleParams(kind=ScheduleKind.RANDOM), Rng(4), cfg)
    tr.run(pool, 4)
    tr.save(tmp_path / "d.fsck")
    model, meta, tensors = Denoiser.load(tmp_path / "d.fsck")
    assert schedule_kind_of(meta) is ScheduleKind.RANDOM
    back = DenoiserTrainer(model, ScheduleParams(kind=ScheduleKind.RANDOM), Rng(4), cfg)
    back.restore(meta, tensors)
    back.run(pool, 3)
    assert back.step == 7 and [r["step"] for r in back.log.rows] == [5, 6, 7]


def test_metrics_csv(tmp_path, small_vae, small_data):
    tr = DenoiserTrainer(_model(), ScheduleParams(), Rng(0), DenoiserTrainConfig(batch=2))
    tr.run(_pool(small_vae, small_data), 2)
    tr.log.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,grad_norm,toy_fid" and len(lines) == 3
