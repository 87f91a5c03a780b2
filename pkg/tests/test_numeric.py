import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from floodstream import numeric as nm
from floodstream.errors import MotionFormatError, NonFiniteError, ShapeError
from floodstream.numeric.layers import causal_indices

from gradcases import OP_CASES
from oracles import directional_probe, loop_matmul, probe_rel_err

# Published SplitMix64 outputs for seed 1234567.
SPLITMIX_1234567 = [6457827717110365317, 3203168211198807973, 9817491932198370423,
                    4593380528125082431, 16408922859458223821]


# ---------------------------------------------------------------- rng

def test_splitmix_known_answer():
    assert [int(x) for x in nm.Rng(1234567).bits(5)] == SPLITMIX_1234567


def test_rng_counter_is_positional():
    a = nm.Rng(9)
    first = a.bits(3)
    rest = a.bits(4)
    assert np.array_equal(np.concatenate([first, rest]), nm.Rng(9).bits(7))
    assert np.array_equal(nm.Rng(9, counter=3).bits(4), rest)


def test_fork_is_deterministic_and_distinct():
    r = nm.Rng(1)
    assert np.array_equal(r.fork("noise", 3).randn((4,)), r.fork("noise", 3).randn((4,)))
    assert not np.array_equal(r.fork("noise", 3).randn((4,)), r.fork("noise", 4).randn((4,)))
    assert not np.array_equal(r.fork("a").bits(2), r.fork("b").bits(2))


def test_uniform_range_and_moments():
    u = nm.Rng(2).uniform((20000,))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_randn_moments():
    z = nm.Rng(4).randn((40000,), dtype=np.float64)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02
    assert np.isfinite(z).all()


@given(st.integers(1, 50), st.integers(0, 2**63))
def test_integers_in_range(high, seed):
    x = nm.Rng(seed).integers(high, (64,))
    assert x.min() >= 0 and x.max() < high


def test_permutation():
    p = nm.Rng(0).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


# ---------------------------------------------------------------- tape

@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_probe(name):
    for seed in range(5):
        arrays, build = OP_CASES[name](seed)
        a, n = directional_probe(build, arrays, 100 + seed)
        assert probe_rel_err(a, n) < 1e-4


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
def test_matmul_matches_loop(n, k, m, seed):
    rs = np.random.default_rng(seed)
    a, b = rs.standard_normal((n, k)), rs.standard_normal((k, m))
    with nm.precision(np.float64):
        out = nm.matmul(nm.constant(a), nm.constant(b)).value
    assert np.allclose(out, loop_matmul(a, b), atol=1e-12)


def test_matmul_rows_do_not_depend_on_batch_size():
    rs = np.random.default_rng(0)
    a = rs.standard_normal((37, 64)).astype(np.float32)
    w = rs.standard_normal((64, 64)).astype(np.float32)
    full = nm.matmul(nm.constant(a), nm.constant(w)).value
    for lo, hi in [(0, 1), (5, 9), (30, 37)]:
        part = nm.matmul(nm.constant(a[lo:hi]), nm.constant(w)).value
        assert np.array_equal(part, full[lo:hi])


def test_backward_needs_scalar():
    x = nm.parameter(np.ones(3))
    with pytest.raises(ShapeError):
        nm.backward(nm.mul(x, x))


def test_leaf_grads_accumulate():
    x = nm.parameter(np.array([1.0, 2.0]))
    loss = nm.sum_(nm.mul(x, x))
    nm.backward(loss)
    once = x.grad.copy()
    nm.backward(loss)
    assert np.allclose(x.grad, 2 * once)


def test_stop_gradient_blocks():
    x = nm.parameter(np.array([3.0]))
    y = nm.add(nm.mul(x, x), nm.stop_gradient(nm.mul(x, x)))
    nm.backward(nm.sum_(y))
    assert np.allclose(x.grad, [6.0])


def test_broadcast_rules():
    a = nm.constant(np.ones((2, 3, 4)))
    nm.add(a, nm.constant(np.ones((3, 4))))
    nm.add(a, nm.constant(np.float32(2.0)))
    with pytest.raises(ShapeError):
        nm.add(a, nm.constant(np.ones((2, 1, 4))))
    with pytest.raises(ShapeError):
        nm.matmul(a, nm.constant(np.ones((5, 2))))


def test_exp_clamped():
    out = nm.exp(nm.constant(np.array([1000.0]))).value
    assert np.isfinite(out).all()


def test_precision_context_restores():
    with nm.precision(np.float64):
        assert nm.constant(np.ones(2)).value.dtype == np.float64
    assert nm.constant(np.ones(2)).value.dtype == np.float32


def test_causal_indices_never_look_ahead():
    for stride in (1, 2):
        idx = causal_indices(16, 4, stride)
        u = np.arange(idx.shape[0])
        assert (idx.max(axis=1) <= stride * u + stride - 1).all()
        assert idx.min() >= 0


# ---------------------------------------------------------------- optimizer

def test_adam_first_step_moves_by_lr():
    p = nm.parameter(np.array([1.0, -1.0]))
    opt = nm.Adam({"p": p}, lr=0.1)
    p.grad = np.array([0.5, -2.0], dtype=np.float32)
    opt.step()
    assert np.allclose(p.value, [0.9, -0.9], atol=1e-6)


def test_adam_rejects_nonfinite():
    p = nm.parameter(np.ones(2))
    opt = nm.Adam({"w": p})
    p.grad = np.array([np.nan, 0.0], dtype=np.float32)
    with pytest.raises(NonFiniteError, match="'w'"):
        opt.step()


def test_adam_minimises_quadratic():
    p = nm.parameter(np.array([3.0, -2.0]))
    opt = nm.Adam({"p": p}, lr=0.05)
    for _ in range(400):
        opt.zero_grad()
        nm.backward(nm.sum_(nm.mul(p, p)))
        opt.step()
    assert np.abs(p.value).max() < 0.05


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    rs = np.random.default_rng(1)
    tensors = {"a": rs.standard_normal((3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.float32)}
    nm.save_checkpoint(tmp_path / "c.fsck", tensors, {"step": 7})
    back, meta = nm.load_checkpoint(tmp_path / "c.fsck")
    assert meta == {"step": 7}
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_truncated(tmp_path):
    nm.save_checkpoint(tmp_path / "c.fsck", {"a": np.ones((10, 10), dtype=np.float32)})
    raw = (tmp_path / "c.fsck").read_bytes()
    (tmp_path / "t.fsck").write_bytes(raw[:-8])
    with pytest.raises(MotionFormatError, match="400"):
        nm.load_checkpoint(tmp_path / "t.fsck")


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.fsck").write_bytes(b"NOPE!" + b"\0" * 10)
    with pytest.raises(MotionFormatError):
        nm.load_checkpoint(tmp_path / "x.fsck")
