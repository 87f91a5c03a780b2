import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floodstream.errors import MotionFormatError, PromptError
from floodstream.motion import (CLASSES, MAGIC, MotionSequence, NearestCentroid, PromptSchedule,
                                dominant_frequency, gen_schedule_clip, gen_synthetic, read_motion,
                                read_prompt_schedule, splice, write_motion, write_prompt_schedule)
from floodstream.numeric import Rng


def test_stand_is_rest_plus_jitter():
    s = gen_synthetic(Rng(0), "stand", 200)
    dev = s.frames - s.frames.mean(axis=0)
    assert abs(dev.std() - 0.01) < 0.002


def test_run_is_twice_walk():
    w = dominant_frequency(gen_synthetic(Rng(1), "walk", 192).frames, 20)
    r = dominant_frequency(gen_synthetic(Rng(2), "run", 192).frames, 20)
    assert w == 1.0 and r == 2.0


def test_generation_is_deterministic():
    assert gen_synthetic(Rng(5), "wave", 64) == gen_synthetic(Rng(5), "wave", 64)
    assert gen_synthetic(Rng(5), "wave", 64) != gen_synthetic(Rng(6), "wave", 64)


def test_generation_errors():
    with pytest.raises(ValueError, match="unknown"):
        gen_synthetic(Rng(0), "dance", 64)
    with pytest.raises(ValueError):
        gen_synthetic(Rng(0), "walk", 7)


def test_fps_range():
    with pytest.raises(MotionFormatError):
        MotionSequence(np.zeros((4, 2)), fps=10)
    MotionSequence(np.zeros((4, 2)), fps=60)


def test_nearest_centroid_separates_500():
    rng = Rng(11)
    seqs, labels = [], []
    for c in CLASSES:
        for j in range(100):
            seqs.append(gen_synthetic(rng.fork(c, j), c, 192))
            labels.append(c)
    clf = NearestCentroid.fit(seqs, labels)
    assert [clf.predict(s) for s in seqs] == labels


def test_splice_zero_crossfade_is_concat():
    a, b = gen_synthetic(Rng(0), "walk", 20), gen_synthetic(Rng(1), "run", 30)
    s = splice(a, b, 0)
    assert np.array_equal(s.frames, np.concatenate([a.frames, b.frames]))
    assert s.prompts == [(0, "walk"), (20, "run")]


def test_splice_blend_weights():
    a = MotionSequence(np.zeros((10, 1)))
    b = MotionSequence(np.ones((10, 1)))
    s = splice(a, b, 3)
    assert len(s) == 17
    assert np.allclose(s.frames[7:10, 0], [0.25, 0.5, 0.75])


def test_splice_same_prompt_coalesces():
    a, b = gen_synthetic(Rng(0), "walk", 20), gen_synthetic(Rng(1), "walk", 20)
    assert splice(a, b, 4).prompts == [(0, "walk")]


def test_splice_too_long():
    a, b = gen_synthetic(Rng(0), "walk", 10), gen_synthetic(Rng(1), "run", 30)
    with pytest.raises(ValueError):
        splice(a, b, 11)


def test_schedule_clip_labels():
    s = gen_schedule_clip(Rng(0), ["walk", "wave", "stand"], [50, 60, 40])
    assert len(s) == 150
    # each label starts where its 8-frame crossfade begins
    assert s.prompts == [(0, "walk"), (42, "wave"), (102, "stand")]


def test_prompt_schedule_lookup():
    p = PromptSchedule([(0, "walk"), (40, "wave")])
    assert p.prompt_at(39) == "walk" and p.prompt_at(40) == "wave" and p.prompt_at(10**6) == "wave"


def test_prompt_schedule_validation():
    with pytest.raises(PromptError, match="cover frame 0"):
        PromptSchedule([])
    with pytest.raises(PromptError, match="increasing"):
        PromptSchedule([(0, "walk"), (40, "wave"), (30, "run")])


# ---------------------------------------------------------------- files

@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, width=32)),
       st.sampled_from([20.0, 30.0, 60.0]))
def test_motion_round_trip(tmp_path_factory, frames, fps):
    path = tmp_path_factory.mktemp("m") / "x.fsmo"
    seq = MotionSequence(frames, fps=fps, prompts=[(0, "walk")])
    write_motion(seq, path)
    assert read_motion(path) == seq


def test_motion_truncated(tmp_path):
    write_motion(gen_synthetic(Rng(0), "walk", 10), tmp_path / "a.fsmo")
    raw = (tmp_path / "a.fsmo").read_bytes()
    (tmp_path / "b.fsmo").write_bytes(raw[:-6])
    with pytest.raises(MotionFormatError, match="expected 640 bytes, got 634"):
        read_motion(tmp_path / "b.fsmo")


def test_motion_row_width_mismatch(tmp_path):
    def write(path, D_header, rows, width):
        hb = json.dumps({"fps": 20.0, "D": D_header, "n_frames": rows}).encode()
        payload = np.zeros((rows, width), dtype="<f4").tobytes()
        path.write_bytes(MAGIC + len(hb).to_bytes(4, "little") + hb + payload)
    write(tmp_path / "ok.fsmo", 263, 3, 263)
    assert read_motion(tmp_path / "ok.fsmo").D == 263
    write(tmp_path / "bad.fsmo", 263, 3, 262)
    with pytest.raises(MotionFormatError, match="D=263"):
        read_motion(tmp_path / "bad.fsmo")


def test_motion_bad_magic(tmp_path):
    (tmp_path / "x.fsmo").write_bytes(b"XXXXX1234")
    with pytest.raises(MotionFormatError, match="magic"):
        read_motion(tmp_path / "x.fsmo")


def test_prompt_schedule_file(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"frame": 0, "prompt": "walk"}\n{"frame": 40, "prompt": "wave"}\n')
    s = read_prompt_schedule(p)
    assert s.entries == [(0, "walk"), (40, "wave")]
    write_prompt_schedule(s, tmp_path / "t.jsonl")
    assert read_prompt_schedule(tmp_path / "t.jsonl") == s


def test_prompt_schedule_file_errors(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"frame": 0, "prompt": "walk"}\n{"frame": 40, "prompt": "wave"}\n{"frame": 30, "prompt": "run"}\n')
    with pytest.raises(PromptError, match="increasing"):
        read_prompt_schedule(p)
    p.write_text("")
    with pytest.raises(PromptError, match="schedule must cover frame 0"):
        read_prompt_schedule(p)
