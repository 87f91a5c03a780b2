"""Motion sequences, the procedural dataset, and motion/prompt file I/O.

Motion files (FSMO1): ``b"FSMO1"``, a little-endian uint32 header length, a
JSON header ``{"fps", "D", "n_frames"}`` (plus an optional ``"prompts"``
list), then ``n_frames * D`` little-endian float32 values, frame-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MotionFormatError, PromptError
from .numeric.rng import Rng

MAGIC = b"FSMO1"
DEFAULT_FPS = 20.0
DEFAULT_D = 16
CLASSES = ("walk", "run", "wave", "turn", "stand")
JITTER = 0.01
REST_AMPLITUDE = 0.05  # below this mean |amplitude| a window counts as at rest


@dataclass
class MotionSequence:
    frames: np.ndarray  # (n_frames, D) float32
    fps: float = DEFAULT_FPS
    prompts: list[tuple[int, str]] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise MotionFormatError(f"frames must be (n_frames, D), got {self.frames.shape}")
        if not 20.0 <= self.fps <= 60.0:
            raise MotionFormatError(f"fps must lie in [20, 60], got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.n_frames

    def __eq__(self, other) -> bool:
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (self.fps == other.fps and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames) and self.prompts == other.prompts)


@dataclass
class PromptSchedule:
    entries: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        self.entries = [(int(f), str(p)) for f, p in self.entries]
        validate_entries(self.entries)

    def prompt_at(self, frame: int) -> str:
        """Prompt of the latest entry starting at or before ``frame``."""
        current = None
        for start, prompt in self.entries:
            if start > frame:
                break
            current = prompt
        if current is None:
            raise PromptError(f"no prompt covers frame {frame}")
        return current

    def prompts(self) -> list[str]:
        return [p for _, p in self.entries]


def validate_entries(entries) -> None:
    if not entries or entries[0][0] != 0:
        raise PromptError("schedule must cover frame 0")
    for (a, _), (b, _) in zip(entries, entries[1:]):
        if b <= a:
            raise PromptError(f"schedule frames must be strictly increasing, got {a} then {b}")


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class ClassSpec:
    freq: float        # Hz
    amp: float
    phase_step: float  # phase offset between neighbouring channels (rad)
    weights: str       # channel weighting pattern


CLASS_SPECS = {
    "walk": ClassSpec(1.0, 1.0, np.pi / 4, "legs"),
    "run": ClassSpec(2.0, 1.6, np.pi / 4, "legs"),
    "wave": ClassSpec(1.5, 0.5, np.pi / 8, "arms"),
    "turn": ClassSpec(0.5, 0.8, np.pi / 2, "even"),
    "stand": ClassSpec(0.0, 0.0, 0.0, "even"),
}


def rest_pose(D: int) -> np.ndarray:
    return 0.5 * np.sin(np.arange(D) * 0.7)


def _channel_weights(pattern: str, D: int) -> np.ndarray:
    c = np.arange(D)
    if pattern == "legs":
        return np.where(c < D // 2, 1.2, 0.6)
    if pattern == "arms":
        return np.where(c >= D // 2, 1.6, 0.3)
    return np.ones(D)


def gen_synthetic(rng: Rng, cls: str, n_frames: int, D: int = DEFAULT_D,
                  fps: float = DEFAULT_FPS) -> MotionSequence:
    """Procedural motion clip for one class.

    Every channel is a sinusoid at the class frequency with a class-specific
    channel phase pattern and weighting around a shared rest pose. Per clip
    the phase is random and the amplitude is scaled by U(0.9, 1.1); all
    classes carry N(0, 0.01^2) jitter.
    """
    if cls not in CLASS_SPECS:
        raise ValueError(f"unknown motion class {cls!r}; expected one of {CLASSES}")
    if n_frames < 8:
        raise ValueError(f"n_frames must be >= 8, got {n_frames}")
    spec = CLASS_SPECS[cls]
    phase0 = rng.uniform((), 0.0, 2 * np.pi)
    amp = spec.amp * rng.uniform((), 0.9, 1.1)
    t = np.arange(n_frames)[:, None] / fps
    c = np.arange(D)[None, :]
    w = _channel_weights(spec.weights, D)[None, :]
    x = rest_pose(D)[None, :] + amp * w * np.sin(2 * np.pi * spec.freq * t + phase0 + spec.phase_step * c)
    x = x + JITTER * rng.randn((n_frames, D), dtype=np.float64)
    return MotionSequence(x.astype(np.float32), fps=fps, prompts=[(0, cls)])


def splice(a: MotionSequence, b: MotionSequence, crossfade: int) -> MotionSequence:
    """Join ``a`` then ``b``, linearly blending ``crossfade`` overlapping frames."""
    if a.D != b.D or a.fps != b.fps:
        raise ValueError("splice needs matching D and fps")
    if crossfade < 0 or crossfade > min(len(a), len(b)):
        raise ValueError(f"crossfade {crossfade} longer than an input ({len(a)}, {len(b)})")
    head = a.frames[: len(a) - crossfade].astype(np.float64)
    tail = b.frames[crossfade:].astype(np.float64)
    w = (np.arange(1, crossfade + 1) / (crossfade + 1))[:, None]
    mid = (1 - w) * a.frames[len(a) - crossfade:] + w * b.frames[:crossfade]
    frames = np.concatenate([head, mid, tail]).astype(np.float32)
    prompts = None
    if a.prompts is not None and b.prompts is not None:
        offset = len(a) - crossfade
        prompts = list(a.prompts) + [(s + offset, p) for s, p in b.prompts]
        prompts = _coalesce(prompts)
    return MotionSequence(frames, fps=a.fps, prompts=prompts)


def _coalesce(entries):
    out = []
    for start, p in entries:
        if out and out[-1][1] == p:
            continue
        if out and out[-1][0] == start:
            out[-1] = (start, p)
            continue
        out.append((start, p))
    return out


def gen_schedule_clip(rng: Rng, classes: list[str], span_lengths: list[int], D: int = DEFAULT_D,
                      fps: float = DEFAULT_FPS, crossfade: int = 8) -> MotionSequence:
    """Concatenate per-class clips with crossfades; the prompt label of each
    span starts where its crossfade begins."""
    seq = None
    for cls, n in zip(classes, span_lengths):
        part = gen_synthetic(rng.fork("span", len(seq) if seq else 0, cls), cls, n + crossfade, D, fps)
        if seq is None:
            seq = MotionSequence(part.frames[crossfade:], fps=fps, prompts=[(0, cls)])
        else:
            seq = splice(seq, part, crossfade)
    return seq


# ---------------------------------------------------------------- features

def dominant_frequency(frames: np.ndarray, fps: float, pad_to: int = 640) -> float:
    """Peak of the channel-summed power spectrum (Hz), 0 for windows at rest."""
    x = np.asarray(frames, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    if mean_amplitude(frames) < REST_AMPLITUDE:
        return 0.0
    n = max(pad_to, len(x))
    power = (np.abs(np.fft.rfft(x * np.hanning(len(x))[:, None], n=n, axis=0)) ** 2).sum(axis=1)
    power[0] = 0.0
    return float(np.argmax(power) * fps / n)


def mean_amplitude(frames: np.ndarray) -> float:
    x = np.asarray(frames, dtype=np.float64)
    return float(np.abs(x - x.mean(axis=0, keepdims=True)).mean())


def class_features(frames: np.ndarray, fps: float) -> np.ndarray:
    return np.array([dominant_frequency(frames, fps), mean_amplitude(frames)])


class NearestCentroid:
    """Nearest-centroid classifier on (dominant frequency, mean |amplitude|)."""

    def __init__(self, centroids: dict[str, np.ndarray]):
        self.labels = list(centroids)
        self.centroids = np.stack([centroids[c] for c in self.labels])

    @classmethod
    def fit(cls, seqs: list[MotionSequence], labels: list[str]) -> "NearestCentroid":
        feats = np.stack([class_features(s.frames, s.fps) for s in seqs])
        labels = np.asarray(labels)
        return cls({c: feats[labels == c].mean(axis=0) for c in dict.fromkeys(labels.tolist())})

    def predict_features(self, feats: np.ndarray) -> list[str]:
        d = ((feats[:, None, :] - self.centroids[None]) ** 2).sum(-1)
        return [self.labels[i] for i in d.argmin(axis=1)]

    def predict(self, seq: MotionSequence) -> str:
        return self.predict_features(class_features(seq.frames, seq.fps)[None])[0]

    def predict_frames(self, seq: MotionSequence, window: int = 40) -> list[str]:
        """Label every frame from the features of a window centred on it."""
        n = len(seq)
        half = window // 2
        feats = []
        for i in range(n):
            lo = min(max(0, i - half), max(0, n - window))
            feats.append(class_features(seq.frames[lo:lo + window], seq.fps))
        return self.predict_features(np.stack(feats))


# ---------------------------------------------------------------- file I/O

def write_motion(seq: MotionSequence, path) -> None:
    header = {"fps": seq.fps, "D": seq.D, "n_frames": seq.n_frames}
    if seq.prompts is not None:
        header["prompts"] = [[s, p] for s, p in seq.prompts]
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        f.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def read_motion(path) -> MotionSequence:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise MotionFormatError(f"{path}: bad magic {raw[:5]!r}, expected {MAGIC!r}")
    if len(raw) < 9:
        raise MotionFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[5:9])
    try:
        header = json.loads(raw[9:9 + hlen])
        fps, D, n = float(header["fps"]), int(header["D"]), int(header["n_frames"])
    except (ValueError, KeyError) as exc:
        raise MotionFormatError(f"{path}: unreadable header ({exc})") from exc
    payload = raw[9 + hlen:]
    expected = n * D * 4
    if len(payload) != expected:
        if len(payload) % 4 == 0 and n and len(payload) // 4 % n == 0 and len(payload) // 4 // n != D:
            raise MotionFormatError(
                f"{path}: rows hold {len(payload) // 4 // n} floats but header says D={D} "
                f"(expected {expected} bytes, got {len(payload)})")
        raise MotionFormatError(f"{path}: payload truncated, expected {expected} bytes, got {len(payload)}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(n, D).astype(np.float32)
    prompts = [(int(s), str(p)) for s, p in header["prompts"]] if "prompts" in header else None
    return MotionSequence(frames, fps=fps, prompts=prompts)


def read_prompt_schedule(path) -> PromptSchedule:
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            entries.append((int(obj["frame"]), str(obj["prompt"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise PromptError(f"{path}:{lineno}: bad schedule line ({exc})") from exc
    return PromptSchedule(entries)


def write_prompt_schedule(schedule: PromptSchedule, path) -> None:
    lines = [json.dumps({"frame": f, "prompt": p}) for f, p in schedule.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
