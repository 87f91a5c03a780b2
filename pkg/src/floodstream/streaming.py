"""Online generation loop.

Per solver step ``i`` (time ``t = i * dt``):

1. drain pending prompt pushes;
2. the solver window is ``[m(t), n(t + dt))``: frames already on the ramp plus
   any that step onto it during this step;
3. predict velocity for the window, attending to up to ``context_horizon``
   committed frames before it;
4. Euler: ``x_k += v_k * (alpha_k(t + dt) - alpha_k(t))``; on the solver grid
   this is ``v * dt`` for every frame strictly inside the ramp;
5. frames reaching alpha == 1 are frozen, decoded incrementally and emitted.

Frame ``k``'s initial noise comes from a substream keyed by ``k``, so a replay
over a full-length buffer sees exactly the same noise.
"""

from __future__ import annotations

import logging
import math
import queue
import time
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .denoiser import Denoiser, build_attention_mask
from .errors import PromptError, ScheduleError, ShapeError
from .motion import MotionSequence, PromptSchedule
from .numeric import Rng
from .schedule import RegionPartition, StepClock
from .vae import DOWNSAMPLE, LATENT_DIM, CausalVAE, IncrementalDecoder

log = logging.getLogger(__name__)

DEFAULT_DT = 0.05
DEFAULT_N_S = 4.0
DEFAULT_BUDGET_MS = 33.0


def euler_step(x: np.ndarray, v: np.ndarray, dalpha) -> np.ndarray:
    """``x + v * dalpha`` per frame, in float64 with one rounding to float32."""
    d = np.asarray(dalpha, dtype=np.float64)
    if d.ndim == 1:
        d = d[:, None]
    return (np.asarray(x, dtype=np.float64) + np.asarray(v, dtype=np.float64) * d).astype(np.float32)


def frame_noise(seed: int, k: int) -> np.ndarray:
    return Rng(seed).fork("noise", k).randn((LATENT_DIM,))


@dataclass
class StepReport:
    step: int
    newly_committed: np.ndarray  # (4 * frames committed this step, D) motion frames
    wall_time: float             # seconds
    window_size: int             # frames with 0 < alpha < 1 at the start of the step
    denoised: int                # frames updated by this step's Euler update
    flops: int


@dataclass
class LatencyReport:
    budget_ms: float
    step_ms: list[float] = field(default_factory=list)
    window_sizes: Counter = field(default_factory=Counter)
    denoised_counts: Counter = field(default_factory=Counter)
    flops: Counter = field(default_factory=Counter)
    max_frames_in_flight: int = 0
    warmup_steps: int = 0  # steps with t < 1, before the ramp is full; not in the stats

    def record(self, rep: StepReport, in_flight: int, warmup: bool = False) -> None:
        if warmup:
            self.warmup_steps += 1
            return
        self.step_ms.append(1000.0 * rep.wall_time)
        self.window_sizes[rep.window_size] += 1
        self.denoised_counts[rep.denoised] += 1
        self.flops[rep.flops] += 1
        self.max_frames_in_flight = max(self.max_frames_in_flight, in_flight)

    @property
    def violations(self) -> int:
        return int(sum(ms > self.budget_ms for ms in self.step_ms))

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.step_ms, q)) if self.step_ms else 0.0

    def to_json(self) -> dict:
        return {
            "p50_ms": self.percentile(50),
            "p99_ms": self.percentile(99),
            "max_ms": max(self.step_ms, default=0.0),
            "budget_ms": self.budget_ms,
            "violations": self.violations,
            "window_sizes": {str(k): v for k, v in sorted(self.window_sizes.items())},
            "denoised_counts": {str(k): v for k, v in sorted(self.denoised_counts.items())},
            "flops_per_step": {str(k): v for k, v in sorted(self.flops.items())},
            "max_frames_in_flight": self.max_frames_in_flight,
            "steps": len(self.step_ms),
            "warmup_steps": self.warmup_steps,
        }


class StreamEngine:
    """Streaming state plus the step loop.

    One control thread may call ``push_prompt`` while one generation thread
    calls ``step``; pushes travel through a queue drained at step boundaries.
    ``poll`` hands committed motion to a single consumer.
    """

    def __init__(self, denoiser: Denoiser, vae: CausalVAE, n_s: float = DEFAULT_N_S,
                 dt: float = DEFAULT_DT, seed: int = 0, frame_budget_ms: float = DEFAULT_BUDGET_MS):
        if not dt > 0:
            raise ScheduleError(f"dt must be positive, got {dt}")
        if len(denoiser.vocab) == 0:
            raise ValueError("denoiser has an empty prompt vocabulary")
        if vae.latent_mean.shape != (LATENT_DIM,):
            raise ValueError("VAE latent statistics do not match the denoiser latent size")
        self.denoiser = denoiser
        self.vae = vae
        self.clock = StepClock(n_s, dt)
        self.seed = seed
        self.horizon = denoiser.config.context_horizon
        self.capacity = self.horizon + math.ceil(n_s) + 2
        self.ring = np.zeros((self.capacity, LATENT_DIM), dtype=np.float32)
        self.filled = 0
        self.step_index = 0
        self.watermark = 0  # committed latent frames
        self.entries: list[tuple[int, str]] = []
        self.rejected: list[tuple[int, str]] = []
        self._commands: queue.SimpleQueue = queue.SimpleQueue()
        self._decoder = IncrementalDecoder(vae)
        self._out: deque = deque()
        self.committed_latents: list[np.ndarray] = []
        self.latency = LatencyReport(budget_ms=frame_budget_ms)
        self._materialize(self.capacity)

    # ------------------------------------------------------------ buffer

    def _materialize(self, upto: int) -> None:
        while self.filled < upto:
            k = self.filled
            evicted = k - self.capacity
            if evicted >= 0 and evicted >= self.watermark - self.horizon:
                raise ShapeError(f"ring overflow: frame {evicted} still visible when writing {k}")
            self.ring[k % self.capacity] = frame_noise(self.seed, k)
            self.filled += 1

    def latent(self, k: int) -> np.ndarray:
        if not (self.filled - self.capacity <= k < self.filled):
            raise IndexError(f"frame {k} not resident")
        return self.ring[k % self.capacity].copy()

    @property
    def watermark_motion(self) -> int:
        return DOWNSAMPLE * self.watermark

    # ------------------------------------------------------------ prompts

    def push_prompt(self, prompt: str, effective_frame: int) -> None:
        """Queue ``prompt`` to govern motion frames from ``effective_frame`` on."""
        if prompt not in self.denoiser.vocab:
            raise PromptError(f"prompt {prompt!r} not in vocabulary {self.denoiser.vocab.prompts}")
        if effective_frame < self.watermark_motion:
            raise PromptError(
                f"frame {effective_frame} is already committed (watermark {self.watermark_motion})")
        self._commands.put((int(effective_frame), prompt))

    def _apply_prompt(self, frame: int, prompt: str) -> None:
        if frame < self.watermark_motion:
            log.warning("dropping prompt %r for committed frame %d", prompt, frame)
            self.rejected.append((frame, prompt))
            return
        entries = [e for e in self.entries if e[0] < frame]
        if entries and entries[-1][1] == prompt:
            self.entries = entries
            return
        if not entries and frame != 0:
            raise PromptError("the first prompt must start at frame 0")
        entries.append((frame, prompt))
        self.entries = entries

    def _drain(self) -> None:
        while True:
            try:
                frame, prompt = self._commands.get_nowait()
            except queue.Empty:
                return
            self._apply_prompt(frame, prompt)

    def prompt_schedule(self) -> PromptSchedule:
        return PromptSchedule(self.entries)

    # ------------------------------------------------------------ stepping

    def step(self) -> StepReport:
        t0 = time.perf_counter()
        self._drain()
        i = self.step_index
        clock = self.clock
        m = clock.committed(i)
        n_now = clock.started(i)
        n_next = clock.started(i + 1)
        self._materialize(n_next)
        flops = 0
        if n_next > m:
            if not self.entries:
                raise PromptError("no prompt has been pushed for frame 0")
            mask = build_attention_mask(RegionPartition(m, n_next, n_next), self.prompt_schedule(),
                                        self.denoiser.config, self.denoiser.vocab)
            frames = mask.frames
            x = self.ring[frames % self.capacity]
            alpha = np.array([clock.alpha(i, int(k)) for k in frames])
            v = self.denoiser.predict_velocity(x, alpha, mask)
            active = frames[mask.active_rows]
            dalpha = np.array([clock.dalpha(i, int(k)) for k in active])
            slots = active % self.capacity
            self.ring[slots] = euler_step(self.ring[slots], v, dalpha)
            flops = self.denoiser.flops(len(frames))
        self.step_index += 1
        m_next = clock.committed(i + 1)
        chunks = []
        for k in range(m, m_next):
            z = self.ring[k % self.capacity].copy()
            self.committed_latents.append(z)
            chunks.append(self._decoder.push(self.vae.denormalize(z)))
        self.watermark = m_next
        motion = (np.concatenate(chunks) if chunks
                  else np.zeros((0, self.vae.config.D_in), dtype=np.float32))
        if len(motion):
            self._out.append(motion)
        rep = StepReport(step=i, newly_committed=motion, wall_time=time.perf_counter() - t0,
                         window_size=n_now - m, denoised=n_next - m, flops=flops)
        self.latency.record(rep, n_next - m, warmup=clock.t(i) < 1)
        return rep

    def poll(self) -> np.ndarray:
        """All motion frames committed since the last poll."""
        chunks = []
        while self._out:
            chunks.append(self._out.popleft())
        if not chunks:
            return np.zeros((0, self.vae.config.D_in), dtype=np.float32)
        return np.concatenate(chunks)

    def first_latent(self, motion_frame: int) -> int:
        """First latent frame whose prompt is read at or after ``motion_frame``."""
        return max(0, -(-(motion_frame - (DOWNSAMPLE - 1)) // DOWNSAMPLE))


def run_stream(engine: StreamEngine, schedule: PromptSchedule, n_motion_frames: int,
               ) -> tuple[MotionSequence, LatencyReport]:
    """Generate exactly ``n_motion_frames`` following ``schedule``.

    Each schedule entry is pushed just before the first latent frame it
    governs steps onto the ramp, i.e. as late as a live instruction stream
    could deliver it without loss.
    """
    if not schedule.entries or schedule.entries[0][0] != 0:
        raise PromptError("schedule must cover frame 0")
    pending = list(schedule.entries)
    got: list[np.ndarray] = []
    total = 0
    while total < n_motion_frames:
        upcoming = engine.clock.started(engine.step_index + 1)
        while pending and engine.first_latent(pending[0][0]) < upcoming:
            frame, prompt = pending.pop(0)
            engine.push_prompt(prompt, frame)
        engine.step()
        out = engine.poll()
        if len(out):
            got.append(out)
            total += len(out)
    frames = np.concatenate(got)[:n_motion_frames]
    fps = 20.0
    return MotionSequence(frames, fps=fps, prompts=list(schedule.entries)), engine.latency
