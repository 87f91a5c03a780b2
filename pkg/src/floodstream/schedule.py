"""Per-frame noise schedules for diffusion forcing.

The triangular schedule gives frame ``k`` the clean-data weight
``alpha = clamp(t - k / n_s, 0, 1)`` and noise weight ``beta = 1 - alpha``.
At any ``t`` the frames split into a committed prefix (alpha == 1), an active
window (0 < alpha < 1) of at most ``ceil(n_s)`` frames, and a pure-noise tail
(alpha == 0). The boundary values belong to the outer regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .errors import ScheduleError
from .numeric.rng import Rng


class ScheduleKind(str, Enum):
    TRIANGULAR = "triangular"
    RANDOM = "random"
    CHUNK = "chunk"


@dataclass(frozen=True)
class ScheduleParams:
    n_s: float = 4.0
    K: int = 48
    kind: ScheduleKind = ScheduleKind.TRIANGULAR

    def __post_init__(self):
        if not self.n_s > 0:
            raise ScheduleError(f"n_s must be positive, got {self.n_s}")
        if self.K < 1:
            raise ScheduleError(f"K must be >= 1, got {self.K}")
        object.__setattr__(self, "kind", ScheduleKind(self.kind))

    @property
    def t_max(self) -> float:
        """Time at which the last frame commits."""
        return 1.0 + (self.K - 1) / self.n_s


@dataclass(frozen=True)
class RegionPartition:
    m: int  # first frame not yet committed
    n: int  # first pure-noise frame
    K: int

    @property
    def fixed_past(self) -> range:
        return range(0, self.m)

    @property
    def active(self) -> range:
        return range(self.m, self.n)

    @property
    def future(self) -> range:
        return range(self.n, self.K)


def _require_triangular(params: ScheduleParams) -> None:
    if params.kind is not ScheduleKind.TRIANGULAR:
        raise ScheduleError(f"operation defined for the triangular schedule, got {params.kind.value}")


def alpha_at(params: ScheduleParams, t: float, k: int) -> float:
    _require_triangular(params)
    if not 0 <= k < params.K:
        raise ScheduleError(f"frame index {k} outside [0, {params.K})")
    return min(max(t - k / params.n_s, 0.0), 1.0)


def beta_at(params: ScheduleParams, t: float, k: int) -> float:
    return 1.0 - alpha_at(params, t, k)


def alpha_vector(params: ScheduleParams, t: float) -> np.ndarray:
    _require_triangular(params)
    k = np.arange(params.K, dtype=np.float64)
    return np.clip(t - k / params.n_s, 0.0, 1.0)


def partition_from_alpha(alpha: np.ndarray) -> RegionPartition:
    K = len(alpha)
    below_one = np.flatnonzero(alpha < 1.0)
    zeros = np.flatnonzero(alpha == 0.0)
    m = int(below_one[0]) if below_one.size else K
    n = int(zeros[0]) if zeros.size else K
    return RegionPartition(m=m, n=max(n, m), K=K)


def partition(params: ScheduleParams, t: float) -> RegionPartition:
    return partition_from_alpha(alpha_vector(params, t))


def corrupt(z: np.ndarray, alpha: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Per frame ``x[k] = alpha[k] * z[k] + (1 - alpha[k]) * noise[k]``.

    ``z`` and ``noise`` are (..., K, C); ``alpha`` is (..., K). Arithmetic is
    float64 with a single rounding to float32.
    """
    z = np.asarray(z)
    noise = np.asarray(noise)
    if z.shape != noise.shape:
        raise ScheduleError(f"corrupt: latents {z.shape} vs noise {noise.shape}")
    a = np.asarray(alpha, dtype=np.float64)
    if a.shape != z.shape[:-1]:
        raise ScheduleError(f"corrupt: alpha {a.shape} does not match latents {z.shape}")
    a = a[..., None]
    x = a * z.astype(np.float64) + (1.0 - a) * noise.astype(np.float64)
    return x.astype(np.float32)


@dataclass
class TrainingTimes:
    t: np.ndarray | None  # (batch,) for the triangular kind, else None
    alpha: np.ndarray     # (batch, K)


def sample_training_times(params: ScheduleParams, rng: Rng, batch: int) -> TrainingTimes:
    K = params.K
    if params.kind is ScheduleKind.TRIANGULAR:
        t = rng.uniform((batch,), 0.0, params.t_max)
        k = np.arange(K, dtype=np.float64)
        alpha = np.clip(t[:, None] - k[None, :] / params.n_s, 0.0, 1.0)
        return TrainingTimes(t=t, alpha=alpha)
    if params.kind is ScheduleKind.RANDOM:
        return TrainingTimes(t=None, alpha=rng.uniform((batch, K)))
    shared = rng.uniform((batch, 1))
    return TrainingTimes(t=None, alpha=np.repeat(shared, K, axis=1))


def advance(t: float, dt: float) -> float:
    if not dt > 0:
        raise ScheduleError(f"step must be positive, got {dt}")
    return t + dt


def committed_between(params: ScheduleParams, t0: float, t1: float) -> int:
    return partition(params, t1).m - partition(params, t0).m


class StepClock:
    """Exact-arithmetic triangular schedule on the solver grid ``t = i * dt``.

    The streaming engine uses this instead of float ``t`` so region boundaries
    land exactly on the grid and frame indices can grow without bound.
    """

    def __init__(self, n_s: float, dt: float):
        if not dt > 0:
            raise ScheduleError(f"dt must be positive, got {dt}")
        if not n_s > 0:
            raise ScheduleError(f"n_s must be positive, got {n_s}")
        self.n_s = Fraction(n_s).limit_denominator(1_000_000)
        self.dt = Fraction(dt).limit_denominator(1_000_000)
        self.n_s_float = float(n_s)
        self.dt_float = float(dt)

    def t(self, step: int) -> Fraction:
        return step * self.dt

    def alpha(self, step: int, k: int) -> float:
        a = self.t(step) - Fraction(k) / self.n_s
        return float(min(max(a, Fraction(0)), Fraction(1)))

    def dalpha(self, step: int, k: int) -> float:
        """Exact ``alpha_k(t + dt) - alpha_k(t)``, rounded once."""
        def a(s):
            return min(max(self.t(s) - Fraction(k) / self.n_s, Fraction(0)), Fraction(1))
        return float(a(step + 1) - a(step))

    def committed(self, step: int) -> int:
        """m(t): number of frames with alpha == 1."""
        t = self.t(step)
        if t < 1:
            return 0
        return math.floor((t - 1) * self.n_s) + 1

    def started(self, step: int) -> int:
        """n(t): number of frames with alpha > 0."""
        t = self.t(step)
        if t <= 0:
            return 0
        return math.ceil(t * self.n_s)

    def steps_per_frame(self) -> Fraction:
        return 1 / (self.n_s * self.dt)

    def lifetime_steps(self) -> Fraction:
        return 1 / self.dt
