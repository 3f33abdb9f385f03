"""Noise-level arithmetic.

Levels are continuous reals in ``[0, T]``. A :class:`VarianceSchedule` maps a
level to the cumulative signal coefficient ``alpha_bar``; a
:class:`SamplingSchedule` is the uniform grid ``0, T/S, ..., T`` used both for
sampling steps and for the per-frame levels inside the attention window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

KINDS = ("linear-beta", "cosine")

_LINEAR_DEFAULTS = {"beta_start": 1e-4, "beta_end": 0.02, "num_steps": 1000}
_COSINE_DEFAULTS = {"offset": 0.008, "min_alpha_bar": 1e-4}


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceSchedule:
    """Cumulative signal coefficient ``alpha_bar(t)`` on ``[0, T]``.

    ``linear-beta`` interpolates ``log prod(1 - beta_i)`` of a discrete DDPM
    ladder linearly in ``t``, so ``alpha_bar(k T / N)`` equals the discrete
    cumulative product exactly. ``cosine`` is the improved-DDPM curve, affinely
    rescaled so that ``alpha_bar(T) = min_alpha_bar`` instead of zero.
    """

    kind: str
    T: float = 1.0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown variance schedule kind {self.kind!r}; expected one of {KINDS}")
        if not self.T > 0:
            raise ScheduleError(f"T must be positive, got {self.T}")
        defaults = _LINEAR_DEFAULTS if self.kind == "linear-beta" else _COSINE_DEFAULTS
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ScheduleError(f"unknown params for {self.kind}: {sorted(unknown)}")
        object.__setattr__(self, "params", {**defaults, **self.params})
        if self.kind == "linear-beta":
            self._init_linear()
        else:
            self._init_cosine()
        if self.alpha_bar(self.T) > 0.01:
            raise ScheduleError(
                f"alpha_bar(T) = {float(self.alpha_bar(self.T)):.4g} > 0.01; terminal state is not near pure noise"
            )

    def _init_linear(self) -> None:
        p = self.params
        n = int(p["num_steps"])
        b0, b1 = float(p["beta_start"]), float(p["beta_end"])
        if n < 1:
            raise ScheduleError("num_steps must be >= 1")
        betas = np.linspace(b0, b1, n) if n > 1 else np.array([b0])
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ScheduleError("betas must lie in (0, 1); alpha_bar would not be strictly decreasing")
        log_cum = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
        object.__setattr__(self, "_betas", betas)
        object.__setattr__(self, "_log_cum", log_cum)

    def _init_cosine(self) -> None:
        s = float(self.params["offset"])
        a_min = float(self.params["min_alpha_bar"])
        if s < 0:
            raise ScheduleError("cosine offset must be non-negative")
        if not 0 < a_min < 1:
            raise ScheduleError("min_alpha_bar must lie in (0, 1)")

    def alpha_bar(self, t):
        """Vectorised ``alpha_bar``; accepts scalars or arrays of levels."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-12)):
            raise ScheduleError(f"level outside [0, {self.T}]")
        u = np.clip(t / self.T, 0.0, 1.0)
        if self.kind == "linear-beta":
            n = len(self._betas)
            x = u * n
            k = np.minimum(np.floor(x).astype(np.int64), n - 1)
            frac = x - k
            log_a = self._log_cum[k] + frac * (self._log_cum[k + 1] - self._log_cum[k])
            out = np.exp(log_a)
        else:
            s = self.params["offset"]
            a_min = self.params["min_alpha_bar"]
            def f(v):
                return np.cos((v + s) / (1 + s) * math.pi / 2) ** 2

            f0, f1 = f(0.0), f(1.0)
            out = a_min + (1 - a_min) * (f(u) - f1) / (f0 - f1)
            out = np.where(u == 0, 1.0, out)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "T": self.T, "params": dict(self.params)}


def make_variance_schedule(kind: str = "linear-beta", T: float = 1.0, **params) -> VarianceSchedule:
    return VarianceSchedule(kind, float(T), params)


@dataclass(frozen=True)
class SamplingSchedule:
    """Uniform grid ``tau'_i = i T / S`` for ``i = 0..S``."""

    T: float
    S: int

    def __post_init__(self) -> None:
        if not isinstance(self.S, (int, np.integer)) or self.S < 1:
            raise ScheduleError(f"number of sampling steps must be a positive integer, got {self.S!r}")
        if not self.T > 0:
            raise ScheduleError(f"T must be positive, got {self.T}")
        grid = np.arange(self.S + 1, dtype=np.float64) * (self.T / self.S)
        grid[-1] = self.T
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def spacing(self) -> float:
        return self.T / self.S

    def level(self, index):
        return self.grid[index]

    def index_of(self, levels) -> np.ndarray:
        """Grid index of each level; raises if a level is not on the grid."""
        levels = np.asarray(levels, dtype=np.float64)
        idx = np.rint(levels / self.spacing).astype(np.int64)
        if np.any(idx < 0) or np.any(idx > self.S) or not np.allclose(self.grid[idx], levels, rtol=0, atol=1e-9 * self.T):
            raise ScheduleError("levels are not points of the sampling grid")
        return idx


def make_linear_sampling_schedule(T: float, S: int) -> SamplingSchedule:
    return SamplingSchedule(float(T), S)


@dataclass(frozen=True)
class FrameNoiseVector:
    """Per-frame noise levels, constant within chunks of ``chunk_size`` frames.

    In ``progressive`` mode chunk levels are non-decreasing from the oldest
    (front) to the newest (back) frame and strictly increasing past any
    leading run of clean (level 0) chunks. Clamped training levels may tie at
    the boundaries; pass ``strict=False`` to accept ties.
    """

    levels: np.ndarray
    chunk_size: int = 1
    mode: str = "progressive"
    strict: bool = True

    def __post_init__(self) -> None:
        levels = np.array(self.levels, dtype=np.float64)
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        if levels.ndim != 1 or levels.size == 0:
            raise ScheduleError("levels must be a non-empty 1-d array")
        if self.chunk_size < 1 or levels.size % self.chunk_size:
            raise ScheduleError(f"chunk size {self.chunk_size} does not divide frame count {levels.size}")
        if self.mode not in ("progressive", "uniform"):
            raise ScheduleError(f"unknown mode {self.mode!r}")
        chunks = levels.reshape(-1, self.chunk_size)
        if np.any(chunks != chunks[:, :1]):
            raise ScheduleError("levels are not constant within chunks")
        cl = chunks[:, 0]
        if self.mode == "uniform":
            if np.any(cl != cl[0]):
                raise ScheduleError("uniform mode requires equal levels")
        else:
            noisy = cl[np.argmax(cl > 0):] if np.any(cl > 0) else cl[:0]
            d = np.diff(noisy)
            if np.any(d < 0) or (self.strict and np.any(d <= 0)):
                raise ScheduleError(f"chunk levels are not increasing front to back: {cl.tolist()}")

    def __len__(self) -> int:
        return self.levels.size

    @property
    def chunk_levels(self) -> np.ndarray:
        return self.levels[:: self.chunk_size]


def progressive_input_levels(schedule: SamplingSchedule, num_chunks: int, chunk_size: int, offset: int = 0) -> FrameNoiseVector:
    """Window levels ``offset`` steps into a shift period.

    Chunk ``j`` (0 = oldest) sits at grid index ``(j + 1) * chunk_size - offset``,
    so at ``offset = 0`` the newest chunk is at ``T``.
    """
    if num_chunks * chunk_size != schedule.S:
        raise ScheduleError(
            f"window of {num_chunks} chunks x {chunk_size} frames must equal the number of sampling steps S={schedule.S}"
        )
    if not 0 <= offset < chunk_size:
        raise ScheduleError(f"offset must lie in [0, {chunk_size}), got {offset}")
    idx = (np.arange(num_chunks) + 1) * chunk_size - offset
    return FrameNoiseVector(np.repeat(schedule.grid[idx], chunk_size), chunk_size, "progressive")


def output_levels(levels: FrameNoiseVector, schedule: SamplingSchedule) -> FrameNoiseVector:
    """Move every level down one grid index."""
    idx = schedule.index_of(levels.levels)
    if np.any(idx == 0):
        raise ScheduleError("input contains frames already at level 0")
    return FrameNoiseVector(schedule.grid[idx - 1], levels.chunk_size, levels.mode)


def perturb_training_levels(
    levels: FrameNoiseVector,
    rng: np.random.Generator,
    T: float,
    gap: float | None = None,
    eps: float | None = None,
) -> FrameNoiseVector:
    """Shift all levels by one shared ``0.4 * eps * gap`` and clamp to ``[0, T]``.

    ``gap`` defaults to the spacing between adjacent chunk levels; it must be
    given explicitly for single-chunk vectors.
    """
    if gap is None:
        cl = np.unique(levels.chunk_levels)
        if cl.size < 2:
            raise ScheduleError("need at least two distinct chunk levels to infer the gap")
        gap = float(np.min(np.diff(cl)))
    if eps is None:
        eps = float(rng.standard_normal())
    shift = 0.4 * eps * abs(gap)
    out = np.clip(levels.levels + shift, 0.0, T)
    return FrameNoiseVector(out, levels.chunk_size, levels.mode, strict=False)


def schedules_to_json(vs: VarianceSchedule, ss: SamplingSchedule) -> str:
    return json.dumps({"kind": vs.kind, "T": vs.T, "S": ss.S, "params": vs.params}, sort_keys=True)


def schedules_from_json(text: str) -> tuple[VarianceSchedule, SamplingSchedule]:
    doc = json.loads(text)
    try:
        vs = VarianceSchedule(doc["kind"], float(doc["T"]), dict(doc.get("params", {})))
        ss = SamplingSchedule(float(doc["T"]), int(doc["S"]))
    except KeyError as exc:
        raise ScheduleError(f"schedule document missing field {exc}") from None
    return vs, ss
