"""Progressive autoregressive sampling over a sliding window.

The window holds ``S`` noisy frames in ``S / C`` chunks whose levels rise one
chunk-gap at a time from front to back. Each sampling step lowers every noisy
frame by one grid index; every ``C`` steps the front chunk is clean, leaves the
window, and a fresh chunk of pure noise enters at the back.

With ``keep_clean`` the most recently finished chunk stays at the front as a
level-0 prefix (window length ``S + C``) and the chunk it displaces is
emitted. Optional initialization grows the window from a single noisy chunk;
termination drains it without appending.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .denoisers import Denoiser
from .diffusion import ddim_step, forward_diffuse
from .schedule import FrameNoiseVector, SamplingSchedule, VarianceSchedule


class Phase(str, enum.Enum):
    INITIALIZING = "initializing"
    STEADY = "steady"
    TERMINATING = "terminating"
    DONE = "done"


class ConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    steps: int = 30
    chunk: int = 5
    frames: int = 1000
    eta: float = 0.0
    keep_clean: bool = True
    enable_init: bool = True
    enable_termination: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1 or self.chunk < 1:
            raise ConfigError("steps and chunk must be positive")
        if self.steps % self.chunk:
            raise ConfigError(f"steps S={self.steps} must be divisible by chunk C={self.chunk}")
        if self.frames < 0 or self.frames % self.chunk:
            raise ConfigError(f"frames N={self.frames} must be a non-negative multiple of chunk C={self.chunk}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.enable_termination and self.frames < self.window_len:
            raise ConfigError(
                f"with termination the drained window ({self.window_len} frames) is part of the output; frames must be >= {self.window_len}"
            )

    @property
    def num_chunks(self) -> int:
        return self.steps // self.chunk

    @property
    def window_len(self) -> int:
        return self.steps + (self.chunk if self.keep_clean else 0)

    @property
    def periods(self) -> int:
        """Number of steady-phase shift periods needed to emit ``frames``."""
        drained = self.window_len if self.enable_termination else 0
        return (self.frames - drained) // self.chunk


@dataclass
class WindowState:
    """Mutable, single-owner window state.

    ``idx`` holds each frame's grid index (level = ``grid[idx]``); ``ids`` and
    ``born`` give every frame a unique serial number and the period in which it
    entered the window, for conservation checks.
    """

    config: GenerationConfig
    schedule: SamplingSchedule
    frames: np.ndarray
    idx: np.ndarray
    ids: np.ndarray
    born: np.ndarray
    rng: np.random.Generator
    phase: Phase = Phase.STEADY
    has_prefix: bool = False
    r: int = 0
    period: int = 0
    step_count: int = 0
    next_id: int = 0
    emitted: list[np.ndarray] = field(default_factory=list)
    emitted_ids: list[int] = field(default_factory=list)
    emitted_born: list[int] = field(default_factory=list)
    emitted_count: int = 0
    sink: Callable[[int, int, np.ndarray], None] | None = None
    retain: bool = True

    @property
    def levels(self) -> FrameNoiseVector:
        return FrameNoiseVector(self.schedule.grid[self.idx], self.config.chunk, "progressive")

    @property
    def prefix_len(self) -> int:
        return self.config.chunk if self.has_prefix else 0

    @property
    def noisy_chunks(self) -> int:
        return (len(self.idx) - self.prefix_len) // self.config.chunk

    def _new_ids(self, n: int) -> np.ndarray:
        ids = np.arange(self.next_id, self.next_id + n)
        self.next_id += n
        return ids

    def _emit(self, count: int) -> None:
        for k in range(count):
            frame = self.frames[k].copy()
            frame.setflags(write=False)
            if self.sink is not None:
                self.sink(self.period, self.emitted_count, frame)
            if self.retain:
                self.emitted.append(frame)
            self.emitted_ids.append(int(self.ids[k]))
            self.emitted_born.append(int(self.born[k]))
            self.emitted_count += 1
        self.frames, self.idx = self.frames[count:], self.idx[count:]
        self.ids, self.born = self.ids[count:], self.born[count:]

    def _append_noise_chunk(self) -> None:
        c, d = self.config.chunk, self.frames.shape[1]
        fresh = self.rng.standard_normal((c, d))
        self.frames = np.concatenate([self.frames, fresh])
        self.idx = np.concatenate([self.idx, np.full(c, self.schedule.S)])
        self.ids = np.concatenate([self.ids, self._new_ids(c)])
        self.born = np.concatenate([self.born, np.full(c, self.period)])

    def emitted_array(self) -> np.ndarray:
        d = self.frames.shape[1]
        return np.array(self.emitted).reshape(-1, d)


def _schedule_for(config: GenerationConfig, vs: VarianceSchedule) -> SamplingSchedule:
    return SamplingSchedule(vs.T, config.steps)


def init_from_video(x0, config: GenerationConfig, vs: VarianceSchedule, rng: np.random.Generator | None = None) -> WindowState:
    """Noise a clean window to the ``r = 0`` progressive levels.

    With ``keep_clean`` the first chunk stays clean and becomes the prefix.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] != config.window_len:
        raise ConfigError(f"initial video must have shape ({config.window_len}, D), got {x0.shape}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ss = _schedule_for(config, vs)
    c, k = config.chunk, config.num_chunks
    idx = np.repeat((np.arange(k) + 1) * c, c)
    if config.keep_clean:
        idx = np.concatenate([np.zeros(c, dtype=np.int64), idx])
    noise = rng.standard_normal(x0.shape)
    frames = forward_diffuse(x0, ss.grid[idx], noise, vs)
    frames[idx == 0] = x0[idx == 0]
    state = WindowState(config, ss, frames, idx, np.arange(len(idx)), np.zeros(len(idx), dtype=np.int64), rng)
    state.next_id = len(idx)
    state.has_prefix = config.keep_clean
    state.phase = Phase.STEADY
    return state


def init_from_noise(config: GenerationConfig, vs: VarianceSchedule, dim: int, rng: np.random.Generator | None = None) -> WindowState:
    """Start from a single chunk of pure noise; call :func:`grow` to reach steady shape."""
    if not config.enable_init:
        raise ConfigError("initialization from noise is disabled in this config")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    ss = _schedule_for(config, vs)
    state = WindowState(
        config,
        ss,
        frames=np.empty((0, dim)),
        idx=np.empty(0, dtype=np.int64),
        ids=np.empty(0, dtype=np.int64),
        born=np.empty(0, dtype=np.int64),
        rng=rng,
        phase=Phase.INITIALIZING,
    )
    state._append_noise_chunk()
    if state.noisy_chunks == config.num_chunks and not config.keep_clean:
        state.phase = Phase.STEADY
    return state


def sample_step(state: WindowState, denoiser: Denoiser, vs: VarianceSchedule) -> WindowState:
    """Lower every noisy frame by one grid index; clean frames pass through."""
    if state.phase is Phase.DONE:
        raise PhaseError("generation is finished")
    grid = state.schedule.grid
    from_idx = state.idx
    to_idx = np.maximum(from_idx - 1, 0)
    eps = denoiser.predict_eps(state.frames, grid[from_idx], vs)
    state.frames = ddim_step(state.frames, eps, grid[from_idx], grid[to_idx], vs, state.config.eta, state.rng)
    state.idx = to_idx
    state.r = (state.r + 1) % state.config.chunk
    state.step_count += 1
    return state


def _front_chunk_clean(state: WindowState) -> bool:
    p = state.prefix_len
    return state.noisy_chunks > 0 and state.idx[p] == 0


def shift_window(state: WindowState) -> WindowState:
    """Retire the finished front chunk and append a fresh noise chunk."""
    if state.phase is not Phase.STEADY:
        raise PhaseError(f"shift is only valid in the steady phase, not {state.phase.value}")
    if state.r != 0 or not _front_chunk_clean(state):
        raise PhaseError("shift called off a period boundary")
    c = state.config.chunk
    if state.config.keep_clean:
        if state.has_prefix:
            state._emit(c)
        state.has_prefix = True
    else:
        state._emit(c)
    state.period += 1
    state._append_noise_chunk()
    return state


def _run_period(state, denoiser, vs, observer) -> None:
    for _ in range(state.config.chunk):
        sample_step(state, denoiser, vs)
        if observer is not None:
            observer(state)


def grow(state: WindowState, denoiser: Denoiser, vs: VarianceSchedule, observer=None) -> WindowState:
    """Run initialization periods (denoise ``C`` steps, append, never remove)."""
    cfg = state.config
    while state.phase is Phase.INITIALIZING:
        _run_period(state, denoiser, vs, observer)
        if cfg.keep_clean and _front_chunk_clean(state):
            state.has_prefix = True
        state.period += 1
        state._append_noise_chunk()
        if state.noisy_chunks == cfg.num_chunks and (state.has_prefix or not cfg.keep_clean):
            state.phase = Phase.STEADY
        if observer is not None:
            observer(state)
    return state


def terminate(state: WindowState, denoiser: Denoiser, vs: VarianceSchedule, observer=None) -> WindowState:
    """Drain the window: denoise and retire chunks without appending noise."""
    c = state.config.chunk
    state.phase = Phase.TERMINATING
    while len(state.idx):
        if state.noisy_chunks == 0:
            state._emit(len(state.idx))
            break
        if state.r != 0:
            raise PhaseError("termination must start on a period boundary")
        _run_period(state, denoiser, vs, observer)
        if state.has_prefix:
            state._emit(c)
        # the front chunk is now the one that just finished
        behind = len(state.idx) // c - 1
        if state.config.keep_clean and behind > 0:
            state.has_prefix = True
        else:
            state._emit(c)
            state.has_prefix = False
        state.period += 1
        if observer is not None:
            observer(state)
    state.phase = Phase.DONE
    return state


def step_period(state: WindowState, denoiser: Denoiser, vs: VarianceSchedule, observer=None) -> WindowState:
    """One steady period: ``C`` sampling steps then a shift."""
    _run_period(state, denoiser, vs, observer)
    shift_window(state)
    if observer is not None:
        observer(state)
    return state


def generate(
    config: GenerationConfig,
    denoiser: Denoiser,
    vs: VarianceSchedule,
    x0=None,
    dim: int | None = None,
    sink=None,
    retain: bool = True,
    observer=None,
) -> np.ndarray:
    """Run initialization, ``config.periods`` steady periods and optional termination.

    Exactly one of ``x0`` (initial clean window) or ``config.enable_init`` must
    be given. Returns the emitted clean frames in temporal order.
    """
    state = start(config, vs, x0=x0, dim=dim, sink=sink, retain=retain)
    run(state, denoiser, vs, observer)
    return state.emitted_array() if retain else np.empty((0, state.frames.shape[1]))


def start(config: GenerationConfig, vs: VarianceSchedule, x0=None, dim=None, sink=None, retain=True) -> WindowState:
    if (x0 is None) == (not config.enable_init):
        raise ConfigError("pass an initial video exactly when initialization is disabled")
    rng = np.random.default_rng(config.seed)
    if x0 is not None:
        state = init_from_video(x0, config, vs, rng)
    else:
        if dim is None:
            raise ConfigError("dim is required when initializing from noise")
        state = init_from_noise(config, vs, dim, rng)
    state.sink, state.retain = sink, retain
    return state


def run(state: WindowState, denoiser: Denoiser, vs: VarianceSchedule, observer=None) -> WindowState:
    if observer is not None:
        observer(state)
    grow(state, denoiser, vs, observer)
    for _ in range(state.config.periods):
        step_period(state, denoiser, vs, observer)
    if state.config.enable_termination:
        terminate(state, denoiser, vs, observer)
    return state
