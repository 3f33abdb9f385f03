"""Replacement-style autoregressive baselines and an independent-clips control.

All three run a classical uniform-level DDIM loop over a window of ``F``
frames and slide by ``F - E`` frames per clip. They differ only in how the
``E`` condition frames enter the window at each step:

* ``without-noise``: the clean condition frames overwrite the window front.
* ``with-noise``: the condition frames are forward-diffused to the current
  level with fresh noise and overwrite the window front.
* ``independent``: no conditioning (``E = 0``); clips are drawn separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoisers import Denoiser
from .diffusion import ddim_step, forward_diffuse
from .schedule import SamplingSchedule, VarianceSchedule

METHODS = ("with-noise", "without-noise", "independent")


@dataclass(frozen=True)
class ReplacementConfig:
    window: int
    condition: int
    method: str
    steps: int = 30
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "independent":
            if self.condition != 0:
                raise ValueError("independent clips take no condition frames (E = 0)")
        elif not 0 < self.condition < self.window:
            raise ValueError(f"condition length E={self.condition} must satisfy 0 < E < F={self.window}")
        if self.steps < 1:
            raise ValueError("steps must be positive")

    @property
    def stride(self) -> int:
        return self.window - self.condition


def _denoise_clip(x, cfg, denoiser, vs, ss, rng, replace=None):
    """Uniform-level DDIM from ``T`` to 0; ``replace(x, i)`` rewrites the window at level index ``i``."""
    levels = lambda i: np.full(cfg.window, ss.grid[i])  # noqa: E731
    if replace is not None:
        x = replace(x, ss.S)
    for i in range(ss.S, 0, -1):
        eps = denoiser.predict_eps(x, levels(i), vs)
        x = ddim_step(x, eps, levels(i), levels(i - 1), vs, cfg.eta, rng)
        if replace is not None:
            x = replace(x, i - 1)
    return x


def _num_clips(total: int, cfg: ReplacementConfig) -> int:
    need = total - cfg.condition
    if need < 0 or need % cfg.stride:
        raise ValueError(f"output length {total} must equal E + k (F - E) = {cfg.condition} + k * {cfg.stride}")
    return need // cfg.stride


def _replacement(cfg, denoiser, vs, seed_clip, total, noisy, observer=None):
    seed_clip = np.asarray(seed_clip, dtype=np.float64)
    if seed_clip.ndim != 2 or seed_clip.shape[0] < cfg.condition:
        raise ValueError(f"seed clip needs at least E={cfg.condition} frames")
    rng = np.random.default_rng(cfg.seed)
    ss = SamplingSchedule(vs.T, cfg.steps)
    e, d = cfg.condition, seed_clip.shape[1]
    out = [seed_clip[-e:]]
    cond = seed_clip[-e:].copy()
    for _ in range(_num_clips(total, cfg)):

        def replace(x, i, cond=cond):
            x = x.copy()
            if noisy:
                x[:e] = forward_diffuse(cond, np.full(e, ss.grid[i]), rng.standard_normal(cond.shape), vs)
            else:
                x[:e] = cond
            if observer is not None:
                observer(x, i, cond)
            return x

        x = rng.standard_normal((cfg.window, d))
        x = _denoise_clip(x, cfg, denoiser, vs, ss, rng, replace)
        new = x[e:]
        out.append(new)
        cond = np.concatenate([cond, new])[-e:]
    return np.concatenate(out)


def generate_replacement_without_noise(cfg, denoiser: Denoiser, vs: VarianceSchedule, seed_clip, total: int, observer=None):
    """Output starts with the last ``E`` seed frames, then ``F - E`` new frames per clip."""
    if cfg.method != "without-noise":
        raise ValueError("config method must be 'without-noise'")
    return _replacement(cfg, denoiser, vs, seed_clip, total, noisy=False, observer=observer)


def generate_replacement_with_noise(cfg, denoiser: Denoiser, vs: VarianceSchedule, seed_clip, total: int, observer=None):
    if cfg.method != "with-noise":
        raise ValueError("config method must be 'with-noise'")
    return _replacement(cfg, denoiser, vs, seed_clip, total, noisy=True, observer=observer)


def generate_independent_clips(cfg, denoiser: Denoiser, vs: VarianceSchedule, dim: int, total: int):
    if cfg.method != "independent":
        raise ValueError("config method must be 'independent'")
    rng = np.random.default_rng(cfg.seed)
    ss = SamplingSchedule(vs.T, cfg.steps)
    clips = []
    for _ in range(_num_clips(total, cfg)):
        x = rng.standard_normal((cfg.window, dim))
        clips.append(_denoise_clip(x, cfg, denoiser, vs, ss, rng))
    return np.concatenate(clips) if clips else np.empty((0, dim))
