"""Frame-wise diffusion math.

Arrays have shape ``(..., F, D)``; level vectors have shape ``(..., F)`` (or
are :class:`~pavd.schedule.FrameNoiseVector`). Every map here acts on each
frame with that frame's own level and never mixes frames.
"""

from __future__ import annotations

import numpy as np

from .schedule import FrameNoiseVector, VarianceSchedule

MIN_ALPHA_BAR = 1e-6


class ShapeError(ValueError):
    pass


def _levels(levels) -> np.ndarray:
    if isinstance(levels, FrameNoiseVector):
        return levels.levels
    return np.asarray(levels, dtype=np.float64)


def _frame_coef(vs: VarianceSchedule, levels, x: np.ndarray) -> np.ndarray:
    t = _levels(levels)
    if t.shape[-1] != x.shape[-2]:
        raise ShapeError(f"{t.shape[-1]} levels for {x.shape[-2]} frames")
    return np.asarray(vs.alpha_bar(t))[..., None]


def forward_diffuse(x0, levels, noise, vs: VarianceSchedule) -> np.ndarray:
    """Corrupt each frame to its own level: ``sqrt(a) x0 + sqrt(1 - a) noise``."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ShapeError(f"x0 shape {x0.shape} != noise shape {noise.shape}")
    a = _frame_coef(vs, levels, x0)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * noise


def predict_x0(xt, eps_hat, levels, vs: VarianceSchedule) -> np.ndarray:
    """Invert the forward map given a noise estimate."""
    xt = np.asarray(xt, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if xt.shape != eps_hat.shape:
        raise ShapeError(f"xt shape {xt.shape} != eps_hat shape {eps_hat.shape}")
    a = _frame_coef(vs, levels, xt)
    if np.any(a < MIN_ALPHA_BAR):
        bad = np.argwhere(a[..., 0] < MIN_ALPHA_BAR)[0]
        raise ValueError(f"frame {tuple(int(i) for i in bad)} has alpha_bar below {MIN_ALPHA_BAR}; x0 is not recoverable")
    return (xt - np.sqrt(1.0 - a) * eps_hat) / np.sqrt(a)


def ddim_step(xt, eps_hat, from_levels, to_levels, vs: VarianceSchedule, eta: float = 0.0, rng=None) -> np.ndarray:
    """One DDIM transition per frame from ``from_levels`` down to ``to_levels``.

    Frames whose two levels coincide are returned unchanged. With ``eta > 0``
    fresh Gaussian noise is drawn from ``rng``.
    """
    xt = np.asarray(xt, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if xt.shape != eps_hat.shape:
        raise ShapeError(f"xt shape {xt.shape} != eps_hat shape {eps_hat.shape}")
    t_from = np.broadcast_to(_levels(from_levels), xt.shape[:-1])
    t_to = np.broadcast_to(_levels(to_levels), xt.shape[:-1])
    if np.any(t_to > t_from):
        bad = np.argwhere(t_to > t_from)[0]
        raise ValueError(f"target level above source level at frame {tuple(int(i) for i in bad)}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")

    moving = t_to < t_from
    out = xt.copy()
    if not np.any(moving):
        return out
    a_from = np.asarray(vs.alpha_bar(t_from[moving]))[..., None]
    a_to = np.asarray(vs.alpha_bar(t_to[moving]))[..., None]
    x = xt[moving]
    e = eps_hat[moving]
    if np.any(a_from < MIN_ALPHA_BAR):
        raise ValueError(f"alpha_bar below {MIN_ALPHA_BAR} at a source level; x0 is not recoverable")
    x0_hat = (x - np.sqrt(1.0 - a_from) * e) / np.sqrt(a_from)
    sigma = eta * np.sqrt((1.0 - a_to) / (1.0 - a_from)) * np.sqrt(1.0 - a_from / a_to)
    dir_coef = np.sqrt(np.clip(1.0 - a_to - sigma**2, 0.0, None))
    new = np.sqrt(a_to) * x0_hat + dir_coef * e
    if eta > 0:
        if rng is None:
            raise ValueError("eta > 0 requires an rng")
        new = new + sigma * rng.standard_normal(new.shape)
    out[moving] = new
    return out


def mse_eps_loss(eps_hat, eps_true) -> float:
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    eps_true = np.asarray(eps_true, dtype=np.float64)
    if eps_hat.shape != eps_true.shape:
        raise ShapeError(f"shape mismatch {eps_hat.shape} vs {eps_true.shape}")
    return float(np.mean((eps_hat - eps_true) ** 2))
