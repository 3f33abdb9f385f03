"""Fine-tuning the toy denoiser on per-frame progressive noise levels."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .denoisers import ToyDenoiserParams, load_params, save_params, toy_backward
from .diffusion import forward_diffuse
from .schedule import FrameNoiseVector, SamplingSchedule, VarianceSchedule, perturb_training_levels

log = logging.getLogger(__name__)

BANDS = ("low", "mid", "high")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 32
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    S: int = 10
    C: int = 2
    lengths: tuple[int, ...] | None = None
    level_mode: str = "progressive"
    keep_clean: bool = True
    clean_prob: float = 0.5
    hidden: int = 64
    n_freqs: int = 8
    seed: int = 0
    cadence: int = 100
    val_size: int = 256

    def __post_init__(self) -> None:
        if self.S % self.C:
            raise ValueError(f"S={self.S} must be divisible by C={self.C}")
        lengths = tuple(self.lengths) if self.lengths is not None else tuple(range(self.C, self.S + 1, self.C))
        if not lengths or any(n % self.C or not self.C <= n <= self.S for n in lengths):
            raise ValueError(f"clip lengths {lengths} must be multiples of C={self.C} within [C, S]")
        object.__setattr__(self, "lengths", lengths)
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.level_mode not in ("progressive", "uniform"):
            raise ValueError(f"unknown level mode {self.level_mode!r}")
        if self.cadence < 1:
            raise ValueError("cadence must be positive")

    @property
    def max_frames(self) -> int:
        return self.S + (self.C if self.keep_clean else 0)


def sample_training_levels(config: TrainConfig, clip_len: int, rng: np.random.Generator, T: float = 1.0) -> FrameNoiseVector:
    """Levels for one training clip of ``clip_len`` frames.

    Progressive mode places the clip's chunks on a random contiguous stretch
    of the sampling ladder at a random point of the shift period, then applies
    one shared random shift. Uniform mode draws one level for all frames.
    """
    if clip_len not in config.lengths:
        raise ValueError(f"clip length {clip_len} not in {config.lengths}")
    C, S = config.C, config.S
    if config.level_mode == "uniform":
        return FrameNoiseVector(np.full(clip_len, rng.uniform(0.0, T)), C, "uniform")
    grid = SamplingSchedule(T, S).grid
    k, K = clip_len // C, S // C
    offset = rng.integers(0, K - k + 1)
    r = rng.integers(0, C)
    idx = (np.arange(k) + 1 + offset) * C - r
    ladder = FrameNoiseVector(np.repeat(grid[idx], C), C, "progressive")
    return perturb_training_levels(ladder, rng, T, gap=C * T / S)


def _item_levels(config: TrainConfig, clip_len: int, prefix: bool, rng, T):
    if config.level_mode == "uniform":
        return np.full(clip_len, rng.uniform(0.0, T))
    lv = sample_training_levels(config, clip_len, rng, T).levels
    return np.concatenate([np.zeros(config.C), lv]) if prefix else lv


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ToyDenoiserParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_update(params: ToyDenoiserParams, grads, state: AdamState, config: TrainConfig) -> None:
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    for k, g in grads.items():
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        mhat = state.m[k] / (1 - b1**state.t)
        vhat = state.v[k] / (1 - b2**state.t)
        params.arrays[k] -= config.lr * mhat / (np.sqrt(vhat) + config.adam_eps)


def batch_gradients(params, x0, levels, noise, vs: VarianceSchedule):
    """Loss and gradients on noisy frames (level > 0) of a batch ``(B, F, D)``."""
    levels = np.asarray(levels, dtype=np.float64)
    xt = forward_diffuse(x0, levels, noise, vs)
    mask = levels > 0
    return toy_backward(params, xt, levels, noise, vs, mask=mask)


def train_step(params: ToyDenoiserParams, opt: AdamState, x0, config: TrainConfig, vs: VarianceSchedule, rng: np.random.Generator, levels=None):
    """Noise a batch at sampled levels, then take one Adam step.

    ``x0`` is a batch of clean windows ``(B, F, D)``; ``levels`` (``(B, F)``)
    default to a fresh draw per batch item. Returns ``(params, loss)`` where
    the loss is measured before the update.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if levels is None:
        levels = np.stack([_item_levels(config, x0.shape[1], False, rng, vs.T) for _ in range(x0.shape[0])])
    noise = rng.standard_normal(x0.shape)
    loss, grads = batch_gradients(params, x0, levels, noise, vs)
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss {loss}; levels[0]={np.asarray(levels)[0].tolist()}, "
            f"batch mean={float(np.mean(x0)):.4g} std={float(np.std(x0)):.4g}"
        )
    adam_update(params, grads, opt, config)
    return params, loss


def _sample_batch(data: np.ndarray, config: TrainConfig, rng, T):
    """Clean windows and per-item levels; length and clean prefix are shared by the batch."""
    clip_len = config.lengths[rng.integers(len(config.lengths))]
    prefix = config.keep_clean and config.level_mode == "progressive" and rng.random() < config.clean_prob
    n = clip_len + (config.C if prefix else 0)
    if data.shape[1] < n:
        raise ValueError(f"training sequences of {data.shape[1]} frames are shorter than the {n}-frame window")
    rows = rng.integers(0, data.shape[0], config.batch)
    starts = rng.integers(0, data.shape[1] - n + 1, config.batch)
    x0 = np.stack([data[i, s : s + n] for i, s in zip(rows, starts)])
    levels = np.stack([_item_levels(config, clip_len, prefix, rng, T) for _ in range(config.batch)])
    return x0, levels


@dataclass
class ValidationSet:
    x0: np.ndarray
    levels: np.ndarray
    noise: np.ndarray


def make_validation_set(data: np.ndarray, config: TrainConfig, vs: VarianceSchedule, seed: int) -> ValidationSet:
    """Full progressive windows at random points of the shift period (no random shift)."""
    rng = np.random.default_rng(seed)
    C, S = config.C, config.S
    n = config.max_frames
    grid = SamplingSchedule(vs.T, S).grid
    rows = rng.integers(0, data.shape[0], config.val_size)
    starts = rng.integers(0, data.shape[1] - n + 1, config.val_size)
    x0 = np.stack([data[i, s : s + n] for i, s in zip(rows, starts)])
    levels = []
    for _ in range(config.val_size):
        r = rng.integers(0, C)
        lv = np.repeat(grid[(np.arange(S // C) + 1) * C - r], C)
        if config.keep_clean:
            lv = np.concatenate([np.zeros(C), lv])
        levels.append(lv)
    levels = np.stack(levels)
    return ValidationSet(x0, levels, rng.standard_normal(x0.shape))


def band_of(levels: np.ndarray, T: float) -> np.ndarray:
    """0/1/2 for low ``(0, T/3)``, mid ``[T/3, 2T/3)``, high ``[2T/3, T]``; -1 for clean frames."""
    b = np.minimum((levels / T * 3).astype(int), 2)
    return np.where(levels > 0, b, -1)


def evaluate_bands(denoiser, val: ValidationSet, vs: VarianceSchedule) -> dict[str, float]:
    """Noise-prediction MSE on the validation set, split by level band."""
    sq = np.empty(val.levels.shape)
    for i in range(val.x0.shape[0]):
        xt = forward_diffuse(val.x0[i], val.levels[i], val.noise[i], vs)
        eps = denoiser.predict_eps(xt, val.levels[i], vs)
        sq[i] = np.mean((eps - val.noise[i]) ** 2, axis=-1)
    bands = band_of(val.levels, vs.T)
    return {name: float(sq[bands == b].mean()) for b, name in enumerate(BANDS)}


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


@dataclass
class TrainResult:
    params: ToyDenoiserParams
    history: list[dict] = field(default_factory=list)
    step: int = 0


def train_run(
    config: TrainConfig,
    data: np.ndarray,
    vs: VarianceSchedule,
    out_dir: str | Path | None = None,
    val_data: np.ndarray | None = None,
    resume: bool = False,
    stop_at: int | None = None,
) -> TrainResult:
    """Train for ``config.steps`` steps with validation and checkpoints every ``cadence`` steps.

    With ``resume`` the latest checkpoint in ``out_dir`` restores parameters,
    optimizer moments, step counter and RNG state. ``stop_at`` ends the run
    early (after checkpointing), for interrupted-run tests.
    """
    from .denoisers import ToyDenoiser

    data = np.asarray(data, dtype=np.float64)
    if val_data is None:
        split = max(1, data.shape[0] // 10)
        data, val_data = data[split:], data[:split]
    out = Path(out_dir) if out_dir is not None else None
    val = make_validation_set(val_data, config, vs, config.seed + 1)

    ckpt = out / "checkpoint" if out is not None else None
    if resume:
        if ckpt is None or not ckpt.with_suffix(".json").exists():
            raise FileNotFoundError(f"no checkpoint to resume from in {out}")
        params, extra, meta = load_params(ckpt)
        opt = AdamState({k[2:]: v for k, v in extra.items() if k.startswith("m/")}, {k[2:]: v for k, v in extra.items() if k.startswith("v/")}, int(meta["adam_t"]))
        rng = _rng_from_state(meta["rng_state"])
        start = int(meta["step"])
    else:
        rng = np.random.default_rng(config.seed)
        params = ToyDenoiserParams.init(data.shape[2], config.hidden, config.max_frames, rng, config.n_freqs)
        opt = AdamState.zeros(params)
        start = 0
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "metrics.csv", "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "train_loss", "val_loss_low", "val_loss_mid", "val_loss_high"])
            (out / "train_config.json").write_text(json.dumps(asdict(config), indent=2))

    result = TrainResult(params, step=start)
    running = []
    end = config.steps if stop_at is None else min(stop_at, config.steps)
    for step in range(start + 1, end + 1):
        x0, lv = _sample_batch(data, config, rng, vs.T)
        _, loss = train_step(params, opt, x0, config, vs, rng, levels=lv)
        running.append(loss)
        if step % config.cadence == 0:
            bands = evaluate_bands(ToyDenoiser(params), val, vs)
            row = {"step": step, "train_loss": float(np.mean(running)), **{f"val_loss_{b}": bands[b] for b in BANDS}}
            running = []
            result.history.append(row)
            log.info("step %d train %.4f val %s", step, row["train_loss"], bands)
            if out is not None:
                with open(out / "metrics.csv", "a", newline="") as fh:
                    csv.writer(fh).writerow([row[k] for k in ("step", "train_loss", "val_loss_low", "val_loss_mid", "val_loss_high")])
                _checkpoint(ckpt, params, opt, rng, step, config)
        result.step = step
    if out is not None and result.step % config.cadence:
        _checkpoint(ckpt, params, opt, rng, result.step, config)
    return result


def _checkpoint(stem, params, opt: AdamState, rng, step: int, config: TrainConfig) -> None:
    extra = {f"m/{k}": v for k, v in opt.m.items()}
    extra.update({f"v/{k}": v for k, v in opt.v.items()})
    meta = {"step": step, "adam_t": opt.t, "rng_state": _rng_state(rng), "config": asdict(config)}
    save_params(stem, params, extra, meta)
