"""Noise predictors over (latents, per-frame levels).

Two implementations share the ``predict_eps(xt, levels, vs)`` interface:

* :class:`AnalyticDenoiser` returns the exact posterior mean of the noise when
  the clean window is drawn from a zero-mean Gaussian prior.
* :class:`ToyDenoiser` is a small trainable network. Each frame's level goes
  through a fixed sinusoidal basis and a learned projection (levels of all
  ``B x F`` frames are flattened into one batch for this), the embedding is
  added to the frame features, and one learned ``F x F`` layer mixes features
  across frames. Gradients are written out by hand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz

from .diffusion import ShapeError, _levels
from .schedule import VarianceSchedule


class Denoiser(Protocol):
    def predict_eps(self, xt: np.ndarray, levels, vs: VarianceSchedule) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Gaussian oracle


@dataclass(frozen=True)
class GaussianProcessPrior:
    """Zero-mean Gaussian over a window of ``frames x dim`` values.

    ``cov`` is indexed frame-major (``f * dim + d``). When the dimensions are
    independent with a shared frame covariance, ``frame_cov`` holds that
    ``frames x frames`` matrix and ``cov == kron(frame_cov, I_dim)``.
    """

    cov: np.ndarray
    frames: int
    dim: int
    frame_cov: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.frames * self.dim
        if self.cov.shape != (n, n):
            raise ShapeError(f"covariance shape {self.cov.shape} does not match {self.frames} frames x {self.dim} dims")
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-12:
            raise ValueError("covariance is not symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        L = np.linalg.cholesky(self.cov)
        z = rng.standard_normal((n, self.frames * self.dim))
        return (z @ L.T).reshape(n, self.frames, self.dim)


def build_ar1_prior(rho: float, sigma: float, frames: int, dim: int) -> GaussianProcessPrior:
    """Stationary AR(1) prior: ``cov[f, g] = sigma^2 rho^|f-g|`` per dimension."""
    if abs(rho) >= 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    frame_cov = sigma**2 * toeplitz(rho ** np.arange(frames, dtype=np.float64))
    return GaussianProcessPrior(np.kron(frame_cov, np.eye(dim)), frames, dim, frame_cov)


class AnalyticDenoiser:
    """Exact ``E[eps | x^t]`` under a Gaussian prior.

    Windows shorter than the prior use its leading block, which is exact for
    stationary priors such as :func:`build_ar1_prior`.
    """

    def __init__(self, prior: GaussianProcessPrior, cache_size: int = 64):
        self.prior = prior
        self.cache_size = cache_size
        self._factors: dict[bytes, tuple] = {}

    def _system(self, levels, vs: VarianceSchedule, n: int):
        t = _levels(levels)
        if t.ndim != 1 or t.size != n:
            raise ShapeError(f"expected {n} shared frame levels, got shape {t.shape}")
        if n > self.prior.frames:
            raise ShapeError(f"window of {n} frames exceeds prior length {self.prior.frames}")
        a = np.asarray(vs.alpha_bar(t), dtype=np.float64).reshape(n)
        return a

    def _solve(self, xt: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(K A G^-1 x, G^-1 x)`` with ``G = A K A + diag(1 - a)``."""
        n, d = xt.shape[-2], xt.shape[-1]
        if d != self.prior.dim:
            raise ShapeError(f"frame dim {d} != prior dim {self.prior.dim}")
        sa = np.sqrt(a)
        if self.prior.frame_cov is not None:
            K = self.prior.frame_cov[:n, :n]
            G = sa[:, None] * K * sa[None, :] + np.diag(1.0 - a)
            w = np.linalg.solve(G, xt)
            return K @ (sa[:, None] * w), w
        K = self.prior.cov[: n * d, : n * d]
        sa_full = np.repeat(sa, d)
        factor = self._factor(K, sa_full, a, d)
        flat = xt.reshape(-1, n * d)
        w = cho_solve(factor, flat.T).T.reshape(*xt.shape[:-2], n * d)
        x0 = (w * sa_full) @ K.T
        return x0.reshape(xt.shape), w.reshape(xt.shape)

    def _factor(self, K, sa_full, a, d):
        # dense windows repeat a handful of level patterns, so keep their factors
        key = a.tobytes()
        hit = self._factors.get(key)
        if hit is None:
            G = sa_full[:, None] * K * sa_full[None, :] + np.diag(np.repeat(1.0 - a, d))
            hit = cho_factor(G)
            if len(self._factors) >= self.cache_size:
                self._factors.pop(next(iter(self._factors)))
            self._factors[key] = hit
        return hit

    def posterior_mean_x0(self, xt, levels, vs: VarianceSchedule) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.float64)
        a = self._system(levels, vs, xt.shape[-2])
        return self._solve(xt, a)[0]

    def predict_eps(self, xt, levels, vs: VarianceSchedule) -> np.ndarray:
        xt = np.asarray(xt, dtype=np.float64)
        a = self._system(levels, vs, xt.shape[-2])
        _, w = self._solve(xt, a)
        # E[eps|x] = sqrt(1-a) G^-1 x; zero for clean frames
        return np.sqrt(1.0 - a)[:, None] * w


class ZeroDenoiser:
    def predict_eps(self, xt, levels, vs: VarianceSchedule) -> np.ndarray:
        return np.zeros_like(np.asarray(xt, dtype=np.float64))


# ---------------------------------------------------------------------------
# Toy network

PARAM_NAMES = ("W_in", "W_t", "b1", "M", "W_2", "W_t2", "b2", "W_out", "b_out")


@dataclass
class ToyDenoiserParams:
    dim: int
    hidden: int
    max_frames: int
    freqs: np.ndarray
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, dim: int, hidden: int, max_frames: int, rng: np.random.Generator, n_freqs: int = 8, scale: float = 1.0):
        freqs = np.pi * np.arange(1, n_freqs + 1, dtype=np.float64) / 2
        e = 2 * n_freqs
        arrays = {
            "W_in": rng.standard_normal((dim, hidden)) * scale / np.sqrt(dim),
            "W_t": rng.standard_normal((e, hidden)) * scale / np.sqrt(e),
            "b1": np.zeros(hidden),
            "M": np.zeros((max_frames, max_frames)),
            "W_2": rng.standard_normal((hidden, hidden)) * scale / np.sqrt(hidden),
            "W_t2": rng.standard_normal((e, hidden)) * scale / np.sqrt(e),
            "b2": np.zeros(hidden),
            "W_out": rng.standard_normal((hidden, dim)) * scale / np.sqrt(hidden),
            "b_out": np.zeros(dim),
        }
        return cls(dim, hidden, max_frames, freqs, arrays)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        e = 2 * self.freqs.size
        return {
            "W_in": (self.dim, self.hidden),
            "W_t": (e, self.hidden),
            "b1": (self.hidden,),
            "M": (self.max_frames, self.max_frames),
            "W_2": (self.hidden, self.hidden),
            "W_t2": (e, self.hidden),
            "b2": (self.hidden,),
            "W_out": (self.hidden, self.dim),
            "b_out": (self.dim,),
        }

    def validate(self) -> None:
        for name, shape in self.shapes().items():
            arr = self.arrays.get(name)
            if arr is None or arr.shape != shape:
                raise ShapeError(f"parameter {name} has shape {None if arr is None else arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} has non-finite entries")

    def copy(self) -> "ToyDenoiserParams":
        return ToyDenoiserParams(self.dim, self.hidden, self.max_frames, self.freqs.copy(), {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}


def level_features(levels: np.ndarray, freqs: np.ndarray, T: float) -> np.ndarray:
    """Sinusoidal basis of each level; leading axes are flattened and restored."""
    shape = levels.shape
    flat = levels.reshape(-1, 1) / T
    phase = flat * freqs[None, :]
    feats = np.concatenate([np.sin(phase), np.cos(phase)], axis=1)
    return feats.reshape(*shape, -1)


def _prepare(params: ToyDenoiserParams, xt, levels, vs: VarianceSchedule):
    xt = np.asarray(xt, dtype=np.float64)
    squeeze = xt.ndim == 2
    if squeeze:
        xt = xt[None]
    if xt.ndim != 3 or xt.shape[-1] != params.dim:
        raise ShapeError(f"expected (B, F, {params.dim}) latents, got {xt.shape}")
    n = xt.shape[1]
    if n > params.max_frames:
        raise ShapeError(f"{n} frames exceed the network's {params.max_frames}-frame window")
    t = _levels(levels)
    t = np.broadcast_to(t, xt.shape[:2]) if t.ndim < 2 else t
    if t.shape != xt.shape[:2]:
        raise ShapeError(f"levels shape {t.shape} does not match latents {xt.shape[:2]}")
    return xt, t, squeeze


def _forward(params: ToyDenoiserParams, xt: np.ndarray, t: np.ndarray, T: float):
    p = params.arrays
    n = xt.shape[1]
    phi = level_features(t, params.freqs, T)
    a = np.tanh(xt @ p["W_in"] + phi @ p["W_t"] + p["b1"])
    M = p["M"][:n, :n]
    z = a + np.einsum("fg,bgh->bfh", M, a)
    h2 = np.tanh(z @ p["W_2"] + phi @ p["W_t2"] + p["b2"])
    out = h2 @ p["W_out"] + p["b_out"]
    return out, (phi, a, z, h2)


def toy_predict_eps(params: ToyDenoiserParams, xt, levels, vs: VarianceSchedule) -> np.ndarray:
    xt, t, squeeze = _prepare(params, xt, levels, vs)
    out, _ = _forward(params, xt, t, vs.T)
    return out[0] if squeeze else out


def toy_backward(params: ToyDenoiserParams, xt, levels, eps_true, vs: VarianceSchedule, mask=None):
    """Loss and exact gradients of the mean squared noise error.

    ``mask`` (shape ``(B, F)``) restricts the mean to selected frames.
    Returns ``(loss, grads)`` with ``grads`` keyed like ``params.arrays``.
    """
    xt, t, squeeze = _prepare(params, xt, levels, vs)
    eps_true = np.asarray(eps_true, dtype=np.float64)
    if squeeze:
        eps_true = eps_true[None]
    if eps_true.shape != xt.shape:
        raise ShapeError(f"eps shape {eps_true.shape} != latents {xt.shape}")
    p = params.arrays
    n = xt.shape[1]
    out, (phi, a, z, h2) = _forward(params, xt, t, vs.T)
    if mask is None:
        w = np.ones(xt.shape[:2])
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=np.float64), xt.shape[:2])
    count = w.sum() * params.dim
    if count == 0:
        raise ValueError("mask selects no frames")
    resid = (out - eps_true) * w[..., None]
    loss = float(np.sum(resid * (out - eps_true)) / count)
    dout = 2.0 * resid / count

    g = params.zeros_like()
    flat = lambda arr: arr.reshape(-1, arr.shape[-1])  # noqa: E731
    g["W_out"] = flat(h2).T @ flat(dout)
    g["b_out"] = dout.sum(axis=(0, 1))
    dpre2 = (dout @ p["W_out"].T) * (1.0 - h2**2)
    g["W_2"] = flat(z).T @ flat(dpre2)
    g["W_t2"] = flat(phi).T @ flat(dpre2)
    g["b2"] = dpre2.sum(axis=(0, 1))
    dz = dpre2 @ p["W_2"].T
    M = p["M"][:n, :n]
    da = dz + np.einsum("fg,bfh->bgh", M, dz)
    g["M"][:n, :n] = np.einsum("bfh,bgh->fg", dz, a)
    dpre1 = da * (1.0 - a**2)
    g["W_in"] = flat(xt).T @ flat(dpre1)
    g["W_t"] = flat(phi).T @ flat(dpre1)
    g["b1"] = dpre1.sum(axis=(0, 1))
    return loss, g


class ToyDenoiser:
    def __init__(self, params: ToyDenoiserParams):
        params.validate()
        self.params = params

    def predict_eps(self, xt, levels, vs: VarianceSchedule) -> np.ndarray:
        return toy_predict_eps(self.params, xt, levels, vs)


# ---------------------------------------------------------------------------
# Checkpoints: <stem>.bin holds little-endian float64 arrays back to back in
# manifest order; <stem>.json lists names, shapes and metadata.


def save_arrays(stem: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": name, "shape": list(arr.shape)})
            fh.write(arr.tobytes(order="C"))
    manifest = {"dtype": "<f8", "order": "C", "arrays": entries, "meta": meta}
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_arrays(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays, pos = {}, 0
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        if pos + size > raw.size:
            raise ValueError(f"checkpoint payload too short for {entry['name']}")
        arrays[entry["name"]] = raw[pos : pos + size].reshape(entry["shape"]).astype(np.float64)
        pos += size
    if pos != raw.size:
        raise ValueError("checkpoint payload has trailing data")
    return arrays, manifest["meta"]


def save_params(stem: str | Path, params: ToyDenoiserParams, extra: dict[str, np.ndarray] | None = None, meta: dict | None = None) -> None:
    arrays = {f"params/{k}": params.arrays[k] for k in PARAM_NAMES}
    arrays["freqs"] = params.freqs
    for k, v in (extra or {}).items():
        arrays[k] = v
    header = {"dim": params.dim, "hidden": params.hidden, "max_frames": params.max_frames, **(meta or {})}
    save_arrays(stem, arrays, header)


def load_params(stem: str | Path) -> tuple[ToyDenoiserParams, dict[str, np.ndarray], dict]:
    arrays, meta = load_arrays(stem)
    params = ToyDenoiserParams(
        int(meta["dim"]),
        int(meta["hidden"]),
        int(meta["max_frames"]),
        arrays.pop("freqs"),
        {k: arrays.pop(f"params/{k}") for k in PARAM_NAMES},
    )
    params.validate()
    return params, arrays, meta
