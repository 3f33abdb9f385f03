"""Synthetic latent sequences with closed-form statistics, and their file format.

Dataset files start with the magic ``PAVD``, a version byte, a little-endian
``uint32`` header length and a UTF-8 JSON header (generator spec and array
shape), followed by the row-major little-endian float64 payload of shape
``(count, frames, dim)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PAVD"
VERSION = 1


@dataclass(frozen=True)
class SequenceSpec:
    generator: str = "ar1-gaussian"
    length: int = 64
    dim: int = 1
    seed: int = 0
    rho: float = 0.9
    sigma: float = 1.0
    width: float = 2.0
    velocity: float = 0.5
    center: float = 0.0
    noise: float = 0.0
    wrap: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError("length must be positive")
        if self.generator == "ar1-gaussian":
            if abs(self.rho) >= 1 or self.sigma <= 0 or self.dim < 1:
                raise ValueError("ar1-gaussian requires |rho| < 1, sigma > 0, dim >= 1")
        elif self.generator == "moving-bump":
            if self.width <= 0 or self.dim < 8 or self.noise < 0:
                raise ValueError("moving-bump requires width > 0, dim >= 8, noise >= 0")
        else:
            raise ValueError(f"unknown generator {self.generator!r}")


def sample_ar1_sequence(spec: SequenceSpec, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Stationary AR(1) frames; shape ``(length, dim)`` or ``(count, length, dim)``."""
    n = 1 if count is None else count
    out = np.empty((n, spec.length, spec.dim))
    out[:, 0] = spec.sigma * rng.standard_normal((n, spec.dim))
    innov = np.sqrt(1 - spec.rho**2) * spec.sigma
    for f in range(1, spec.length):
        out[:, f] = spec.rho * out[:, f - 1] + innov * rng.standard_normal((n, spec.dim))
    return out[0] if count is None else out


def bump_centers(spec: SequenceSpec) -> np.ndarray:
    c = spec.center + spec.velocity * np.arange(spec.length)
    return np.mod(c, spec.dim) if spec.wrap else c


def sample_moving_bump(spec: SequenceSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian bump of ``width`` moving ``velocity`` cells per frame on a ``dim``-cell grid.

    Returns ``(frames, centers)``. With ``wrap`` distances are periodic;
    otherwise the bump is clipped at the grid edges.
    """
    centers = bump_centers(spec)
    grid = np.arange(spec.dim)
    d = grid[None, :] - centers[:, None]
    if spec.wrap:
        d = (d + spec.dim / 2) % spec.dim - spec.dim / 2
    frames = np.exp(-0.5 * (d / spec.width) ** 2)
    if spec.noise:
        frames = frames + spec.noise * rng.standard_normal(frames.shape)
    return frames, centers


def sample_sequence(spec: SequenceSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.generator == "ar1-gaussian":
        return sample_ar1_sequence(spec, rng)
    return sample_moving_bump(spec, rng)[0]


def make_dataset(spec: SequenceSpec, count: int) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    if spec.generator == "ar1-gaussian":
        return sample_ar1_sequence(spec, rng, count)
    return np.stack([sample_moving_bump(spec, rng)[0] for _ in range(count)])


def write_dataset(sequences: np.ndarray, path: str | Path, spec: SequenceSpec | None = None) -> None:
    seqs = np.ascontiguousarray(sequences, dtype="<f8")
    if seqs.ndim != 3:
        raise ValueError(f"expected (count, frames, dim) array, got shape {seqs.shape}")
    header = json.dumps({"shape": list(seqs.shape), "spec": asdict(spec) if spec else None}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]) + struct.pack("<I", len(header)) + header)
        fh.write(seqs.tobytes(order="C"))


def read_dataset(path: str | Path) -> tuple[np.ndarray, SequenceSpec | None]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a dataset file (bad magic {data[:4]!r})")
    if len(data) < 9 or data[4] != VERSION:
        raise ValueError(f"{path}: unsupported or corrupt header")
    (hlen,) = struct.unpack("<I", data[5:9])
    try:
        header = json.loads(data[9 : 9 + hlen])
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"{path}: corrupt header ({exc})") from None
    payload = data[9 + hlen :]
    if len(payload) != 8 * int(np.prod(shape)):
        raise ValueError(f"{path}: payload size {len(payload)} does not match shape {shape}")
    seqs = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    spec = SequenceSpec(**header["spec"]) if header.get("spec") else None
    return seqs, spec
