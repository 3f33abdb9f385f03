"""Run directories: ``manifest.json`` plus an append-only ``frames.bin``.

Each ``frames.bin`` record is ``<q`` period index, ``<q`` frame index, then
``dim`` little-endian float64 values.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

_HEAD = struct.Struct("<qq")


@dataclass
class RunManifest:
    method: str
    config: dict
    seed: int
    schedule: dict
    dim: int
    frames: int = 0
    created: float = field(default_factory=time.time)

    def write(self, run_dir) -> None:
        Path(run_dir, "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        return cls(**json.loads(Path(run_dir, "manifest.json").read_text()))


class FrameLog:
    """Append-only writer; usable as a window-engine sink."""

    def __init__(self, path, dim: int):
        self.dim = dim
        self.count = 0
        self._fh = open(path, "ab")

    def __call__(self, period: int, index: int, frame: np.ndarray) -> None:
        frame = np.asarray(frame, dtype="<f8")
        if frame.shape != (self.dim,):
            raise ValueError(f"frame shape {frame.shape} != ({self.dim},)")
        self._fh.write(_HEAD.pack(period, index) + frame.tobytes())
        self.count += 1

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_frame_log(path, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(periods, indices, frames)``."""
    raw = Path(path).read_bytes()
    rec = _HEAD.size + 8 * dim
    if len(raw) % rec:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of the {rec}-byte record")
    dt = np.dtype([("period", "<i8"), ("index", "<i8"), ("x", "<f8", (dim,))])
    arr = np.frombuffer(raw, dtype=dt)
    return arr["period"].copy(), arr["index"].copy(), arr["x"].astype(np.float64)
