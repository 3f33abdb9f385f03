"""Metrics over generated sequences and the method-comparison harness."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

CURVES = ("mean", "variance", "autocorr", "delta")

# Frozen by scripts/calibrate_scene_threshold.py on pure AR(1) sequences
# (rho=0.95, dim=16, 1000 frames, window 15); see that script for the run.
DEFAULT_SCENE_THRESHOLD = 2.0
DEFAULT_SCENE_WINDOW = 15
DEFAULT_FPS = 10


@dataclass
class MetricReport:
    clip_len: int
    curves: dict[str, list[float]]
    drift: dict[str, float]
    scene_events: int
    scene_segments: int
    scene_indices: list[int]
    velocity_error: float | None = None
    reference: dict[str, float] = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        out = {f"drift_{k}": v for k, v in self.drift.items()}
        out.update({f"mean_{k}": float(np.mean(v)) for k, v in self.curves.items()})
        out["scene_events"] = self.scene_events
        out["scene_segments"] = self.scene_segments
        if self.velocity_error is not None:
            out["velocity_error"] = self.velocity_error
        return out


def clip_bounds(n: int, clip_len: int) -> list[tuple[int, int]]:
    """Consecutive clips of ``clip_len`` frames; the last one absorbs any remainder."""
    k = n // clip_len
    bounds = [(i * clip_len, (i + 1) * clip_len) for i in range(k)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def lag1_autocorr(x: np.ndarray) -> float:
    """Pooled lag-1 autocorrelation about the clip mean; 1.0 for constant input."""
    c = x - x.mean()
    den = np.sum(c * c)
    if den == 0:
        return 1.0
    return float(np.sum(c[1:] * c[:-1]) / den)


def frame_deltas(seq: np.ndarray) -> np.ndarray:
    """RMS change between consecutive frames."""
    return np.sqrt(np.mean(np.diff(seq, axis=0) ** 2, axis=-1))


def compute_clip_metrics(seq, clip_len: int, reference: dict | None = None, scene_threshold=DEFAULT_SCENE_THRESHOLD, scene_window=DEFAULT_SCENE_WINDOW, velocity=None) -> MetricReport:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.shape[0] < 2 * clip_len:
        raise ValueError(f"sequence of {seq.shape[0]} frames is shorter than two clips of {clip_len}")
    curves = {k: [] for k in CURVES}
    for a, b in clip_bounds(seq.shape[0], clip_len):
        clip = seq[a:b]
        curves["mean"].append(float(clip.mean()))
        curves["variance"].append(float(clip.var()))
        curves["autocorr"].append(lag1_autocorr(clip))
        curves["delta"].append(float(frame_deltas(clip).mean()))
    q = max(1, len(curves["mean"]) // 4)
    drift = {k: abs(float(np.mean(v[-q:]) - np.mean(v[:q]))) for k, v in curves.items()}
    events, idx = detect_scene_changes(seq, scene_window, scene_threshold)
    vel = None
    if velocity is not None:
        vel = estimate_velocity(seq, velocity)[1]
    return MetricReport(clip_len, curves, drift, events, events + 1, idx, vel, dict(reference or {}))


def detect_scene_changes(seq, window: int = DEFAULT_SCENE_WINDOW, threshold: float = DEFAULT_SCENE_THRESHOLD) -> tuple[int, list[int]]:
    """Flag frames whose change from the previous frame exceeds ``threshold``
    times the rolling median change over ``window`` neighbours on each side.

    Runs of consecutive flagged frames count as one event; returns the event
    count and the first frame index of each event.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.shape[0] <= max(window, 1):
        return 0, []
    d = frame_deltas(seq)
    n = d.size
    flags = np.zeros(n, dtype=bool)
    for f in range(n):
        med = np.median(d[max(0, f - window) : f + window + 1])
        flags[f] = d[f] > threshold * med if med > 0 else d[f] > 0
    events = []
    for f in np.flatnonzero(flags):
        if f == 0 or not flags[f - 1]:
            events.append(int(f) + 1)
    return len(events), events


def calibrate_scene_threshold(rho: float, dim: int, length: int, window: int, n_sequences: int, fp_rate: float = 0.01, seed: int = 0) -> float:
    """Smallest threshold with at most ``fp_rate`` of pure AR(1) sequences showing any detection."""
    from .synthetic import SequenceSpec, sample_ar1_sequence

    rng = np.random.default_rng(seed)
    spec = SequenceSpec(length=length, dim=dim, rho=rho)
    worst = []
    for _ in range(n_sequences):
        d = frame_deltas(sample_ar1_sequence(spec, rng))
        ratios = [d[f] / np.median(d[max(0, f - window) : f + window + 1]) for f in range(d.size)]
        worst.append(max(ratios))
    return float(np.quantile(worst, 1 - fp_rate))


def circular_centroid(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[-1]
    phase = np.exp(2j * np.pi * np.arange(n) / n)
    z = frames @ phase
    if np.any(np.abs(z) < 1e-12):
        raise ValueError("degenerate frame: centroid undefined")
    return np.mod(np.angle(z) * n / (2 * np.pi), n)


def estimate_velocity(bump_seq, true_velocity: float | None = None) -> tuple[np.ndarray, float | None]:
    """Per-frame velocity from the unwrapped circular centroid, and MAE against ``true_velocity``."""
    seq = np.asarray(bump_seq, dtype=np.float64)
    n = seq.shape[-1]
    c = circular_centroid(seq)
    track = np.unwrap(c * 2 * np.pi / n) * n / (2 * np.pi)
    v = np.diff(track)
    mae = None if true_velocity is None else float(np.mean(np.abs(v - true_velocity)))
    return v, mae


# ---------------------------------------------------------------------------
# Method comparison


@dataclass(frozen=True)
class MethodSpec:
    method: str
    steps: int = 30
    chunk: int = 5
    keep_clean: bool = True
    frames: int = 1000
    eta: float = 0.0

    @property
    def window(self) -> int:
        return self.steps + (self.chunk if self.keep_clean else 0)


def run_method(spec: MethodSpec, denoiser, vs, seed: int, dim: int, seed_clip=None) -> np.ndarray:
    """Generate ``spec.frames`` frames with one method.

    ``seed_clip`` (clean frames) seeds PA (as the initial window) and the
    replacement methods (their last ``C`` frames as condition); without it PA
    grows its window from noise.
    """
    from . import baselines, window

    if spec.method == "pa":
        cfg = window.GenerationConfig(spec.steps, spec.chunk, spec.frames, spec.eta, spec.keep_clean, seed_clip is None, False, seed)
        x0 = None if seed_clip is None else np.asarray(seed_clip)[: cfg.window_len]
        return window.generate(cfg, denoiser, vs, x0=x0, dim=dim)
    F = spec.window
    if spec.method == "independent":
        cfg = baselines.ReplacementConfig(F, 0, "independent", spec.steps, spec.eta, seed)
        total = math.ceil(spec.frames / F) * F
        return baselines.generate_independent_clips(cfg, denoiser, vs, dim, total)[: spec.frames]
    E = spec.chunk
    method = {"rw": "with-noise", "rn": "without-noise"}[spec.method]
    cfg = baselines.ReplacementConfig(F, E, method, spec.steps, spec.eta, seed)
    total = E + math.ceil((spec.frames - E) / (F - E)) * (F - E)
    if seed_clip is None:
        raise ValueError("replacement baselines need a seed clip")
    fn = baselines.generate_replacement_with_noise if method == "with-noise" else baselines.generate_replacement_without_noise
    return fn(cfg, denoiser, vs, seed_clip, total)[: spec.frames]


def compare_methods(specs, denoiser, vs, seeds, dim: int, seed_clip_fn=None, clip_len: int = 2 * DEFAULT_FPS, out_dir=None, **metric_kw):
    """One row of metric scalars per (method, seed), plus per-method mean and standard error.

    ``seed_clip_fn(seed)`` supplies the clean seed clip shared by all methods
    for that seed. Rows are sorted by (method, seed) so the result does not
    depend on the order of ``specs``.
    """
    rows = []
    for spec in specs:
        for seed in seeds:
            clip = seed_clip_fn(seed) if seed_clip_fn is not None else None
            seq = run_method(spec, denoiser, vs, seed, dim, clip)
            report = compute_clip_metrics(seq, clip_len, **metric_kw)
            rows.append({"method": spec.method, "seed": int(seed), **report.scalars()})
    rows.sort(key=lambda r: (r["method"], r["seed"]))
    summary = summarize(rows)
    if out_dir is not None:
        write_comparison(rows, summary, out_dir)
    return rows, summary


def summarize(rows: list[dict]) -> dict[str, dict[str, tuple[float, float]]]:
    out: dict[str, dict[str, tuple[float, float]]] = {}
    for method in sorted({r["method"] for r in rows}):
        sel = [r for r in rows if r["method"] == method]
        keys = [k for k in sel[0] if k not in ("method", "seed")]
        stats = {}
        for k in keys:
            v = np.array([r[k] for r in sel], dtype=np.float64)
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            stats[k] = (float(v.mean()), se)
        out[method] = stats
    return out


def write_comparison(rows, summary, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0].keys())
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    doc = {"rows": rows, "summary": {m: {k: {"mean": a, "stderr": b} for k, (a, b) in s.items()} for m, s in summary.items()}}
    (out / "comparison.json").write_text(json.dumps(doc, indent=2))


def read_comparison_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if k == "method":
                    row[k] = v
                elif k in ("seed", "scene_events", "scene_segments"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Plots


def write_svg_line_chart(path, values, title: str, width: int = 480, height: int = 240) -> None:
    """Bare SVG polyline of ``values`` against their index."""
    v = np.asarray(values, dtype=np.float64)
    pad = 30
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo or 1.0
    xs = pad + (width - 2 * pad) * np.arange(v.size) / max(v.size - 1, 1)
    ys = height - pad - (height - 2 * pad) * (v - lo) / span
    pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="100%" height="100%" fill="white"/>'
        f'<text x="{pad}" y="18" font-size="13" font-family="sans-serif">{title}</text>'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>'
        f'<text x="2" y="{pad + 4}" font-size="10">{hi:.3g}</text>'
        f'<text x="2" y="{height - pad}" font-size="10">{lo:.3g}</text>'
        f'<text x="{width - pad}" y="{height - 8}" font-size="10" text-anchor="end">clip</text>'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/></svg>'
    )
    Path(path).write_text(svg)


def write_report(report: MetricReport, run_dir) -> None:
    run_dir = Path(run_dir)
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip", *CURVES])
        for i in range(len(report.curves["mean"])):
            w.writerow([i, *(repr(report.curves[k][i]) for k in CURVES)])
    (run_dir / "metrics.json").write_text(json.dumps({"scalars": report.scalars(), "scene_indices": report.scene_indices, "reference": report.reference, "clip_len": report.clip_len}, indent=2))
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    for k in CURVES:
        write_svg_line_chart(plots / f"{k}.svg", report.curves[k], f"{k} per {report.clip_len}-frame clip")


def report_to_dict(report: MetricReport) -> dict:
    return asdict(report)
