"""Command-line front end: ``pavd {gen-data,train,sample,eval,compare}``.

Every subcommand accepts ``--config FILE`` (JSON). Values from the file
override built-in defaults and explicit flags override the file. A run's
``manifest.json`` is also a valid ``sample`` config, which replays the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, synthetic
from .denoisers import AnalyticDenoiser, ToyDenoiser, build_ar1_prior, load_params
from .runio import FrameLog, RunManifest, read_frame_log
from .schedule import ScheduleError, make_variance_schedule
from .window import ConfigError

log = logging.getLogger("pavd")

METHOD_NAMES = ("pa", "rw", "rn", "independent")

SAMPLE_DEFAULTS = {
    "method": "pa",
    "steps": 30,
    "chunk": 5,
    "frames": 1000,
    "keep_clean": True,
    "seed": 0,
    "eta": 0.0,
    "terminate": False,
    "init_video": None,
    "schedule": "linear-beta",
    "denoiser": "analytic",
    "checkpoint": None,
    "rho": 0.9,
    "sigma": 1.0,
    "dim": 16,
}

GEN_DEFAULTS = {
    "generator": "ar1",
    "count": 100,
    "length": 64,
    "dim": 16,
    "rho": 0.9,
    "sigma": 1.0,
    "width": 2.0,
    "velocity": 0.5,
    "noise": 0.0,
    "seed": 0,
}

TRAIN_DEFAULTS = {
    "steps": 2000,
    "batch": 32,
    "lr": 3e-3,
    "S": 10,
    "C": 2,
    "mode": "progressive",
    "keep_clean": True,
    "hidden": 64,
    "seed": 0,
    "cadence": 100,
    "schedule": "linear-beta",
}


class UsageError(Exception):
    pass


def _merge(defaults: dict, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        doc = doc.get("config", doc)
        unknown = set(doc) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _bool_flag(p, name: str, dest: str, help: str) -> None:
    p.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help)
    p.add_argument(f"--no-{name}", dest=dest, action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pavd", description="Progressive autoregressive diffusion sampling on synthetic latents.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset file")
    g.add_argument("--config")
    g.add_argument("--generator", choices=("ar1", "bump"))
    for name, typ in (("count", int), ("length", int), ("dim", int), ("rho", float), ("sigma", float), ("width", float), ("velocity", float), ("noise", float), ("seed", int)):
        g.add_argument(f"--{name}", type=typ)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the toy denoiser")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    for name, typ in (("steps", int), ("batch", int), ("lr", float), ("S", int), ("C", int), ("hidden", int), ("seed", int), ("cadence", int)):
        t.add_argument(f"--{name}", type=typ)
    t.add_argument("--mode", choices=("progressive", "uniform"))
    t.add_argument("--schedule", choices=("linear-beta", "cosine"))
    _bool_flag(t, "keep-clean", "keep_clean", "train with a clean leading chunk half of the time")
    t.add_argument("--resume", action="store_true")

    s = sub.add_parser("sample", help="generate a long sequence into a run directory")
    s.add_argument("--config")
    s.add_argument("--method", choices=METHOD_NAMES)
    s.add_argument("--steps", type=int, help="sampling steps S")
    s.add_argument("--chunk", type=int, help="chunk size C")
    s.add_argument("--frames", type=int, help="frames to emit N")
    _bool_flag(s, "keep-clean", "keep_clean", "keep a clean chunk at the window front")
    s.add_argument("--seed", type=int)
    s.add_argument("--eta", type=float)
    s.add_argument("--init-video", dest="init_video", help="dataset file whose first sequence seeds the window")
    s.add_argument("--terminate", action="store_true", default=None)
    s.add_argument("--schedule", choices=("linear-beta", "cosine"))
    s.add_argument("--denoiser", choices=("analytic", "toy"))
    s.add_argument("--checkpoint", help="toy denoiser checkpoint stem")
    s.add_argument("--rho", type=float)
    s.add_argument("--sigma", type=float)
    s.add_argument("--dim", type=int)
    s.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="compute per-clip metrics for a run directory")
    e.add_argument("--run", required=True)
    e.add_argument("--clip-len", type=int, default=2 * metrics.DEFAULT_FPS)
    e.add_argument("--threshold", type=float, default=metrics.DEFAULT_SCENE_THRESHOLD)
    e.add_argument("--window", type=int, default=metrics.DEFAULT_SCENE_WINDOW)

    c = sub.add_parser("compare", help="compare methods over seeds with the analytic AR(1) denoiser")
    c.add_argument("--config")
    c.add_argument("--methods", default="pa,rw,rn,independent")
    c.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    for name, typ in (("steps", int), ("chunk", int), ("frames", int), ("rho", float), ("sigma", float), ("dim", int)):
        c.add_argument(f"--{name}", type=typ)
    c.add_argument("--schedule", choices=("linear-beta", "cosine"))
    c.add_argument("--clip-len", type=int, default=2 * metrics.DEFAULT_FPS)
    c.add_argument("--out", required=True)
    return ap


def cmd_gen_data(args) -> int:
    cfg = _merge(GEN_DEFAULTS, args)
    gen = {"ar1": "ar1-gaussian", "bump": "moving-bump"}[cfg["generator"]]
    spec = synthetic.SequenceSpec(
        generator=gen, length=cfg["length"], dim=cfg["dim"], seed=cfg["seed"], rho=cfg["rho"], sigma=cfg["sigma"],
        width=cfg["width"], velocity=cfg["velocity"], noise=cfg["noise"],
    )
    data = synthetic.make_dataset(spec, cfg["count"])
    synthetic.write_dataset(data, args.out, spec)
    print(f"wrote {data.shape[0]} sequences of {data.shape[1]} x {data.shape[2]} to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, train_run

    cfg = _merge(TRAIN_DEFAULTS, args)
    data, _ = synthetic.read_dataset(args.data)
    vs = make_variance_schedule(cfg["schedule"])
    tc = TrainConfig(
        steps=cfg["steps"], batch=cfg["batch"], lr=cfg["lr"], S=cfg["S"], C=cfg["C"], level_mode=cfg["mode"],
        keep_clean=cfg["keep_clean"], hidden=cfg["hidden"], seed=cfg["seed"], cadence=cfg["cadence"],
    )
    res = train_run(tc, data, vs, out_dir=args.out, resume=args.resume)
    last = res.history[-1] if res.history else {}
    print(f"trained to step {res.step}; last metrics {last}")
    return 0


def _make_denoiser(cfg: dict, window: int):
    if cfg["denoiser"] == "analytic":
        return AnalyticDenoiser(build_ar1_prior(cfg["rho"], cfg["sigma"], window, cfg["dim"]))
    if not cfg.get("checkpoint"):
        raise UsageError("--denoiser toy requires --checkpoint")
    params, _, _ = load_params(cfg["checkpoint"])
    if params.dim != cfg["dim"]:
        raise UsageError(f"checkpoint dim {params.dim} != --dim {cfg['dim']}")
    return ToyDenoiser(params)


def cmd_sample(args) -> int:
    from . import baselines, window

    cfg = _merge(SAMPLE_DEFAULTS, args)
    vs = make_variance_schedule(cfg["schedule"])
    init = None
    if cfg["init_video"]:
        seqs, _ = synthetic.read_dataset(cfg["init_video"])
        init = seqs[0]
        cfg["dim"] = int(init.shape[1])
    S, C, N = cfg["steps"], cfg["chunk"], cfg["frames"]
    if S < 1 or C < 1 or S % C:
        raise ConfigError(f"steps S={S} must be divisible by chunk C={C}")
    if N < 0 or N % C:
        raise ConfigError(f"frames N={N} must be a non-negative multiple of chunk C={C}")
    win = S + (C if cfg["keep_clean"] else 0)
    den = _make_denoiser(cfg, win)
    dim = cfg["dim"]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames_path = out / "frames.bin"
    frames_path.unlink(missing_ok=True)
    manifest = RunManifest(cfg["method"], cfg, cfg["seed"], {**vs.to_dict(), "S": S}, dim)

    with FrameLog(frames_path, dim) as logf:
        if cfg["method"] == "pa":
            gc = window.GenerationConfig(S, C, N, cfg["eta"], cfg["keep_clean"], init is None, cfg["terminate"], cfg["seed"])
            x0 = None
            if init is not None:
                if init.shape[0] < gc.window_len:
                    raise ConfigError(f"initial video has {init.shape[0]} frames; the window needs {gc.window_len}")
                x0 = init[: gc.window_len]
            state = window.start(gc, vs, x0=x0, dim=dim, sink=logf, retain=False)
            window.run(state, den, vs)
        else:
            spec = metrics.MethodSpec(cfg["method"], S, C, cfg["keep_clean"], N, cfg["eta"])
            seed_clip = init
            if seed_clip is None and cfg["method"] != "independent":
                seed_clip = synthetic.sample_ar1_sequence(
                    synthetic.SequenceSpec(length=C, dim=dim, rho=cfg["rho"], sigma=cfg["sigma"]), np.random.default_rng(cfg["seed"])
                )
            seq = metrics.run_method(spec, den, vs, cfg["seed"], dim, seed_clip)
            stride = spec.window - (0 if cfg["method"] == "independent" else C)
            for i, f in enumerate(seq):
                logf(i // stride, i, f)
        manifest.frames = logf.count
    manifest.write(out)
    print(f"wrote {manifest.frames} frames to {frames_path}")
    return 0


def cmd_eval(args) -> int:
    man = RunManifest.read(args.run)
    _, _, frames = read_frame_log(Path(args.run) / "frames.bin", man.dim)
    ref = {"mean": 0.0, "variance": man.config.get("sigma", 1.0) ** 2, "autocorr": man.config.get("rho", 0.0)}
    report = metrics.compute_clip_metrics(frames, args.clip_len, reference=ref, scene_threshold=args.threshold, scene_window=args.window)
    metrics.write_report(report, args.run)
    print(json.dumps(report.scalars(), indent=2))
    return 0


def cmd_compare(args) -> int:
    defaults = {k: SAMPLE_DEFAULTS[k] for k in ("steps", "chunk", "frames", "rho", "sigma", "dim", "schedule")}
    cfg = _merge(defaults, args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = set(methods) - set(METHOD_NAMES)
    if bad:
        raise UsageError(f"unknown methods {sorted(bad)}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    S, C = cfg["steps"], cfg["chunk"]
    if S % C:
        raise ConfigError(f"steps S={S} must be divisible by chunk C={C}")
    vs = make_variance_schedule(cfg["schedule"])
    prior = build_ar1_prior(cfg["rho"], cfg["sigma"], S + C, cfg["dim"])
    den = AnalyticDenoiser(prior)
    specs = [metrics.MethodSpec(m, S, C, True, cfg["frames"]) for m in methods]
    rows, summary = metrics.compare_methods(
        specs, den, vs, seeds, cfg["dim"], lambda s: prior.sample(np.random.default_rng(10_000 + s), 1)[0], args.clip_len, args.out
    )
    for m, stats in summary.items():
        ev, se = stats["scene_events"]
        print(f"{m:12s} scene events {ev:7.2f} +- {se:.2f}   drift(mean) {stats['drift_mean'][0]:.3f}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ScheduleError) as exc:
        print(f"pavd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"pavd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
