"""Calibrate the scene-change threshold on pure AR(1) sequences.

The threshold is the (1 - fp_rate) quantile of the largest delta-to-rolling-
median ratio seen in each generator sequence, so that at most ``fp_rate`` of
sequences that contain no scene change would report one. The value printed
here (rounded up) is frozen as ``DEFAULT_SCENE_THRESHOLD`` in pavd.metrics.
"""

import argparse

from pavd.metrics import calibrate_scene_threshold


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rho", type=float, default=0.95)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--length", type=int, default=1000)
    ap.add_argument("--window", type=int, default=15)
    ap.add_argument("--sequences", type=int, default=500)
    ap.add_argument("--fp-rate", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    k = calibrate_scene_threshold(args.rho, args.dim, args.length, args.window, args.sequences, args.fp_rate, args.seed)
    print(f"threshold for <= {args.fp_rate:.0%} false-positive sequences: {k:.4f}")


if __name__ == "__main__":
    main()
