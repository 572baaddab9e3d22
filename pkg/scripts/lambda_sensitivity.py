"""IGP-MRF-01 BT vs GFB-MRF errors over a range of TV weights on noisy desk data."""

import argparse

from mrfrecon.bench import run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 5e-4, 5e-3, 2e-2])
    ap.add_argument("--lengths", type=int, nargs="+", default=[200, 600])
    args = ap.parse_args()

    for lam in args.lambdas:
        cells = run_sweep({"lengths": args.lengths, "noise": [0.001], "lambda": lam,
                           "methods": ["igp-mrf-01-bt", "gfb-mrf"]})
        for c in cells:
            print(f"lambda={lam:<8g} {c.method:<14} L={c.L:<4} T1 {c.err_t1:.4f}  T2 {c.err_t2:.4f}")


if __name__ == "__main__":
    main()
