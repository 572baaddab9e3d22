"""Run the desk sweep and print the method ordering per noisy cell.

    python3 scripts/desk_sweep.py --out runs/desk
    python3 scripts/desk_sweep.py --spec my_spec.json --out runs/custom
"""

import argparse
import json
import logging
import time
from pathlib import Path

from mrfrecon.bench import DEFAULT_SWEEP, run_sweep, sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spec", help="JSON overrides for the default sweep")
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    spec = {**DEFAULT_SWEEP, **(json.loads(Path(args.spec).read_text()) if args.spec else {})}
    t0 = time.perf_counter()
    cells = run_sweep(spec)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(sweep_csv(cells, timing=spec["timing"]))

    by = {(c.method, c.L, c.noise): c for c in cells}
    print(f"{'L':>5} {'noise':>7} {'param':>5} " + " ".join(f"{m:>14}" for m in spec["methods"]))
    for L in spec["lengths"]:
        for noise in spec["noise"]:
            for p in ("t1", "t2"):
                vals = [getattr(by[m, L, noise], f"err_{p}") for m in spec["methods"]]
                print(f"{L:>5} {noise:>7g} {p:>5} " + " ".join(
                    f"{v:>14.4f}" if v is not None else f"{'failed':>14}" for v in vals))
    print(f"wall time {elapsed:.1f} s, results in {out / 'results.csv'}")


if __name__ == "__main__":
    main()
