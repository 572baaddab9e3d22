"""Gap between a short Chambolle run and a long reference, per weight."""

import argparse

import numpy as np

from mrfrecon.tv import chambolle_prox


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--weights", type=float, nargs="+", default=[0.01, 0.1, 1.0])
    ap.add_argument("--iters", type=int, nargs="+", default=[10, 50, 200, 1000])
    ap.add_argument("--seed", type=int, default=6)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    imgs = [rng.random((args.size, args.size)) for _ in range(args.images)]
    print("weight " + " ".join(f"{n:>9d}" for n in args.iters))
    for w in args.weights:
        refs = [chambolle_prox(f, w, 2000) for f in imgs]
        row = []
        for n in args.iters:
            row.append(max(np.linalg.norm(chambolle_prox(f, w, n) - r) / np.linalg.norm(r)
                           for f, r in zip(imgs, refs)))
        print(f"{w:>6g} " + " ".join(f"{g:>9.4f}" for g in row))


if __name__ == "__main__":
    main()
