"""Command-line front end: build-dict, simulate, recon, eval, render, sweep.

Exit codes are 0 on success, 1 on runtime failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (DEFAULT_SWEEP, NoiseSpec, add_noise, make_phantom, relative_error,
                    roi_stats, run_sweep, simulate_measurements, sweep_csv)
from .core import Geometry, read_array, write_array
from .forward import (ForwardModel, cartesian_from_indices, make_cartesian_scheme, make_coil_maps,
                      make_spiral_scheme, spiral_from_coords)
from .sequence import (Dictionary, SequenceSchedule, TissueGrid, build_dictionary, make_schedule,
                       svd_compress)
from .solvers import LAMBDA_NOISE_FREE, LAMBDA_NOISY, METHODS, SolverConfig, run_recon

log = logging.getLogger("mrfrecon")


class UsageError(Exception):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    @property
    def config_hash(self) -> str:
        return config_hash({"command": self.command, **self.config})

    def write(self, out_dir: Path) -> Path:
        import scipy

        self.versions = {"mrfrecon": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
        self.finished = _now()
        path = out_dir / "manifest.json"
        doc = {**asdict(self), "config_hash": self.config_hash}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _config(args, skip=("func", "out")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --- dictionary ---------------------------------------------------------------------

def _load_grid(spec: str) -> TissueGrid:
    if spec == "default":
        return TissueGrid.default()
    try:
        doc = json.loads(Path(spec).read_text())
        grid = TissueGrid(np.asarray(doc["t1"], float), np.asarray(doc["t2"], float))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid grid {spec!r}: {exc}") from exc
    if np.any(grid.atoms <= 0):
        raise ValueError(f"invalid grid {spec!r}: relaxation times must be positive")
    return grid


def load_dictionary(path) -> Dictionary:
    d = Path(path)
    sched_arr, sched_meta = read_array(d / "schedule.mrfa")
    D, _ = read_array(d / "dictionary.mrfa")
    lut, lut_meta = read_array(d / "lut.mrfa")
    grid = TissueGrid(np.asarray(lut_meta["t1_values"]), np.asarray(lut_meta["t2_values"]))
    if not np.array_equal(grid.atoms, lut):
        raise ValueError("look-up table does not match its grid description")
    return Dictionary(SequenceSchedule.from_array(sched_arr, sched_meta), grid, D)


def cmd_build_dict(args) -> int:
    out = _out_dir(args.out)
    if args.schedule:
        arr, meta = read_array(args.schedule)
        schedule = SequenceSchedule.from_array(arr, meta)
    else:
        schedule = make_schedule(args.L, args.seed)
    grid = _load_grid(args.grid)
    dictionary = build_dictionary(schedule, grid)
    basis = svd_compress(dictionary, args.k)
    meta = {"n_atoms": len(grid), "L": schedule.L, "grid_hash": grid.hash(), "seed": schedule.seed}
    files = {
        "schedule.mrfa": schedule.to_array(),
        "dictionary.mrfa": (dictionary.D, meta),
        "lut.mrfa": (dictionary.lut, {**meta, "t1_values": grid.t1_values.tolist(),
                                      "t2_values": grid.t2_values.tolist()}),
        "basis.mrfa": (basis.V, {**meta, "k": basis.k,
                                 "singular_values": basis.singular_values[:basis.k].tolist()}),
    }
    man = RunManifest("build-dict", _config(args), {"schedule": schedule.seed}, started=_now())
    for name, (arr, m) in files.items():
        write_array(out / name, arr, m)
        man.outputs.append(str(out / name))
    man.write(out)
    print(f"dictionary: {len(grid)} atoms, L={schedule.L}, basis {basis.V.shape}")
    return 0


# --- simulation ---------------------------------------------------------------------

def _save_scheme(out: Path, scheme) -> Path:
    meta = {**scheme.meta, "shape": list(scheme.shape)}
    if scheme.variant == "cartesian":
        write_array(out / "scheme.mrfa", scheme.indices, meta)
    else:
        meta["sqrt_w"] = float(scheme.sqrt_w)
        write_array(out / "scheme.mrfa", scheme.coords, meta)
    return out / "scheme.mrfa"


def _load_scheme(path):
    arr, meta = read_array(path)
    shape = tuple(meta["shape"])
    if meta["variant"] == "cartesian":
        return cartesian_from_indices(shape, arr, meta)
    return spiral_from_coords(shape, arr, meta["sqrt_w"], meta)


def load_model(data_dir, V=None) -> tuple[ForwardModel, np.ndarray]:
    d = Path(data_dir)
    y, _ = read_array(d / "data.mrfa")
    coils, _ = read_array(d / "coils.mrfa")
    scheme = _load_scheme(d / "scheme.mrfa")
    V = np.ones((scheme.L, 1), complex) if V is None else V
    return ForwardModel(coils, scheme, V), y


def cmd_simulate(args) -> int:
    out = _out_dir(args.out)
    dictionary = load_dictionary(args.dict)
    L = args.L or dictionary.L
    schedule = dictionary.schedule.truncate(L)
    geo = Geometry(args.nx, args.ny)
    if args.sampling == "cartesian":
        scheme = make_cartesian_scheme(geo, args.R, seed=args.seed, L=L)
    else:
        scheme = make_spiral_scheme(geo, L=L)
    coils = make_coil_maps(geo, args.coils, seed=args.seed)
    model = ForwardModel(coils, scheme, np.ones((L, 1), complex))
    phantom = make_phantom(geo, seed=args.seed)
    y = simulate_measurements(phantom, schedule, model)
    y = add_noise(y, NoiseSpec(args.noise, args.seed + 1))
    man = RunManifest("simulate", _config(args), {"seed": args.seed, "noise_seed": args.seed + 1},
                      inputs=[str(args.dict)], started=_now())
    meta = {"L": L, "noise": args.noise, "seed": args.seed, "sampling": args.sampling}
    write_array(out / "data.mrfa", y, meta)
    write_array(out / "coils.mrfa", coils, {"C": args.coils, "seed": args.seed})
    _save_scheme(out, scheme)
    truth = _out_dir(out / "truth")
    write_array(truth / "t1.mrfa", phantom.t1_map, {"unit": "ms"})
    write_array(truth / "t2.mrfa", phantom.t2_map, {"unit": "ms"})
    write_array(truth / "pd.mrfa", phantom.pd_map, {})
    write_array(truth / "mask.mrfa", phantom.support_mask, {})
    write_array(truth / "labels.mrfa", phantom.label_map, {"labels": phantom.labels})
    man.outputs += [str(p) for p in sorted(out.rglob("*.mrfa"))]
    man.write(out)
    print(f"simulated {y.shape} samples, max |y| = {np.max(np.abs(y)):.4g}")
    return 0


# --- reconstruction -----------------------------------------------------------------

def cmd_recon(args) -> int:
    out = _out_dir(args.out)
    dictionary = load_dictionary(args.dict)
    model, y = load_model(args.data)
    if model.scheme.L > dictionary.L:
        raise ValueError(f"data has {model.scheme.L} time points, dictionary only {dictionary.L}")
    dictionary = dictionary.truncate(model.scheme.L)
    lam = args.lam
    if lam is None:
        noisy = read_array(Path(args.data) / "data.mrfa")[1].get("noise", 0) > 0
        lam = LAMBDA_NOISY if noisy else LAMBDA_NOISE_FREE
    cfg = SolverConfig.from_name(args.method, lam=lam, step=args.step, kmax=args.kmax, k=args.k,
                                 r=args.r, literal_condb=args.literal_condb)
    res = run_recon(y, model, dictionary, cfg)
    meta = {"best_iter": res.best_iter}
    write_array(out / "t1.mrfa", res.maps.t1, {**meta, "unit": "ms"})
    write_array(out / "t2.mrfa", res.maps.t2, {**meta, "unit": "ms"})
    write_array(out / "pd.mrfa", res.maps.pd, meta)
    write_array(out / "atoms.mrfa", res.maps.atom_index, meta)
    (out / "diagnostics.jsonl").write_text(res.diagnostics_jsonl())
    man = RunManifest("recon", _config(args), {"seed": cfg.seed}, [str(args.data), str(args.dict)],
                      started=_now())
    man.outputs = [str(out / f) for f in ("t1.mrfa", "t2.mrfa", "pd.mrfa", "atoms.mrfa", "diagnostics.jsonl")]
    man.write(out)
    print(f"{args.method}: best iterate {res.best_iter}, {res.wall_ms:.0f} ms")
    return 0


# --- evaluation and rendering -------------------------------------------------------

def cmd_eval(args) -> int:
    maps, truth = Path(args.maps), Path(args.truth)
    mask = read_array(args.mask)[0].astype(bool) if args.mask else read_array(truth / "mask.mrfa")[0].astype(bool)
    row = {}
    for p in ("t1", "t2"):
        est = read_array(maps / f"{p}.mrfa")[0]
        ref = read_array(truth / f"{p}.mrfa")[0]
        if est.shape != ref.shape or mask.shape != ref.shape:
            raise ValueError(f"shape mismatch for {p}: {est.shape}, {ref.shape}, mask {mask.shape}")
        row[f"err_{p}"] = relative_error(est, ref, mask)
    if args.roi:
        labels, lmeta = read_array(args.roi)
        names = lmeta.get("labels", [])
        for val in np.unique(labels[labels > 0]):
            name = names[val - 1] if val - 1 < len(names) else str(val)
            for p in ("t1", "t2"):
                mean, std, nstd = roi_stats(read_array(maps / f"{p}.mrfa")[0], labels == val)
                row[f"{name}{val}_{p}_mean"] = mean
                row[f"{name}{val}_{p}_std"] = std
                row[f"{name}{val}_{p}_nstd"] = nstd
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(float(v)) for k, v in row.items()})
    print(f"err_t1={row['err_t1']:.4f} err_t2={row['err_t2']:.4f}")
    return 0


def _colormap() -> np.ndarray:
    from matplotlib import colormaps

    return np.round(colormaps["viridis"](np.linspace(0, 1, 256))[:, :3] * 255).astype(np.uint8)


def render_png(values: np.ndarray, lo: float, hi: float, path) -> None:
    from PIL import Image

    if not hi > lo:
        raise UsageError("render range needs lo < hi")
    v = np.asarray(values, float)
    if v.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {v.shape}")
    u = np.clip((np.nan_to_num(v, nan=lo) - lo) / (hi - lo), 0.0, 1.0)
    rgb = _colormap()[np.round(u * 255).astype(np.int64)]
    Image.fromarray(rgb, "RGB").save(path, format="PNG")


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise UsageError(f"range must look like lo:hi, got {text!r}") from None
    return lo, hi


def cmd_render(args) -> int:
    lo, hi = _parse_range(args.range)
    if not hi > lo:
        raise UsageError("render range needs lo < hi")
    arr, _ = read_array(args.map)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render_png(arr, lo, hi, out)
    return 0


# --- sweeps -------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    if not isinstance(spec, dict):
        raise UsageError("sweep spec must be a JSON object")
    out = _out_dir(args.out)
    full = {**DEFAULT_SWEEP, **spec}
    cells = run_sweep(full, keep_maps=True)
    (out / "results.csv").write_text(sweep_csv(cells, timing=full["timing"]))
    man = RunManifest("sweep", {"spec": full}, {"seed": full["seed"]}, [str(args.spec)], started=_now())
    man.outputs.append(str(out / "results.csv"))
    with (out / "diagnostics.jsonl").open("w") as fh:
        for c in cells:
            tag = f"{c.method}_L{c.L}_n{c.noise:g}"
            for d in c.diagnostics:
                fh.write(json.dumps({"cell": tag, **(d if full["timing"] else {**d, "wall_ms": None})},
                                    sort_keys=True) + "\n")
            if c.maps is None:
                continue
            cdir = _out_dir(out / "cells" / tag)
            for p in ("t1", "t2", "pd"):
                write_array(cdir / f"{p}.mrfa", getattr(c.maps, p), {"method": c.method, "L": c.L,
                                                                     "noise": c.noise})
                man.outputs.append(str(cdir / f"{p}.mrfa"))
    man.outputs.append(str(out / "diagnostics.jsonl"))
    man.write(out)
    ok = sum(c.error is None for c in cells)
    for c in cells:
        if c.error:
            print(f"cell {c.method} L={c.L} noise={c.noise:g} failed: {c.error}", file=sys.stderr)
    print(f"{ok}/{len(cells)} cells succeeded")
    return 0 if ok else 1


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrfrecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-dict", help="simulate the fingerprint dictionary")
    b.add_argument("--schedule", help="schedule container; otherwise generated from --L/--seed")
    b.add_argument("--L", type=int, default=600)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--grid", default="default", help="'default' or a JSON file with t1/t2 lists")
    b.add_argument("--k", type=int, default=10)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_dict)

    s = sub.add_parser("simulate", help="phantom measurements")
    s.add_argument("--dict", required=True)
    s.add_argument("--L", type=int, default=None)
    s.add_argument("--nx", type=int, default=64)
    s.add_argument("--ny", type=int, default=64)
    s.add_argument("--sampling", choices=["cartesian", "spiral"], default="cartesian")
    s.add_argument("--R", type=float, default=8.0)
    s.add_argument("--coils", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("recon", help="reconstruct tissue maps")
    r.add_argument("--data", required=True)
    r.add_argument("--dict", required=True)
    r.add_argument("--method", choices=sorted(METHODS), required=True)
    r.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="TV weight; defaults to 1e-4, or 5e-4 for data simulated with noise")
    r.add_argument("--step", choices=["fsz", "bt"], default=None)
    r.add_argument("--kmax", type=int, default=10)
    r.add_argument("--k", type=int, default=10)
    r.add_argument("--r", type=int, default=50)
    r.add_argument("--literal-condb", action="store_true",
                   help="use the reversed (>=) direction of backtracking condition b")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_recon)

    e = sub.add_parser("eval", help="relative errors against ground truth")
    e.add_argument("--maps", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--mask", default=None)
    e.add_argument("--roi", default=None, help="label container; one ROI per nonzero label")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("render", help="map container to PNG")
    d.add_argument("--map", required=True)
    d.add_argument("--range", required=True, help="lo:hi")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_render)

    w = sub.add_parser("sweep", help="methods x lengths x noise experiment")
    w.add_argument("--spec", required=True)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mrfrecon: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        if args.verbose:
            log.exception("command failed")
        print(f"mrfrecon: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
