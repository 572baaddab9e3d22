"""Digital phantoms, measurement simulation, noise and evaluation metrics."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Geometry
from .forward import ForwardModel, make_cartesian_scheme, make_coil_maps, make_spiral_scheme
from .sequence import Dictionary, SequenceSchedule, build_dictionary, epg_fingerprints, make_schedule
from .solvers import LAMBDA_NOISE_FREE, LAMBDA_NOISY, SolverConfig, run_recon

log = logging.getLogger(__name__)

CSV_COLUMNS = ["method", "L", "noise", "err_t1", "err_t2", "best_iter", "wall_ms"]


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in normalized coordinates, the grid spanning [-1, 1] on both axes."""

    cx: float
    cy: float
    ax: float
    ay: float
    angle: float = 0.0  # degrees

    def mask(self, shape) -> np.ndarray:
        nx, ny = shape
        u = (np.arange(nx) + 0.5) / nx * 2 - 1
        v = (np.arange(ny) + 0.5) / ny * 2 - 1
        U, Vv = np.meshgrid(u, v, indexing="ij")
        c, s = np.cos(np.deg2rad(self.angle)), np.sin(np.deg2rad(self.angle))
        du, dv = U - self.cx, Vv - self.cy
        a = (c * du + s * dv) / self.ax
        b = (-s * du + c * dv) / self.ay
        return a * a + b * b <= 1.0


@dataclass(frozen=True)
class TissueClass:
    name: str
    t1: float
    t2: float
    pd: float
    region: Ellipse | np.ndarray  # ellipse or boolean mask


WM = (790.0, 92.0)
GM = (1300.0, 110.0)
CSF = (4000.0, 2000.0)
MUSCLE = (900.0, 50.0)


def default_tissue_classes() -> list[TissueClass]:
    """Head-like layout; later classes overwrite earlier ones."""
    return [
        TissueClass("muscle", *MUSCLE, 0.9, Ellipse(0.0, 0.0, 0.88, 0.72)),
        TissueClass("csf", *CSF, 1.0, Ellipse(0.0, 0.0, 0.78, 0.62)),
        TissueClass("gm", *GM, 0.8, Ellipse(0.0, 0.0, 0.72, 0.56)),
        TissueClass("wm", *WM, 0.65, Ellipse(0.0, 0.0, 0.56, 0.42)),
        TissueClass("gm", *GM, 0.8, Ellipse(-0.22, 0.18, 0.12, 0.09, 30.0)),
        TissueClass("gm", *GM, 0.8, Ellipse(0.24, -0.16, 0.1, 0.14, -20.0)),
        TissueClass("csf", *CSF, 1.0, Ellipse(-0.12, 0.0, 0.05, 0.2, 10.0)),
        TissueClass("csf", *CSF, 1.0, Ellipse(0.12, 0.0, 0.05, 0.2, -10.0)),
    ]


@dataclass(eq=False)
class DigitalPhantom:
    t1_map: np.ndarray
    t2_map: np.ndarray
    pd_map: np.ndarray
    support_mask: np.ndarray
    seed: int = 0
    labels: list = field(default_factory=list)  # names, index = label value - 1
    label_map: np.ndarray | None = None

    @property
    def shape(self):
        return self.t1_map.shape

    def roi(self, name: str) -> np.ndarray:
        hits = [i + 1 for i, n in enumerate(self.labels) if n == name]
        return np.isin(self.label_map, hits)

    def scaled(self, c: float) -> "DigitalPhantom":
        return DigitalPhantom(self.t1_map, self.t2_map, c * self.pd_map, self.support_mask,
                              self.seed, list(self.labels), self.label_map)


def _pd_field(shape, rng, amplitude=0.1, terms=3) -> np.ndarray:
    nx, ny = shape
    u = (np.arange(nx) + 0.5) / nx
    v = (np.arange(ny) + 0.5) / ny
    U, Vv = np.meshgrid(u, v, indexing="ij")
    f = np.zeros(shape)
    for _ in range(terms):
        fx, fy = rng.uniform(0.3, 1.5, 2)
        ph = rng.uniform(0, 2 * np.pi)
        f += np.cos(2 * np.pi * (fx * U + fy * Vv) + ph)
    return 1.0 + amplitude * f / terms


def make_phantom(geometry: Geometry | tuple[int, int], tissue_classes=None, seed: int = 0,
                 pd_variation: float = 0.1) -> DigitalPhantom:
    """Layered-region phantom with a smooth multiplicative PD field.

    Parameters
    ----------
    geometry : Geometry or (nx, ny)
    tissue_classes : list of TissueClass, optional
        Drawn in order, so later regions win on overlap. Defaults to
        :func:`default_tissue_classes`.
    seed : int
        Seeds the PD field.
    pd_variation : float
        Relative amplitude of the PD field; 0 gives piecewise-constant PD.
    """
    shape = geometry.shape if isinstance(geometry, Geometry) else tuple(geometry)
    classes = default_tissue_classes() if tissue_classes is None else list(tissue_classes)
    t1 = np.zeros(shape)
    t2 = np.zeros(shape)
    pd = np.zeros(shape)
    labels = np.zeros(shape, np.int64)
    for i, tc in enumerate(classes):
        if not tc.t1 >= tc.t2 > 0 or tc.pd <= 0:
            raise ValueError(f"class {tc.name!r} needs t1 >= t2 > 0 and pd > 0")
        m = tc.region.mask(shape) if isinstance(tc.region, Ellipse) else np.asarray(tc.region, bool)
        if m.shape != shape:
            raise ValueError(f"region of class {tc.name!r} has shape {m.shape}, expected {shape}")
        t1[m], t2[m], pd[m] = tc.t1, tc.t2, tc.pd
        labels[m] = i + 1
    support = labels > 0
    if pd_variation:
        pd = pd * _pd_field(shape, np.random.default_rng(seed), pd_variation)
    pd[~support] = 0.0
    return DigitalPhantom(t1, t2, pd, support, seed, [c.name for c in classes], labels)


def simulate_measurements(phantom: DigitalPhantom, schedule: SequenceSchedule, model: ForwardModel,
                          dict_grid_free: bool = True, dictionary: Dictionary | None = None) -> np.ndarray:
    """EPG fingerprints of the ground truth, scaled by PD, through the frame-wise model.

    With ``dict_grid_free=False`` each voxel's parameters are first snapped to
    the nearest atom of ``dictionary``.
    """
    if phantom.shape != tuple(model.shape):
        raise ValueError(f"phantom shape {phantom.shape} does not match model {model.shape}")
    if schedule.L != model.scheme.L:
        raise ValueError(f"schedule length {schedule.L} does not match model {model.scheme.L}")
    X = np.zeros((model.N, schedule.L), complex)
    sel = (phantom.pd_map.ravel() != 0) & phantom.support_mask.ravel()
    if np.any(sel):
        t1 = phantom.t1_map.ravel()[sel]
        t2 = phantom.t2_map.ravel()[sel]
        if not dict_grid_free:
            if dictionary is None:
                raise ValueError("grid snapping needs a dictionary")
            lut = dictionary.lut
            d = (np.log(lut[None, :, 0]) - np.log(t1[:, None])) ** 2 + \
                (np.log(lut[None, :, 1]) - np.log(t2[:, None])) ** 2
            t1, t2 = lut[np.argmin(d, axis=1)].T
        pairs, inv = np.unique(np.stack([t1, t2], 1), axis=0, return_inverse=True)
        fp = epg_fingerprints(schedule, pairs[:, 0], pairs[:, 1])
        X[sel] = phantom.pd_map.ravel()[sel, None] * fp[inv.ravel()]
    return model.forward_frames(X)


@dataclass(frozen=True)
class NoiseSpec:
    relative_std: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.relative_std < 0:
            raise ValueError("relative_std must be nonnegative")


def add_noise(y: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Complex white noise with per-component std ``relative_std * max|y|``."""
    y = np.asarray(y)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite measurements")
    if spec.relative_std == 0:
        return y.copy()
    sigma = spec.relative_std * float(np.max(np.abs(y))) if y.size else 0.0
    rng = np.random.default_rng(spec.seed)
    n = rng.standard_normal(y.shape + (2,))
    return y + sigma * (n[..., 0] + 1j * n[..., 1])


def relative_error(estimate, truth, mask=None) -> float:
    """Mean of ``|estimate - truth| / truth`` over the mask."""
    estimate = np.asarray(estimate, float)
    truth = np.asarray(truth, float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    mask = np.ones(truth.shape, bool) if mask is None else np.asarray(mask, bool)
    t = truth[mask]
    if t.size == 0:
        raise ValueError("empty mask")
    if np.any(t <= 0):
        raise ValueError("truth must be positive inside the mask")
    return float(np.mean(np.abs(estimate[mask] - t) / t))


def roi_stats(values, roi_mask) -> tuple[float, float, float]:
    """Sample mean, sample std (n - 1) and std / mean over a region."""
    v = np.asarray(values, float)[np.asarray(roi_mask, bool)]
    if v.size == 0:
        raise ValueError("empty ROI")
    mean = float(np.mean(v))
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return mean, std, (std / mean if mean != 0 else float("nan"))


# --- sweeps ---------------------------------------------------------------------------

DEFAULT_SWEEP = {
    "nx": 64,
    "ny": 64,
    "lengths": [200, 400, 600],
    "noise": [0.0, 0.001],
    "methods": ["classical", "igp-mrf-01-bt", "gfb-mrf"],
    "R": 8,
    "sampling": "cartesian",
    "coils": 1,
    "k": 10,
    "kmax": 10,
    "seed": 0,
    "timing": True,
}


@dataclass
class SweepCell:
    method: str
    L: int
    noise: float
    err_t1: float | None = None
    err_t2: float | None = None
    best_iter: int | None = None
    wall_ms: float | None = None
    error: str | None = None
    maps: object = None
    diagnostics: list = field(default_factory=list)
    gradres: list = field(default_factory=list)  # condition-b metric per accepted iteration

    def row(self, timing=True) -> dict:
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        return {
            "method": self.method,
            "L": self.L,
            "noise": repr(float(self.noise)),
            "err_t1": fmt(self.err_t1) if self.error is None else "failed",
            "err_t2": fmt(self.err_t2) if self.error is None else "failed",
            "best_iter": "" if self.best_iter is None else self.best_iter,
            "wall_ms": f"{self.wall_ms:.1f}" if timing and self.wall_ms is not None else "",
        }


def _lambda_for(spec, noise):
    lam = spec.get("lambda")
    if isinstance(lam, dict):
        return lam["noisy" if noise > 0 else "noise_free"]
    if lam is not None:
        return lam
    return LAMBDA_NOISY if noise > 0 else LAMBDA_NOISE_FREE


def sweep_setup(spec: dict):
    """Schedule, dictionary, phantom and base forward model at the longest length."""
    s = {**DEFAULT_SWEEP, **spec}
    geo = Geometry(s["nx"], s["ny"])
    Lmax = max(s["lengths"])
    schedule = make_schedule(Lmax, s["seed"])
    dictionary = build_dictionary(schedule)
    phantom = make_phantom(geo, seed=s["seed"])
    if s["sampling"] == "cartesian":
        scheme = make_cartesian_scheme(geo, s["R"], seed=s["seed"], L=Lmax)
    elif s["sampling"] == "spiral":
        scheme = make_spiral_scheme(geo, L=Lmax)
    else:
        raise ValueError(f"unknown sampling {s['sampling']!r}")
    coils = make_coil_maps(geo, s["coils"], seed=s["seed"])
    V = dictionary.svd[1][:, :1]
    model = ForwardModel(coils, scheme, V)
    return s, schedule, dictionary, phantom, model


def run_sweep(spec: dict, keep_maps: bool = False) -> list[SweepCell]:
    """Methods x lengths x noise levels; one simulation per (length, noise).

    Unknown methods and solver failures are recorded in the cell and the
    sweep moves on.
    """
    s, schedule, dictionary, phantom, model = sweep_setup(spec)
    mask = phantom.support_mask
    cells = []
    for L in sorted(s["lengths"]):
        sched_L = schedule.truncate(L)
        dict_L = dictionary.truncate(L)
        model_L = model.truncate(L, model.V[:L])
        clean = simulate_measurements(phantom, sched_L, model_L)
        for noise in s["noise"]:
            y = add_noise(clean, NoiseSpec(noise, s["seed"] + 1))
            for name in s["methods"]:
                cell = SweepCell(name, L, noise)
                t0 = time.perf_counter()
                try:
                    cfg = SolverConfig.from_name(name, lam=_lambda_for(s, noise), kmax=s["kmax"],
                                                 k=s["k"], seed=s["seed"])
                    res = run_recon(y, model_L, dict_L, cfg)
                    cell.err_t1 = relative_error(res.maps.t1, phantom.t1_map, mask)
                    cell.err_t2 = relative_error(res.maps.t2, phantom.t2_map, mask)
                    cell.best_iter = res.best_iter
                    if res.state is not None:
                        cell.diagnostics = res.state.diagnostics()
                        cell.gradres = list(res.state.gradres_history)
                    if keep_maps:
                        cell.maps = res.maps
                except Exception as exc:  # noqa: BLE001 - recorded per cell
                    log.warning("cell %s L=%d noise=%g failed: %s", name, L, noise, exc)
                    cell.error = f"{type(exc).__name__}: {exc}"
                cell.wall_ms = 1000 * (time.perf_counter() - t0)
                cells.append(cell)
    return cells


def sweep_csv(cells: list[SweepCell], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for c in cells:
        w.writerow(c.row(timing))
    return buf.getvalue()
