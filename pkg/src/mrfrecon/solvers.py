"""Reconstruction engines: classical matching, AIR-style iterations, IGP-MRF, GFB-MRF."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .forward import ForwardModel
from .matching import CompressedDictionary, TissueMaps, compress_dictionary, lut_lookup, match
from .sequence import Dictionary, autocal_basis, svd_compress
from .tv import TVConfig, tv_prox

log = logging.getLogger(__name__)

LAMBDA_NOISE_FREE = 1e-4
LAMBDA_NOISY = 5e-4


class DivergenceError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


# name -> (algorithm, autocalibration, match every iteration, step strategy)
METHODS = {
    "classical": ("classical", False, True, "fsz"),
    "air-mrf": ("air", False, True, "bt"),
    "igp-mrf-01": ("igp", False, True, "fsz"),
    "igp-mrf-01-bt": ("igp", False, True, "bt"),
    "igp-mrf-00": ("igp", False, False, "bt"),
    "igp-mrf-10": ("igp", True, False, "bt"),
    "igp-mrf-11": ("igp", True, True, "fsz"),
    "gfb-mrf": ("gfb", False, True, "bt"),
}


@dataclass(frozen=True)
class SolverConfig:
    method: str = "gfb"
    step: str = "bt"
    autocal: bool = False
    match_every_iter: bool = True
    lam: float = LAMBDA_NOISE_FREE
    kmax: int = 10
    k: int = 10
    r: int = 50
    tv_iters: int = 10
    tv_step: float = 0.248
    alpha: float | None = None  # fixed step; skips the rescaling
    matching: bool = True  # False replaces the Bloch projection by the identity
    literal_condb: bool = False
    max_halvings: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("classical", "air", "igp", "gfb"):
            raise ValueError(f"unknown algorithm {self.method!r}")
        if self.step not in ("fsz", "bt"):
            raise ValueError(f"unknown step strategy {self.step!r}")
        if self.lam < 0 or self.kmax < 1:
            raise ValueError("need lam >= 0 and kmax >= 1")
        if self.method == "gfb" and self.autocal:
            raise ValueError("autocalibration is only defined for IGP variants")

    @classmethod
    def from_name(cls, name: str, **overrides) -> "SolverConfig":
        try:
            method, autocal, every, step = METHODS[name.lower()]
        except KeyError:
            raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None
        kw = dict(method=method, autocal=autocal, match_every_iter=every, step=step)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def tv(self, alpha: float) -> TVConfig:
        return TVConfig(alpha * self.lam, self.tv_iters, self.tv_step)


@dataclass
class SolverState:
    x: np.ndarray
    alpha: float
    z_bloch: np.ndarray | None = None
    z_spat: np.ndarray | None = None
    iteration: int = 0
    fidelity_history: list = field(default_factory=list)
    gradres_history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    matches: list = field(default_factory=list)  # MatchResult or None per iteration
    stalled: bool = False
    model: ForwardModel | None = None
    dict_c: CompressedDictionary | None = None

    def diagnostics(self) -> list[dict]:
        return [
            {"iter": i + 1, "alpha": a, "fidelity": f, "backtracks": b, "wall_ms": w}
            for i, (a, f, b, w) in enumerate(zip(self.alpha_history, self.fidelity_history,
                                                 self.backtracks, self.wall_ms))
        ]

    @property
    def best_iter(self) -> int:
        return int(np.argmin(self.fidelity_history))


def rescale_alpha(y: np.ndarray, x_tilde: np.ndarray, model: ForwardModel) -> float:
    """Closed-form minimizer of ``||alpha G(x_tilde) - y||^2``."""
    gx = model.forward(x_tilde)
    den = float(np.vdot(gx, gx).real)
    if den == 0:
        raise ValueError("forward image of x_tilde is zero; cannot rescale")
    return float(np.vdot(y, gx).real) / den


def _gradres(GhY, normal_x):
    r = GhY - normal_x
    return float(np.vdot(r, r).real)


def backtrack_check(x_new, x_old, alpha, y, model: ForwardModel, *, literal=False,
                    GhY=None) -> bool:
    """Both backtracking conditions on a candidate update.

    Condition a bounds ``alpha`` by ``0.99 ||d||^2 / ||G^H G d||^2`` with
    ``d = x_new - x_old`` (``d = 0`` accepts). Condition b asks the gradient
    residual ``||G^H y - G^H G x||^2`` not to increase; ``literal``
    flips it to the reversed ``>=`` form.
    """
    return _check(x_new, x_old, alpha, y, model, literal, GhY)[0]


def _check(x_new, x_old, alpha, y, model, literal=False, GhY=None, normal_old=None):
    GhY = model.adjoint(y) if GhY is None else GhY
    normal_new = model.normal(x_new)
    normal_old = model.normal(x_old) if normal_old is None else normal_old
    d = x_new - x_old
    dd = float(np.vdot(d, d).real)
    nd = normal_new - normal_old
    nn = float(np.vdot(nd, nd).real)
    if dd == 0:
        cond_a = True
    elif nn == 0:
        cond_a = True
    else:
        cond_a = alpha <= 0.99 * dd / nn
    b_new = _gradres(GhY, normal_new)
    b_old = _gradres(GhY, normal_old)
    cond_b = b_new >= b_old if literal else b_new <= b_old
    return cond_a and cond_b, b_new, normal_new


def _project(z, dict_c, cfg):
    if not cfg.matching:
        return z, None
    res = match(z, dict_c)
    return res.resynthesized, res


def _initial_alpha(y, GhY, model, dict_c, cfg):
    if cfg.alpha is not None:
        return float(cfg.alpha)
    xt, _ = _project(GhY, dict_c, cfg)
    if not np.any(xt):
        # nothing to rescale against: undersampling ratio as a placeholder
        return model.N / model.scheme.S
    return rescale_alpha(y, xt, model)


def _iterate(y, model, dict_c, cfg, step, state: SolverState, GhY):
    """Shared outer loop: step-size strategy, guards and bookkeeping."""
    fid0 = float(np.vdot(y, y).real)
    normal_x = model.normal(state.x)
    for it in range(cfg.kmax):
        t0 = time.perf_counter()
        last = it == cfg.kmax - 1
        alpha = state.alpha
        cand = step(state, alpha, it, last, normal_x)
        n_bt = 0
        if cfg.step == "bt" and it > 0:
            while True:
                ok, b_new, normal_new = _check(cand["x"], state.x, alpha, y, model,
                                               cfg.literal_condb, GhY, normal_x)
                if ok:
                    break
                n_bt += 1
                if n_bt > cfg.max_halvings:
                    log.warning("step size failure at iteration %d after %d halvings", it + 1, n_bt - 1)
                    state.stalled = True
                    return state
                alpha = alpha / 2
                cand = step(state, alpha, it, last, normal_x)
        else:
            normal_new = model.normal(cand["x"])
            b_new = _gradres(GhY, normal_new)

        state.x = cand["x"]
        state.z_bloch = cand.get("z_bloch")
        state.z_spat = cand.get("z_spat")
        state.alpha = alpha
        state.iteration = it + 1
        normal_x = normal_new
        fid = model.fidelity(state.x, y)
        state.fidelity_history.append(fid)
        state.gradres_history.append(b_new)
        state.alpha_history.append(alpha)
        state.backtracks.append(n_bt)
        state.iterates.append(state.x)
        state.matches.append(cand.get("match"))
        state.wall_ms.append(1000 * (time.perf_counter() - t0))
        if not np.isfinite(fid) or fid > 10 * fid0:
            raise DivergenceError(f"fidelity {fid:.3e} exceeds 10x initial {fid0:.3e}", state)
    return state


def _calibrate(y, model, dict_c, cfg):
    """One AIR-style pass at rank r, then an SVD of the matched image."""
    GhY = model.adjoint(y)
    X_ac = match(GhY, dict_c).resynthesized
    basis = autocal_basis(X_ac, cfg.k, model.V)
    return model.with_basis(basis.composed), dict_c.with_autocal(basis.V_ac)


def _igp(y, model, dict_c, cfg, use_prox=True):
    if cfg.autocal:
        if dict_c.V_ac is not None or model.k != dict_c.k:
            raise ValueError("autocalibration expects a rank-r model and dictionary")
        model, dict_c = _calibrate(y, model, dict_c, cfg)
    GhY = model.adjoint(y)

    def step(state, alpha, it, last, normal_x):
        z = state.x - alpha * (normal_x - GhY)
        res = None
        if cfg.match_every_iter or it == 0 or last:
            z, res = _project(z, dict_c, cfg)
        if use_prox:
            z = tv_prox(z, cfg.tv(alpha), model.shape)
        return {"x": z, "match": res}

    x0 = np.zeros((model.N, model.k), complex)
    state = SolverState(x0, _initial_alpha(y, GhY, model, dict_c, cfg), model=model, dict_c=dict_c)
    return _iterate(y, model, dict_c, cfg, step, state, GhY)


def _final_maps(state: SolverState, dictionary, index=None) -> TissueMaps:
    index = len(state.iterates) - 1 if index is None else index
    res = state.matches[index]
    if res is None:
        res = match(state.iterates[index], state.dict_c)
    return lut_lookup(res, dictionary, state.model.shape)


def igp_mrf(y, model: ForwardModel, dict_c: CompressedDictionary, cfg: SolverConfig,
            dictionary=None):
    """Incremental gradient-proximal iterations from a zero image.

    Each iteration takes a gradient step, projects onto the dictionary cone
    (every iteration, or only the first and last when
    ``cfg.match_every_iter`` is off) and applies the TV prox with weight
    ``alpha * lam``.

    Returns
    -------
    maps : TissueMaps or None
        From the last matching (``None`` without a ``dictionary`` LUT).
    state : SolverState
    """
    if cfg.method not in ("igp", "air"):
        raise ValueError("igp_mrf needs an IGP or AIR configuration")
    state = _igp(y, model, dict_c, cfg, use_prox=cfg.method == "igp")
    maps = _final_maps(state, dictionary) if dictionary is not None and state.iterates else None
    return maps, state


def air_mrf(y, model, dict_c, cfg, dictionary=None):
    """Gradient step plus matching every iteration, no spatial prox."""
    cfg = replace(cfg, method="air", match_every_iter=True, autocal=False)
    state = _igp(y, model, dict_c, cfg, use_prox=False)
    maps = _final_maps(state, dictionary) if dictionary is not None and state.iterates else None
    return maps, state


def gfb_mrf(y, model: ForwardModel, dict_c: CompressedDictionary, cfg: SolverConfig,
            dictionary=None):
    """Generalized forward-backward: Bloch projection and TV prox in parallel.

    Both proxes see the gradient point plus their own correction term; the
    next iterate averages the two branches. Maps come from one matching of
    the last merged iterate.
    """
    if cfg.method != "gfb":
        raise ValueError("gfb_mrf needs a GFB configuration")
    GhY = model.adjoint(y)

    def step(state, alpha, it, last, normal_x):
        g = state.x - alpha * (normal_x - GhY)
        o_b = state.x - state.z_bloch
        p, _ = _project(g + o_b, dict_c, cfg)
        z_b = p - o_b
        o_s = state.x - state.z_spat
        z_s = tv_prox(g + o_s, cfg.tv(alpha), model.shape) - o_s
        return {"x": (z_b + z_s) / 2, "z_bloch": z_b, "z_spat": z_s}

    x0 = np.zeros((model.N, model.k), complex)
    state = SolverState(x0, _initial_alpha(y, GhY, model, dict_c, cfg), z_bloch=x0.copy(),
                        z_spat=x0.copy(), model=model, dict_c=dict_c)
    state = _iterate(y, model, dict_c, cfg, step, state, GhY)
    maps = _final_maps(state, dictionary) if dictionary is not None and state.iterates else None
    return maps, state


def classical_mrf(y, model: ForwardModel, dict_c: CompressedDictionary, dictionary) -> TissueMaps:
    """Zero-filled (or gridded) adjoint followed by one matching."""
    return lut_lookup(match(model.adjoint(y), dict_c), dictionary, model.shape)


@dataclass
class ReconResult:
    maps: TissueMaps
    best_iter: int  # 1-based; 0 for the classical method
    state: SolverState | None
    wall_ms: float

    def diagnostics_jsonl(self) -> str:
        rows = self.state.diagnostics() if self.state is not None else []
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def prepare(model: ForwardModel, dictionary: Dictionary, cfg: SolverConfig):
    """Attach the dictionary basis (rank r for autocal variants, else k)."""
    rank = min(cfg.r, dictionary.L) if cfg.autocal else cfg.k
    basis = svd_compress(dictionary, rank)
    return model.with_basis(basis.V), compress_dictionary(dictionary, basis.V)


def run_recon(y, model: ForwardModel, dictionary: Dictionary, cfg: SolverConfig) -> ReconResult:
    """Dispatch on ``cfg`` and return maps from the lowest-fidelity iterate."""
    t0 = time.perf_counter()
    model, dict_c = prepare(model, dictionary, cfg)
    if cfg.method == "classical":
        maps = classical_mrf(y, model, dict_c, dictionary)
        return ReconResult(maps, 0, None, 1000 * (time.perf_counter() - t0))
    if cfg.method == "gfb":
        _, state = gfb_mrf(y, model, dict_c, cfg)
    elif cfg.method == "air":
        _, state = air_mrf(y, model, dict_c, cfg)
    else:
        _, state = igp_mrf(y, model, dict_c, cfg)
    if not state.iterates:
        raise RuntimeError("solver accepted no iterations")
    best = state.best_iter
    maps = _final_maps(state, dictionary, best)
    return ReconResult(maps, best + 1, state, 1000 * (time.perf_counter() - t0))
