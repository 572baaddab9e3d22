from dataclasses import replace

import numpy as np
import pytest

from conftest import crandn, golden_min, ls_objective
from mrfrecon.bench import make_phantom, simulate_measurements
from mrfrecon.core import Geometry
from mrfrecon.forward import ForwardModel, make_cartesian_scheme
from mrfrecon.matching import compress_dictionary, match
from mrfrecon.sequence import svd_compress
from mrfrecon.solvers import (METHODS, DivergenceError, SolverConfig, air_mrf, backtrack_check,
                              classical_mrf, gfb_mrf, igp_mrf, prepare, rescale_alpha, run_recon)
from mrfrecon.tv import TVConfig, tv_prox


@pytest.fixture(scope="module")
def problem(small_dict, small_model):
    ph = make_phantom((16, 16), seed=1)
    frames = ForwardModel(small_model.coils, small_model.scheme, np.ones((small_dict.L, 1)))
    y = simulate_measurements(ph, small_dict.schedule, frames)
    model, dc = prepare(small_model, small_dict, SolverConfig(k=6))
    return y, model, dc


def test_config_names():
    for name in METHODS:
        cfg = SolverConfig.from_name(name)
        assert cfg.kmax == 10
    c = SolverConfig.from_name("igp-mrf-01")
    assert (c.autocal, c.match_every_iter, c.step) == (False, True, "fsz")
    c = SolverConfig.from_name("igp-mrf-10")
    assert (c.autocal, c.match_every_iter, c.step) == (True, False, "bt")
    assert SolverConfig.from_name("gfb-mrf", step="fsz").step == "fsz"
    for bad in ("nonsense", ):
        with pytest.raises(ValueError):
            SolverConfig.from_name(bad)
    with pytest.raises(ValueError):
        SolverConfig(lam=-1)
    with pytest.raises(ValueError):
        SolverConfig(kmax=0)


def test_rescale_alpha_exact_and_oracle(problem, rng):
    _, model, _ = problem
    x = crandn(rng, model.N, model.k)
    assert rescale_alpha(model.forward(x), x, model) == pytest.approx(1.0, abs=1e-12)
    assert rescale_alpha(2 * model.forward(x), x, model) == pytest.approx(2.0, abs=1e-12)
    for _ in range(5):
        x = crandn(rng, model.N, model.k)
        y = crandn(rng, *model.data_shape)
        gx = model.forward(x)
        a = rescale_alpha(y, x, model)
        ref = golden_min(ls_objective(gx, y), -10, 10)
        assert abs(a - ref) < 1e-8
    with pytest.raises(ValueError):
        rescale_alpha(y, np.zeros_like(x), model)


def test_backtrack_conditions(problem, rng):
    y, model, _ = problem
    x = crandn(rng, model.N, model.k)
    assert backtrack_check(x, x, 1.0, y, model)
    GhY = model.adjoint(y)
    x_new = x - 1e-3 * (model.normal(x) - GhY)
    assert backtrack_check(x_new, x, 1e-3, y, model)
    assert not backtrack_check(x_new, x, 1e6, y, model)


def gradient_descent(y, model, kmax):
    GhY = model.adjoint(y)
    gx = model.forward(GhY)
    alpha = np.vdot(gx, y).real / np.vdot(gx, gx).real
    x = np.zeros_like(GhY)
    out = []
    for _ in range(kmax):
        x = x - alpha * (model.adjoint(model.forward(x)) - GhY)
        out.append(x)
    return out


@pytest.mark.parametrize("method", ["igp", "gfb"])
def test_reduces_to_gradient_descent(problem, method):
    y, model, dc = problem
    cfg = SolverConfig(method=method, step="fsz", lam=0.0, matching=False, kmax=6)
    run = igp_mrf if method == "igp" else gfb_mrf
    _, state = run(y, model, dc, cfg)
    ref = gradient_descent(y, model, 6)
    for a, b in zip(state.iterates, ref):
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)


def test_gradient_descent_on_quadratic_decreases(small_dict):
    geo = Geometry(16, 16)
    full = ForwardModel(np.ones((1, 16, 16)), make_cartesian_scheme(geo, 1, L=small_dict.L),
                        svd_compress(small_dict, 4).V)
    dc = compress_dictionary(small_dict, full.V)
    y = crandn(np.random.default_rng(0), *full.data_shape)
    cfg = SolverConfig(method="igp", step="fsz", lam=0.0, matching=False, alpha=1.0, kmax=5)
    _, st = igp_mrf(y, full, dc, cfg)
    # G^H G is the identity here, so alpha = 1 lands on the minimizer at once
    assert st.fidelity_history[4] <= st.fidelity_history[0] * (1 + 1e-12)
    _, st = igp_mrf(y, full, dc, replace(cfg, alpha=0.5))
    assert st.fidelity_history[4] < st.fidelity_history[0]


def test_igp_without_tv_is_air(problem, small_dict):
    y, model, dc = problem
    for step in ("fsz", "bt"):
        igp = SolverConfig.from_name("igp-mrf-01", lam=0.0, step=step)
        m1, s1 = igp_mrf(y, model, dc, igp, small_dict)
        m2, s2 = air_mrf(y, model, dc, replace(igp, method="air"), small_dict)
        for a, b in zip(s1.iterates, s2.iterates):
            assert np.array_equal(a, b)
        assert np.array_equal(m1.t1, m2.t1) and np.array_equal(m1.pd, m2.pd)


def test_first_iterate_cone_commutation(problem):
    y, model, dc = problem
    GhY = model.adjoint(y)
    a = match(GhY, dc)
    for alpha in (0.1, 1.0, 7.3):
        b = match(alpha * GhY, dc)
        assert np.array_equal(a.atom_index, b.atom_index)
        assert np.allclose(b.rho, alpha * a.rho, rtol=1e-12, atol=0)


def gfb_literal(y, model, dc, lam, kmax):
    GhY = model.adjoint(y)
    z0 = match(GhY, dc).resynthesized
    gz = model.forward(z0)
    alpha = np.vdot(gz, y).real / np.vdot(gz, gz).real
    X = np.zeros_like(GhY)
    Zb = np.zeros_like(GhY)
    Zs = np.zeros_like(GhY)
    out = []
    for _ in range(kmax):
        G = X - alpha * model.adjoint(model.forward(X) - y)
        Ob = X - Zb
        Zb = match(G + Ob, dc).resynthesized - Ob
        Os = X - Zs
        Zs = tv_prox(G + Os, TVConfig(alpha * lam), model.shape) - Os
        X = (Zb + Zs) / 2
        out.append(X)
    return out


def test_gfb_matches_literal_transcription(problem):
    y, model, dc = problem
    cfg = SolverConfig(method="gfb", step="fsz", lam=0.05, kmax=5)
    _, st = gfb_mrf(y, model, dc, cfg)
    for a, b in zip(st.iterates, gfb_literal(y, model, dc, 0.05, 5)):
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)


def test_zero_data(problem, small_dict):
    _, model, dc = problem
    y = np.zeros(model.data_shape, complex)
    maps, st = gfb_mrf(y, model, dc, SolverConfig(method="gfb", kmax=3), small_dict)
    assert all(not np.any(x) for x in st.iterates)
    assert not np.any(maps.pd) and not np.any(maps.t1)
    assert not np.any(classical_mrf(y, model, dc, small_dict).pd)


def test_bt_gradient_residual_monotone(problem):
    y, model, dc = problem
    for name in ("gfb-mrf", "igp-mrf-01-bt", "air-mrf"):
        _, st = (gfb_mrf if name == "gfb-mrf" else igp_mrf if name != "air-mrf" else air_mrf)(
            y, model, dc, SolverConfig.from_name(name, lam=1e-3))
        assert np.all(np.diff(st.gradres_history) <= 0)
        assert np.all(np.isfinite(st.fidelity_history))


def test_divergence_guard(problem):
    y, model, dc = problem
    cfg = SolverConfig(method="igp", step="fsz", matching=False, lam=0.0, alpha=50.0)
    with pytest.raises(DivergenceError):
        igp_mrf(y, model, dc, cfg)


def test_run_recon_dispatch_and_best_iterate(problem, small_dict, small_model):
    y, model, dc = problem
    res = run_recon(y, small_model, small_dict, SolverConfig.from_name("classical", k=6))
    ref = classical_mrf(y, model, dc, small_dict)
    assert np.array_equal(res.maps.t1, ref.t1) and res.best_iter == 0
    cfg = SolverConfig.from_name("gfb-mrf", step="fsz", k=6, lam=0.05)
    res = run_recon(y, small_model, small_dict, cfg)
    j = res.best_iter
    assert j - 1 == int(np.argmin(res.state.fidelity_history))
    again = run_recon(y, small_model, small_dict, replace(cfg, kmax=j))
    assert np.array_equal(again.maps.t1, res.maps.t1)
    rows = res.diagnostics_jsonl().splitlines()
    assert len(rows) == len(res.state.iterates)
    assert {"iter", "alpha", "fidelity", "backtracks", "wall_ms"} <= set(eval(rows[0].replace("null", "None")))


def test_autocal_variants_run(problem, small_dict, small_model):
    y, _, _ = problem
    for name in ("igp-mrf-10", "igp-mrf-11", "igp-mrf-00"):
        res = run_recon(y, small_model, small_dict, SolverConfig.from_name(name, k=4, r=12, kmax=4))
        fg = res.maps.pd > 0
        assert np.all(res.maps.t1[fg] >= res.maps.t2[fg]) and np.all(res.maps.pd >= 0)


def test_deterministic(problem, small_dict, small_model):
    y, _, _ = problem
    cfg = SolverConfig.from_name("gfb-mrf", k=6, kmax=4)
    a = run_recon(y, small_model, small_dict, cfg).maps
    b = run_recon(y, small_model, small_dict, cfg).maps
    assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("t1", "t2", "pd", "atom_index"))
