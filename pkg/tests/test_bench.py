import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn
from mrfrecon.bench import (Ellipse, NoiseSpec, TissueClass, add_noise, make_phantom, relative_error,
                            roi_stats, run_sweep, simulate_measurements, sweep_csv)
from mrfrecon.core import Geometry
from mrfrecon.forward import ForwardModel, make_cartesian_scheme, make_coil_maps
from mrfrecon.sequence import epg_fingerprint, make_schedule

TINY_SWEEP = {"nx": 16, "ny": 16, "lengths": [40], "noise": [0.001], "R": 4,
              "methods": ["classical", "gfb-mrf"], "kmax": 3, "k": 5, "timing": False}


def frames_model(shape, L, R=1, C=1, seed=0):
    geo = Geometry(*shape)
    return ForwardModel(make_coil_maps(geo, C, seed), make_cartesian_scheme(geo, R, seed=seed, L=L),
                        np.ones((L, 1)))


def test_two_disks_exact_values():
    classes = [TissueClass("a", 800, 80, 1.0, Ellipse(-0.5, 0, 0.3, 0.3)),
               TissueClass("b", 1200, 100, 0.5, Ellipse(0.5, 0, 0.3, 0.3))]
    ph = make_phantom((32, 32), classes, seed=0, pd_variation=0)
    a = Ellipse(-0.5, 0, 0.3, 0.3).mask((32, 32))
    b = Ellipse(0.5, 0, 0.3, 0.3).mask((32, 32))
    assert np.all(ph.t1_map[a] == 800) and np.all(ph.t2_map[b] == 100)
    assert np.all(ph.pd_map[b] == 0.5)
    assert np.array_equal(ph.support_mask, a | b)
    assert np.all(ph.pd_map[~ph.support_mask] == 0) and np.all(ph.t1_map[~ph.support_mask] == 0)


def test_later_region_wins():
    big = TissueClass("big", 1000, 100, 1.0, Ellipse(0, 0, 0.8, 0.8))
    small = TissueClass("small", 500, 50, 1.0, Ellipse(0, 0, 0.2, 0.2))
    ph = make_phantom((16, 16), [big, small], pd_variation=0)
    assert ph.t1_map[8, 8] == 500


def test_default_phantom_invariants():
    ph = make_phantom(Geometry(64, 64), seed=3)
    m = ph.support_mask
    assert np.all(ph.t1_map[m] >= ph.t2_map[m]) and np.all(ph.t2_map[m] > 0) and np.all(ph.pd_map[m] > 0)
    assert len({(a, b) for a, b in zip(ph.t1_map[m], ph.t2_map[m])}) >= 4
    again = make_phantom(Geometry(64, 64), seed=3)
    assert np.array_equal(ph.pd_map, again.pd_map)
    assert not np.array_equal(ph.pd_map, make_phantom(Geometry(64, 64), seed=4).pd_map)
    with pytest.raises(ValueError):
        make_phantom((8, 8), [TissueClass("x", 50, 100, 1.0, Ellipse(0, 0, 1, 1))])


def test_zero_pd_gives_zero_data():
    ph = make_phantom((16, 16)).scaled(0.0)
    y = simulate_measurements(ph, make_schedule(20, 0), frames_model((16, 16), 20, R=2))
    assert not np.any(y)


def test_single_voxel_direct_dft():
    m = np.zeros((8, 8), bool)
    m[2, 5] = True
    ph = make_phantom((8, 8), [TissueClass("v", 900, 60, 0.7, m)], pd_variation=0)
    s = make_schedule(15, 1)
    y = simulate_measurements(ph, s, frames_model((8, 8), 15))
    fp = epg_fingerprint(s, 900, 60)
    kx, ky = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    phase = np.exp(-2j * np.pi * (kx * 2 + ky * 5) / 8).ravel() / 8
    assert np.allclose(y[0], 0.7 * fp[:, None] * phase[None, :], atol=1e-12)


def test_truncation_causal_and_pd_linear():
    ph = make_phantom((16, 16), seed=2)
    s = make_schedule(30, 4)
    full = frames_model((16, 16), 30, R=3, C=2)
    y = simulate_measurements(ph, s, full)
    short = ForwardModel(full.coils, full.scheme.truncate(12), np.ones((12, 1)))
    assert np.allclose(simulate_measurements(ph, s.truncate(12), short), y[:, :12], atol=1e-14)
    assert np.array_equal(simulate_measurements(ph.scaled(2.0), s, full), 2 * y)


def test_grid_snapped_simulation(small_dict):
    ph = make_phantom((16, 16), seed=0)
    model = frames_model((16, 16), small_dict.L, R=2)
    a = simulate_measurements(ph, small_dict.schedule, model, dict_grid_free=False, dictionary=small_dict)
    b = simulate_measurements(ph, small_dict.schedule, model)
    assert a.shape == b.shape and not np.allclose(a, b)


def test_noise(rng):
    y = crandn(rng, 4, 5)
    assert np.array_equal(add_noise(y, NoiseSpec(0.0)), y)
    big = np.zeros(1_000_000, complex)
    big[0] = 10.0
    n = add_noise(big, NoiseSpec(0.01, seed=3)) - big
    assert abs(np.std(n.real) / 0.1 - 1) < 0.01 and abs(np.std(n.imag) / 0.1 - 1) < 0.01
    assert np.array_equal(add_noise(y, NoiseSpec(0.1, 5)), add_noise(y, NoiseSpec(0.1, 5)))
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


def test_relative_error(rng):
    t = rng.uniform(100, 2000, (10, 10))
    m = rng.random((10, 10)) > 0.3
    assert relative_error(t, t, m) == 0
    assert relative_error(1.1 * t, t, m) == pytest.approx(0.1, abs=1e-14)
    e = rng.uniform(0, 3000, (10, 10))
    acc, n = 0.0, 0
    for i in range(10):
        for j in range(10):
            if m[i, j]:
                acc += abs(e[i, j] - t[i, j]) / t[i, j]
                n += 1
    assert abs(relative_error(e, t, m) - acc / n) < 1e-14
    p = rng.permutation(100)
    assert relative_error(e.ravel()[p], t.ravel()[p], m.ravel()[p]) == pytest.approx(relative_error(e, t, m), rel=1e-14)
    t[m] = 0
    with pytest.raises(ValueError):
        relative_error(e, t, m)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(1, 1e4), min_size=2, max_size=30), st.floats(0.01, 100))
def test_roi_stats_scale_invariant(vals, c):
    v = np.array(vals)
    roi = np.ones(len(v), bool)
    _, _, a = roi_stats(v, roi)
    _, _, b = roi_stats(c * v, roi)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_roi_stats_hand_values():
    assert roi_stats(np.array([2.0, 4.0]), np.array([True, True])) == pytest.approx((3, np.sqrt(2), np.sqrt(2) / 3))
    assert roi_stats(np.full(5, 7.0), np.ones(5, bool))[1:] == (0.0, 0.0)
    with pytest.raises(ValueError):
        roi_stats(np.ones(3), np.zeros(3, bool))


def test_sweep_rows_and_determinism():
    a = run_sweep(TINY_SWEEP)
    rows = list(csv.DictReader(io.StringIO(sweep_csv(a, timing=False))))
    assert [r["method"] for r in rows] == ["classical", "gfb-mrf"]
    assert sweep_csv(run_sweep(TINY_SWEEP), timing=False) == sweep_csv(a, timing=False)
    bad = run_sweep({**TINY_SWEEP, "methods": ["nonsense", "classical"]})
    assert bad[0].error and bad[1].error is None
    assert "failed" in sweep_csv(bad).splitlines()[1]
