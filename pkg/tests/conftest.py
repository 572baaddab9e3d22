import numpy as np
import pytest

from mrfrecon.core import Geometry
from mrfrecon.forward import ForwardModel, make_cartesian_scheme, make_coil_maps
from mrfrecon.sequence import TissueGrid, build_dictionary, make_schedule, svd_compress


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_grid():
    t1 = [300, 500, 700, 800, 1000, 1300, 1600, 2500, 4000]
    t2 = [40, 50, 60, 80, 90, 100, 120, 200, 1000, 2000]
    return TissueGrid(np.array(t1, float), np.array(t2, float))


@pytest.fixture(scope="session")
def small_dict(small_grid):
    return build_dictionary(make_schedule(80, seed=3), small_grid)


@pytest.fixture(scope="session")
def small_model(small_dict):
    geo = Geometry(16, 16)
    scheme = make_cartesian_scheme(geo, 4, seed=2, L=small_dict.L)
    V = svd_compress(small_dict, 6).V
    return ForwardModel(make_coil_maps(geo, 2, seed=5), scheme, V)


def golden_min(f, lo, hi, iters=200):
    """Golden-section search kept in extended precision."""
    lo, hi = np.longdouble(lo), np.longdouble(hi)
    g = (np.sqrt(np.longdouble(5)) - 1) / 2
    a, b = hi - g * (hi - lo), lo + g * (hi - lo)
    fa, fb = f(a), f(b)
    for _ in range(iters):
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - g * (hi - lo)
            fa = f(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + g * (hi - lo)
            fb = f(b)
    return float((lo + hi) / 2)


def ls_objective(gx, y):
    gr, gi = gx.real.astype(np.longdouble), gx.imag.astype(np.longdouble)
    yr, yi = y.real.astype(np.longdouble), y.imag.astype(np.longdouble)
    return lambda t: np.sum((t * gr - yr) ** 2 + (t * gi - yi) ** 2)
