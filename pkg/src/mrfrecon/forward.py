"""Observation operator ``G = M F S C^H`` in the compressed temporal domain.

Images live as ``(N, k)`` matrices (voxels x compressed channels, voxel index
``ix * ny + iy``). Data are ``(C, L, S)``: one readout of ``S`` samples per
time point per coil. The temporal basis ``V`` (``L x k``) decompresses frame
``t`` as ``X_c @ V[t].conj()``; that mixing is applied at the sampling stage so
only ``k`` Fourier transforms are needed per coil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import i0

from .core import Geometry


class DimensionError(ValueError):
    pass


@dataclass(eq=False)
class SamplingScheme:
    """Gridded k-space followed by a sparse per-time-point sampling matrix.

    ``interp`` maps a flattened k-space grid of size ``M`` to the ``L * S``
    samples (row ``t * S + s``); ``sqrt_w`` optionally weights every sample.
    """

    variant: str
    shape: tuple[int, int]
    L: int
    S: int
    interp: sp.csr_matrix
    sqrt_w: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.interp = sp.csr_matrix(self.interp)
        self._interp_h = self.interp.conj().T.tocsr()
        self._frames = None

    @property
    def M(self) -> int:
        return self.interp.shape[1]

    def to_kspace(self, imgs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def from_kspace(self, K: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, K: np.ndarray, V: np.ndarray) -> np.ndarray:
        """``K`` (B, k, M) gridded channels -> (B, L, S) samples."""
        B, k, M = K.shape
        Kp = (self.interp @ K.reshape(B * k, M).T).reshape(self.L, self.S, B, k)
        y = np.einsum("tsbj,tj->bts", Kp, V.conj())
        if self.sqrt_w is not None:
            y *= self.sqrt_w
        return y

    def sample_adjoint(self, y: np.ndarray, V: np.ndarray) -> np.ndarray:
        B = y.shape[0]
        if self.sqrt_w is not None:
            y = y * self.sqrt_w
        z = np.einsum("bts,tj->tsbj", y, V).reshape(self.L * self.S, -1)
        K = self._interp_h @ z
        return K.T.reshape(B, V.shape[1], self.M)

    def _frame_matrix(self) -> sp.csr_matrix:
        if self._frames is None:
            A = self.interp
            rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
            cols = A.indices.astype(np.int64) + (rows // self.S) * self.M
            self._frames = sp.csr_matrix((A.data, cols, A.indptr), shape=(A.shape[0], self.L * self.M))
        return self._frames

    def sample_frames(self, K: np.ndarray) -> np.ndarray:
        """``K`` (B, L, M): frame ``t`` is sampled only at time ``t``."""
        B = K.shape[0]
        y = (self._frame_matrix() @ K.reshape(B, -1).T).T.reshape(B, self.L, self.S)
        if self.sqrt_w is not None:
            y *= self.sqrt_w
        return y

    def truncate(self, L: int) -> "SamplingScheme":
        interp = self.interp[: L * self.S]
        return type(self)(self.variant, self.shape, L, self.S, interp, self.sqrt_w,
                          dict(self.meta), **self._extra())

    def _extra(self) -> dict:
        return {}


@dataclass(eq=False)
class CartesianScheme(SamplingScheme):
    """Unitary 2-D DFT followed by a per-time-point point mask."""

    def to_kspace(self, imgs):
        B = imgs.shape[0]
        return np.fft.fft2(imgs, norm="ortho").reshape(B, -1)

    def from_kspace(self, K):
        return np.fft.ifft2(K.reshape(K.shape[0], *self.shape), norm="ortho")

    @property
    def indices(self) -> np.ndarray:
        """(L, S) flat k-space indices in ``np.fft`` order."""
        return self.interp.indices.reshape(self.L, self.S)


def make_cartesian_scheme(geometry: Geometry, R: float, seed: int = 0,
                          L: int | None = None) -> CartesianScheme:
    """Variable-density random point masks, distinct per time point.

    ``S = ceil(N / R)`` locations are kept at every time point, always
    including a fully sampled ``ceil(nx/16)`` square block around DC.
    """
    if R < 1:
        raise ValueError("undersampling ratio must be >= 1")
    nx, ny = geometry.shape
    N = nx * ny
    L = geometry.L if L is None else L
    S = int(math.ceil(N / R))

    kx = np.fft.fftfreq(nx)[:, None]
    ky = np.fft.fftfreq(ny)[None, :]
    radius = np.sqrt(kx**2 + ky**2).ravel()
    c = int(math.ceil(nx / 16))
    sx = (np.arange(c) - c // 2) % nx
    sy = (np.arange(c) - c // 2) % ny
    center = np.zeros((nx, ny), bool)
    center[np.ix_(sx, sy)] = True
    center = center.ravel()
    # radius ordering breaks ties deterministically if S is smaller than the block
    center_idx = np.flatnonzero(center)
    center_idx = center_idx[np.argsort(radius[center_idx], kind="stable")][:S]
    outer = np.flatnonzero(~center)
    log_p = -np.log1p((radius[outer] / 0.1) ** 2)
    n_draw = S - len(center_idx)

    rng = np.random.default_rng(seed)
    idx = np.empty((L, S), np.int64)
    for t in range(L):
        if n_draw > 0:
            # Gumbel top-k: weighted sampling without replacement
            keys = log_p + rng.gumbel(size=outer.size)
            pick = outer[np.argpartition(-keys, n_draw - 1)[:n_draw]]
            idx[t] = np.sort(np.concatenate([center_idx, pick]))
        else:
            idx[t] = np.sort(center_idx)

    interp = sp.csr_matrix((np.ones(L * S), idx.ravel(), np.arange(L * S + 1)), shape=(L * S, N))
    meta = {"variant": "cartesian", "R": float(R), "seed": int(seed)}
    return CartesianScheme("cartesian", (nx, ny), L, S, interp, None, meta)


def cartesian_from_indices(shape, idx: np.ndarray, meta: dict | None = None) -> CartesianScheme:
    L, S = idx.shape
    N = shape[0] * shape[1]
    interp = sp.csr_matrix((np.ones(L * S), idx.ravel().astype(np.int64), np.arange(L * S + 1)),
                           shape=(L * S, N))
    return CartesianScheme("cartesian", tuple(shape), L, S, interp, None, dict(meta or {}))


# --- gridded spiral -----------------------------------------------------------------

KB_WIDTH = 4
KB_OVERSAMPLING = 1.5


def kb_beta(width=KB_WIDTH, oversampling=KB_OVERSAMPLING) -> float:
    """Kaiser-Bessel shape parameter for a given width and grid oversampling."""
    return math.pi * math.sqrt((width / oversampling) ** 2 * (oversampling - 0.5) ** 2 - 0.8)


def kb_kernel(u, width=KB_WIDTH, beta=None):
    beta = kb_beta(width) if beta is None else beta
    u = np.asarray(u, float)
    arg = 1 - (2 * u / width) ** 2
    return np.where(arg >= 0, i0(beta * np.sqrt(np.clip(arg, 0, None))), 0.0)


def _kb_apodization(n: int, G: int, width=KB_WIDTH, beta=None) -> np.ndarray:
    """Fourier transform of the kernel at centered image positions ``x - n//2``."""
    x = np.arange(n) - n // 2
    u = np.linspace(-width / 2, width / 2, 4001)
    ker = kb_kernel(u, width, beta)
    return np.trapezoid(ker[None, :] * np.cos(2 * np.pi * u[None, :] * x[:, None] / G), u, axis=1)


@dataclass(eq=False)
class SpiralScheme(SamplingScheme):
    coords: np.ndarray = None  # (L, S, 2) in cycles/pixel
    grid: int = 0

    def __post_init__(self):
        super().__post_init__()
        nx, ny = self.shape
        ax = _kb_apodization(nx, self.grid)
        ay = _kb_apodization(ny, self.grid)
        self._deapod = 1.0 / (ax[:, None] * ay[None, :])
        self._rows = (np.arange(nx) - nx // 2) % self.grid
        self._cols = (np.arange(ny) - ny // 2) % self.grid

    def _extra(self):
        return {"coords": self.coords, "grid": self.grid}

    def truncate(self, L):
        new = super().truncate(L)
        new.coords = self.coords[:L]
        return new

    def to_kspace(self, imgs):
        B = imgs.shape[0]
        nx, ny = self.shape
        G = self.grid
        pad = np.zeros((B, G, G), complex)
        pad[:, self._rows[:, None], self._cols[None, :]] = imgs * self._deapod
        return np.fft.fft2(pad).reshape(B, -1) / math.sqrt(nx * ny)

    def from_kspace(self, K):
        B = K.shape[0]
        nx, ny = self.shape
        G = self.grid
        pad = np.fft.ifft2(K.reshape(B, G, G)) * (G * G / math.sqrt(nx * ny))
        return pad[:, self._rows[:, None], self._cols[None, :]] * self._deapod


def spiral_angles(L: int, rotation=82.5, interleaves=48) -> np.ndarray:
    """Per-TR rotation in degrees; every ``interleaves``-th step adds 1.5 deg."""
    steps = np.full(L, float(rotation))
    steps[0] = 0.0
    steps[np.arange(L) % interleaves == 0] += 84.0 - rotation
    steps[0] = 0.0
    return np.cumsum(steps)


def spiral_base(n: int, interleaves=48, inner_ratio=None, ds=None):
    """Single-shot two-regime variable-density spiral.

    The radial spacing per turn is ``U / n`` cycles/pixel, with ``U`` the
    inner undersampling ratio near DC and ``interleaves`` at the edge.

    Returns
    -------
    coords : (S, 2) array in cycles/pixel, all radii <= 0.5
    area : (S,) k-space area per sample (arc step times turn spacing)
    """
    inner = interleaves / 2 if inner_ratio is None else inner_ratio
    ds = 0.5 / n if ds is None else ds

    def U(r):
        t = np.clip((r - 0.1) / 0.15, 0, 1)
        return inner + (interleaves - inner) * t * t * (3 - 2 * t)

    dtheta = 1e-3
    theta, r = [0.0], [0.0]
    while r[-1] < 0.5:
        r.append(r[-1] + U(r[-1]) / (2 * np.pi * n) * dtheta)
        theta.append(theta[-1] + dtheta)
    theta, r = np.asarray(theta), np.minimum(np.asarray(r), 0.5)
    x, y = r * np.cos(theta), r * np.sin(theta)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))])
    s = np.arange(0.0, arc[-1], ds)
    th = np.interp(s, arc, theta)
    rr = np.interp(s, arc, r)
    coords = np.stack([rr * np.cos(th), rr * np.sin(th)], axis=1)
    area = ds * U(rr) / n
    return coords, area


def _kb_interp_matrix(coords: np.ndarray, G: int, width=KB_WIDTH) -> sp.csr_matrix:
    """Sparse interpolation from a ``G x G`` grid (fft order) to ``coords``."""
    P = coords.shape[0]
    beta = kb_beta(width)
    offs = np.arange(width) - (width // 2 - 1)
    g = coords * G
    base = np.floor(g).astype(np.int64)
    jx = base[:, 0:1] + offs[None, :]
    jy = base[:, 1:2] + offs[None, :]
    wx = kb_kernel(g[:, 0:1] - jx, width, beta)
    wy = kb_kernel(g[:, 1:2] - jy, width, beta)
    cols = (jx[:, :, None] % G) * G + (jy[:, None, :] % G)
    vals = wx[:, :, None] * wy[:, None, :]
    nnz = width * width
    return sp.csr_matrix((vals.reshape(-1), cols.reshape(-1), np.arange(P + 1) * nnz),
                         shape=(P, G * G))


def make_spiral_scheme(geometry: Geometry, interleaves: int = 48, rotation: float = 82.5,
                       L: int | None = None, inner_ratio: float | None = None) -> SpiralScheme:
    nx, ny = geometry.shape
    if nx != ny:
        raise ValueError("spiral scheme needs a square geometry")
    L = geometry.L if L is None else L
    base, area = spiral_base(nx, interleaves, inner_ratio)
    S = base.shape[0]
    ang = np.deg2rad(spiral_angles(L, rotation, interleaves))
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    coords = np.stack([c * base[None, :, 0] - s * base[None, :, 1],
                       s * base[None, :, 0] + c * base[None, :, 1]], axis=-1)
    G = int(math.ceil(KB_OVERSAMPLING * nx))
    G += G % 2
    interp = _kb_interp_matrix(coords.reshape(-1, 2), G)
    # density compensation relative to the full interleave set
    sqrt_w = np.sqrt(nx * ny * area / interleaves)
    meta = {"variant": "spiral", "interleaves": int(interleaves), "rotation": float(rotation),
            "grid": G}
    return SpiralScheme("spiral", (nx, ny), L, S, interp, sqrt_w, meta, coords=coords, grid=G)


def spiral_from_coords(shape, coords, sqrt_w, meta) -> SpiralScheme:
    L, S, _ = coords.shape
    G = int(meta["grid"])
    interp = _kb_interp_matrix(coords.reshape(-1, 2), G)
    return SpiralScheme("spiral", tuple(shape), L, S, interp, sqrt_w, dict(meta),
                        coords=coords, grid=G)


# --- coils ----------------------------------------------------------------------------

def make_coil_maps(geometry: Geometry, C: int = 1, seed: int = 0) -> np.ndarray:
    """Smooth complex Gaussian-lobed sensitivities with unit sum of squares.

    Returns an array of shape ``(C, nx, ny)``; ``C == 1`` gives all ones.
    """
    if C < 1:
        raise ValueError("need at least one coil")
    nx, ny = geometry.shape
    if C == 1:
        return np.ones((1, nx, ny), complex)
    rng = np.random.default_rng(seed)
    x = (np.arange(nx) - (nx - 1) / 2) / nx
    y = (np.arange(ny) - (ny - 1) / 2) / ny
    X, Y = np.meshgrid(x, y, indexing="ij")
    maps = np.empty((C, nx, ny), complex)
    for c in range(C):
        ang = 2 * np.pi * c / C + rng.uniform(-0.2, 0.2)
        cx, cy = 0.6 * np.cos(ang), 0.6 * np.sin(ang)
        width = rng.uniform(0.35, 0.5)
        mag = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width**2))
        phase = rng.uniform(-np.pi, np.pi) + rng.uniform(-1, 1) * (X * np.cos(ang) + Y * np.sin(ang))
        maps[c] = mag * np.exp(1j * phase)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


# --- operator -------------------------------------------------------------------------

@dataclass(eq=False)
class ForwardModel:
    coils: np.ndarray  # (C, nx, ny)
    scheme: SamplingScheme
    V: np.ndarray  # (L, k)

    def __post_init__(self):
        self.coils = np.asarray(self.coils, complex)
        if self.coils.shape[1:] != tuple(self.scheme.shape):
            raise DimensionError("coil maps and sampling scheme disagree on image shape")
        if self.V.shape[0] != self.scheme.L:
            raise DimensionError(f"basis has {self.V.shape[0]} time points, scheme has {self.scheme.L}")

    @property
    def shape(self):
        return self.scheme.shape

    @property
    def N(self):
        return self.shape[0] * self.shape[1]

    @property
    def k(self):
        return self.V.shape[1]

    @property
    def C(self):
        return self.coils.shape[0]

    @property
    def data_shape(self):
        return (self.C, self.scheme.L, self.scheme.S)

    def with_basis(self, V: np.ndarray) -> "ForwardModel":
        return replace(self, V=np.asarray(V))

    def truncate(self, L: int, V: np.ndarray) -> "ForwardModel":
        return ForwardModel(self.coils, self.scheme.truncate(L), V)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape != (self.N, self.k):
            raise DimensionError(f"expected image of shape {(self.N, self.k)}, got {x.shape}")
        nx, ny = self.shape
        imgs = self.coils[:, None] * x.T.reshape(1, self.k, nx, ny)
        K = self.scheme.to_kspace(imgs.reshape(-1, nx, ny)).reshape(self.C, self.k, -1)
        return self.scheme.sample(K, self.V)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        if y.shape != self.data_shape:
            raise DimensionError(f"expected data of shape {self.data_shape}, got {y.shape}")
        nx, ny = self.shape
        K = self.scheme.sample_adjoint(y, self.V)
        imgs = self.scheme.from_kspace(K.reshape(self.C * self.k, -1)).reshape(self.C, self.k, nx, ny)
        x = np.sum(self.coils.conj()[:, None] * imgs, axis=0)
        return x.reshape(self.k, -1).T.copy()

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x))

    def forward_frames(self, X: np.ndarray) -> np.ndarray:
        """Uncompressed reference path: ``X`` (N, L), frame ``t`` sampled at time ``t``."""
        L = self.scheme.L
        if X.shape != (self.N, L):
            raise DimensionError(f"expected frames of shape {(self.N, L)}, got {X.shape}")
        nx, ny = self.shape
        imgs = self.coils[:, None] * X.T.reshape(1, L, nx, ny)
        K = self.scheme.to_kspace(imgs.reshape(-1, nx, ny)).reshape(self.C, L, -1)
        return self.scheme.sample_frames(K)

    def fidelity(self, x: np.ndarray, y: np.ndarray) -> float:
        r = y - self.forward(x)
        return float(np.vdot(r, r).real)


def forward(model: ForwardModel, x: np.ndarray) -> np.ndarray:
    return model.forward(x)


def adjoint(model: ForwardModel, y: np.ndarray) -> np.ndarray:
    return model.adjoint(y)


def spectral_radius(model: ForwardModel, iters: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``G^H G``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((model.N, model.k)) + 1j * rng.standard_normal((model.N, model.k))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        z = model.normal(x)
        lam = float(np.linalg.norm(z))
        if lam == 0:
            return 0.0
        x = z / lam
    return lam
