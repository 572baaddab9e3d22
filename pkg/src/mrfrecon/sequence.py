"""FISP schedule, EPG fingerprint simulation, dictionary and temporal bases."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

FA_MAX = 74.0
TR_MIN, TR_MAX = 12.1, 15.0
TE = 2.0
TI = 21.0


@dataclass(frozen=True)
class SequenceSchedule:
    fa: np.ndarray  # degrees
    tr: np.ndarray  # ms
    seed: int
    te: float = TE
    ti: float = TI

    @property
    def L(self) -> int:
        return len(self.fa)

    def truncate(self, L: int) -> "SequenceSchedule":
        if not 1 <= L <= self.L:
            raise ValueError(f"cannot truncate length {self.L} schedule to {L}")
        return SequenceSchedule(self.fa[:L].copy(), self.tr[:L].copy(), self.seed, self.te, self.ti)

    def to_array(self) -> tuple[np.ndarray, dict]:
        meta = {"kind": "schedule", "L": self.L, "seed": self.seed, "te": self.te, "ti": self.ti}
        return np.stack([self.fa, self.tr]), meta

    @classmethod
    def from_array(cls, arr, meta) -> "SequenceSchedule":
        return cls(np.asarray(arr[0], float), np.asarray(arr[1], float), int(meta["seed"]),
                   float(meta.get("te", TE)), float(meta.get("ti", TI)))


def make_schedule(L: int, seed: int = 0) -> SequenceSchedule:
    """Pseudo-random FISP train.

    Flip angles are consecutive half-sine lobes with random length and
    amplitude; TR is a cosine interpolation between random knots. Values are
    drawn one at a time from independent streams so a shorter schedule is
    always a prefix of a longer one with the same seed.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    fa_rng, tr_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    fa = []
    while len(fa) < L:
        length = int(fa_rng.integers(100, 251))
        amp = float(fa_rng.uniform(10.0, FA_MAX))
        fa.extend(amp * np.sin(np.pi * np.arange(length) / length))
    fa = np.clip(np.asarray(fa[:L]), 0.0, FA_MAX)

    spacing = 40
    n_knots = L // spacing + 2
    knots = np.array([tr_rng.uniform(TR_MIN, TR_MAX) for _ in range(n_knots)])
    n = np.arange(L)
    i0, frac = n // spacing, (n % spacing) / spacing
    w = 0.5 - 0.5 * np.cos(np.pi * frac)
    tr = np.clip((1 - w) * knots[i0] + w * knots[i0 + 1], TR_MIN, TR_MAX)
    return SequenceSchedule(fa, tr, int(seed))


def epg_fingerprints(schedule: SequenceSchedule, t1, t2, m0=1.0, *, inversion=True,
                     max_states=101) -> np.ndarray:
    """Simulate FISP fingerprints with the extended phase graph.

    Parameters
    ----------
    schedule : SequenceSchedule
    t1, t2 : array_like
        Relaxation times in ms, broadcast to a common 1-D shape ``(n,)``.
    m0 : float or array_like
        Equilibrium magnetization.
    inversion : bool
        Apply an ideal 180 degree pulse and the TI delay before the train.
    max_states : int
        Cap on the number of dephasing orders tracked.

    Returns
    -------
    ndarray, shape (n, L), complex
        Transverse magnetization at TE of every TR.
    """
    t1, t2, m0 = np.broadcast_arrays(np.atleast_1d(np.asarray(t1, float)),
                                     np.atleast_1d(np.asarray(t2, float)),
                                     np.atleast_1d(np.asarray(m0, float)))
    if np.any(t2 <= 0) or np.any(t1 < t2):
        raise ValueError("non-physical relaxation times: need T1 >= T2 > 0")
    L = schedule.L
    n_atoms = t1.shape[0]
    cap = max(2, min(L + 1, int(max_states)))

    # With zero RF phase and real Z, every F state stays purely imaginary, so
    # track P = Im F+ and M = Im F- in real arithmetic.
    P = np.zeros((cap, n_atoms))
    M = np.zeros((cap, n_atoms))
    Z = np.zeros((cap, n_atoms))
    Z[0] = m0
    if inversion:
        e1 = np.exp(-schedule.ti / t1)
        Z[0] = -m0 * e1 + m0 * (1 - e1)

    out = np.empty((n_atoms, L), complex)
    te = schedule.te
    e1te, e2te = np.exp(-te / t1), np.exp(-te / t2)
    for i in range(L):
        ns = min(i + 2, cap)
        p, m, z = P[:ns], M[:ns], Z[:ns]
        a = np.deg2rad(schedule.fa[i])
        c2, s2, sa, ca = np.cos(a / 2) ** 2, np.sin(a / 2) ** 2, np.sin(a), np.cos(a)
        p_new = c2 * p + s2 * m - sa * z
        m_new = s2 * p + c2 * m + sa * z
        z_new = 0.5 * sa * (p - m) + ca * z

        rest = schedule.tr[i] - te
        e1r, e2r = np.exp(-rest / t1), np.exp(-rest / t2)
        p_new *= e2te
        out[:, i] = 1j * p_new[0]
        p_new *= e2r
        m_new *= e2te * e2r
        z_new *= e1te * e1r
        z_new[0] += m0 * (1 - e1te * e1r)

        # unbalanced gradient: one order of dephasing per TR
        p[1:] = p_new[:-1]
        m[:-1] = m_new[1:]
        m[-1] = 0
        p[0] = -m[0]
        z[:] = z_new
    return out


def epg_fingerprint(schedule: SequenceSchedule, T1: float, T2: float, m0: float = 1.0,
                    **kwargs) -> np.ndarray:
    return epg_fingerprints(schedule, T1, T2, m0, **kwargs)[0]


def isochromat_fingerprint(schedule: SequenceSchedule, T1: float, T2: float, m0: float = 1.0,
                           *, n_spins: int = 2000, inversion: bool = True) -> np.ndarray:
    """Bloch simulation of an ensemble of uniformly dephased isochromats.

    Spoiling is ideal: after each TR every spin precesses by its own angle,
    spread uniformly over one full cycle across the ensemble.
    """
    if T2 <= 0 or T1 < T2:
        raise ValueError("non-physical relaxation times: need T1 >= T2 > 0")
    phi = 2 * np.pi * np.arange(n_spins) / n_spins
    twist = np.exp(1j * phi)
    mxy = np.zeros(n_spins, complex)
    mz = np.full(n_spins, float(m0))
    if inversion:
        mz = -mz
        e1 = np.exp(-schedule.ti / T1)
        mz = mz * e1 + m0 * (1 - e1)

    out = np.empty(schedule.L, complex)
    for i in range(schedule.L):
        a = np.deg2rad(schedule.fa[i])
        my = mxy.imag * np.cos(a) - mz * np.sin(a)
        mz = mxy.imag * np.sin(a) + mz * np.cos(a)
        mxy = mxy.real + 1j * my

        mxy, mz = _relax(mxy, mz, schedule.te, T1, T2, m0)
        out[i] = mxy.mean()
        mxy, mz = _relax(mxy, mz, schedule.tr[i] - schedule.te, T1, T2, m0)
        mxy = mxy * twist
    return out


def _relax(mxy, mz, dt, T1, T2, m0):
    e1 = np.exp(-dt / T1)
    return mxy * np.exp(-dt / T2), mz * e1 + m0 * (1 - e1)


def _arange_incl(start, stop, step):
    return list(np.arange(start, stop + step * 1e-6, step))


@dataclass(frozen=True)
class TissueGrid:
    t1_values: np.ndarray
    t2_values: np.ndarray
    atoms: np.ndarray = field(init=False)  # (n, 2) of (T1, T2), T1-major ascending

    def __post_init__(self):
        t1 = np.asarray(sorted(set(float(v) for v in self.t1_values)))
        t2 = np.asarray(sorted(set(float(v) for v in self.t2_values)))
        object.__setattr__(self, "t1_values", t1)
        object.__setattr__(self, "t2_values", t2)
        atoms = [(a, b) for a in t1 for b in t2 if a >= b]
        if not atoms:
            raise ValueError("grid has no atoms with T1 >= T2")
        object.__setattr__(self, "atoms", np.asarray(atoms, float))

    def __len__(self):
        return len(self.atoms)

    @classmethod
    def default(cls) -> "TissueGrid":
        t1 = (_arange_incl(10, 100, 10) + _arange_incl(120, 1000, 20)
              + _arange_incl(1040, 2000, 40) + _arange_incl(2050, 4500, 100))
        t2 = (_arange_incl(2, 10, 2) + _arange_incl(15, 100, 5) + _arange_incl(110, 300, 10)
              + _arange_incl(350, 800, 50) + _arange_incl(900, 1600, 100)
              + _arange_incl(1800, 3000, 200))
        return cls(np.asarray(t1), np.asarray(t2))

    def hash(self) -> str:
        return hashlib.sha256(self.atoms.tobytes()).hexdigest()[:16]


@dataclass(eq=False)
class Dictionary:
    schedule: SequenceSchedule
    grid: TissueGrid
    D: np.ndarray  # (n_atoms, L) raw fingerprints

    @property
    def lut(self) -> np.ndarray:
        return self.grid.atoms

    @property
    def L(self) -> int:
        return self.D.shape[1]

    @cached_property
    def svd(self) -> tuple[np.ndarray, np.ndarray]:
        """Singular values and right singular vectors (columns) of ``D``."""
        _, s, vh = np.linalg.svd(self.D, full_matrices=False)
        return s, vh.conj().T

    def truncate(self, L: int) -> "Dictionary":
        return Dictionary(self.schedule.truncate(L), self.grid, self.D[:, :L].copy())


def build_dictionary(schedule: SequenceSchedule, grid: TissueGrid | None = None,
                     max_states: int = 101) -> Dictionary:
    grid = grid if grid is not None else TissueGrid.default()
    D = epg_fingerprints(schedule, grid.atoms[:, 0], grid.atoms[:, 1], max_states=max_states)
    bad = ~np.all(np.isfinite(D), axis=1) | ~np.any(D != 0, axis=1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        t1, t2 = grid.atoms[j]
        raise ValueError(f"fingerprint simulation failed for atom {j} (T1={t1}, T2={t2})")
    return Dictionary(schedule, grid, D)


def fix_phase(V: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive."""
    idx = np.argmax(np.abs(V), axis=0)
    pivot = V[idx, np.arange(V.shape[1])]
    phase = np.where(pivot == 0, 1.0, pivot / np.where(pivot == 0, 1.0, np.abs(pivot)))
    return V * phase.conj()[None, :]


@dataclass(frozen=True)
class CompressionBasis:
    V: np.ndarray  # (L, k) orthonormal columns
    singular_values: np.ndarray  # all singular values, descending

    @property
    def k(self) -> int:
        return self.V.shape[1]


def svd_compress(dictionary: Dictionary | np.ndarray, k: int) -> CompressionBasis:
    """Keep the ``k`` leading right singular vectors of the dictionary."""
    if isinstance(dictionary, Dictionary):
        s, V = dictionary.svd
    else:
        _, s, vh = np.linalg.svd(np.asarray(dictionary), full_matrices=False)
        V = vh.conj().T
    if not 1 <= k <= V.shape[1]:
        raise ValueError(f"rank k={k} outside [1, {V.shape[1]}]")
    return CompressionBasis(fix_phase(V[:, :k]), s)


def numerical_rank(singular_values, shape) -> int:
    s = np.asarray(singular_values)
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


@dataclass(frozen=True)
class AutocalBasis:
    V_d_r: np.ndarray | None  # (L, r) dictionary basis
    V_ac: np.ndarray  # (r, k)
    singular_values: np.ndarray

    @property
    def k(self) -> int:
        return self.V_ac.shape[1]

    @property
    def composed(self) -> np.ndarray:
        if self.V_d_r is None:
            raise ValueError("no dictionary basis attached")
        return self.V_d_r @ self.V_ac


def autocal_basis(X_ac: np.ndarray, k: int, V_d_r: np.ndarray | None = None) -> AutocalBasis:
    """Data-driven rank-``k`` basis from an ``N x r`` compressed calibration image."""
    X_ac = np.asarray(X_ac)
    r = X_ac.shape[1]
    if k > r:
        raise ValueError(f"autocalibration rank k={k} exceeds r={r}")
    if V_d_r is not None and V_d_r.shape[1] != r:
        raise ValueError("dictionary basis rank does not match calibration data")
    _, s, vh = np.linalg.svd(X_ac, full_matrices=False)
    V = vh.conj().T
    return AutocalBasis(V_d_r, fix_phase(V[:, :k]), s)
