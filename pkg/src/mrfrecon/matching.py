"""Exhaustive fingerprint matching (projection onto the compressed Bloch cone)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence import Dictionary


@dataclass(eq=False)
class CompressedDictionary:
    """Compressed atoms ``D_c = D V`` and their norms.

    With an autocalibration basis attached, matching scores use ``D_c V_ac``
    while norms stay those of the rank-``r`` rows ``D_c``.
    """

    D_c: np.ndarray  # (n_atoms, k) or (n_atoms, r)
    V_ac: np.ndarray | None = None  # (r, k)

    def __post_init__(self):
        if self.D_c.shape[0] == 0:
            raise ValueError("empty dictionary")
        self.norms = np.linalg.norm(self.D_c, axis=1)
        if np.any(self.norms <= 0):
            raise ValueError("dictionary has zero-norm atoms")
        self.atoms = self.D_c if self.V_ac is None else self.D_c @ self.V_ac

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    def with_autocal(self, V_ac: np.ndarray) -> "CompressedDictionary":
        if V_ac.shape[0] != self.D_c.shape[1]:
            raise ValueError(f"V_ac has {V_ac.shape[0]} rows, dictionary rank is {self.D_c.shape[1]}")
        return CompressedDictionary(self.D_c, V_ac)


def compress_dictionary(dictionary: Dictionary | np.ndarray, V: np.ndarray) -> CompressedDictionary:
    D = dictionary.D if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    return CompressedDictionary(D @ V)


@dataclass
class MatchResult:
    atom_index: np.ndarray  # (N,) int
    rho: np.ndarray  # (N,) >= 0
    resynthesized: np.ndarray  # (N, k)


def match(x: np.ndarray, dict_c: CompressedDictionary, chunk: int = 256) -> MatchResult:
    """Most correlated atom per voxel, clamped proton density, and re-synthesis.

    Ties go to the smallest atom index; all-zero voxels map to atom 0 with
    zero density.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != dict_c.k:
        raise ValueError(f"image has {x.shape[-1]} channels, dictionary has {dict_c.k}")
    atoms_h = dict_c.atoms.conj().T
    norms = dict_c.norms
    n = x.shape[0]
    idx = np.empty(n, np.int64)
    rho = np.empty(n)
    for s in range(0, n, chunk):
        ip = x[s : s + chunk] @ atoms_h  # <D_c(k,:), x(i,:)>
        best = np.argmax(np.abs(ip) / norms, axis=1)
        idx[s : s + chunk] = best
        sel = ip[np.arange(len(best)), best]
        rho[s : s + chunk] = np.maximum(sel.real / norms[best] ** 2, 0.0)
    return MatchResult(idx, rho, rho[:, None] * dict_c.atoms[idx])


def match_autocal(x: np.ndarray, dict_c: CompressedDictionary, V_ac: np.ndarray) -> MatchResult:
    """Matching through an autocalibration basis (rank-``r`` norms kept)."""
    if dict_c.V_ac is not None:
        raise ValueError("dictionary already carries an autocalibration basis")
    return match(x, dict_c.with_autocal(V_ac))


@dataclass
class TissueMaps:
    t1: np.ndarray
    t2: np.ndarray
    pd: np.ndarray
    atom_index: np.ndarray


def lut_lookup(result: MatchResult, dictionary: Dictionary | np.ndarray,
               shape: tuple[int, int] | None = None) -> TissueMaps:
    """Read (T1, T2) from the table; voxels with zero density report zeros."""
    lut = dictionary.lut if isinstance(dictionary, Dictionary) else np.asarray(dictionary)
    idx = np.asarray(result.atom_index)
    if np.any(idx < 0) or np.any(idx >= len(lut)):
        raise IndexError("atom index outside the look-up table")
    fg = result.rho > 0
    t1 = np.where(fg, lut[idx, 0], 0.0)
    t2 = np.where(fg, lut[idx, 1], 0.0)
    pd = np.where(fg, result.rho, 0.0)
    maps = TissueMaps(t1, t2, pd, idx.copy())
    if shape is not None:
        maps = TissueMaps(*(a.reshape(shape) for a in (maps.t1, maps.t2, maps.pd, maps.atom_index)))
    return maps
