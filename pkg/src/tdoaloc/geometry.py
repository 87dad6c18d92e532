"""Scene geometry: ground-truth delay differences and their consistency algebra.

Coordinates are in meters, times in seconds. Microphone indices are 0-based
throughout the library; file exports use 1-based microphone numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_SOUND = 343.0


def true_tdoa(p, mi, mj, nu: float = SPEED_OF_SOUND) -> float:
    """Signed time-difference-of-arrival of a source at ``p`` between two mics.

    Positive when the source is farther from ``mi`` than from ``mj``.

    Parameters
    ----------
    p, mi, mj : array_like, shape (P,)
        Source and microphone positions. All three must share one dimension.
    nu : float
        Propagation speed in m/s.
    """
    p = np.asarray(p, dtype=float)
    mi = np.asarray(mi, dtype=float)
    mj = np.asarray(mj, dtype=float)
    if p.shape != mi.shape or p.shape != mj.shape:
        raise ValueError(
            f"dimension mismatch: p{p.shape}, mi{mi.shape}, mj{mj.shape}"
        )
    if nu <= 0:
        raise ValueError("propagation speed must be positive")
    return float((np.linalg.norm(p - mi) - np.linalg.norm(p - mj)) / nu)


@dataclass(frozen=True)
class MicArray:
    """An ordered set of microphone positions, shape (M, P)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[0] < 2:
            raise ValueError("need at least two microphones")
        if not np.all(np.isfinite(pos)):
            raise ValueError("microphone positions must be finite")
        d = self._pairwise(pos)
        iu = np.triu_indices(pos.shape[0], k=1)
        if np.any(d[iu] <= 0):
            raise ValueError("coincident microphones")
        object.__setattr__(self, "positions", pos)

    @staticmethod
    def _pairwise(pos):
        diff = pos[:, None, :] - pos[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def ndim(self) -> int:
        return self.positions.shape[1]

    def pair_distances(self) -> np.ndarray:
        """Full symmetric (M, M) matrix of inter-microphone distances."""
        return self._pairwise(self.positions)

    def distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.positions[i] - self.positions[j]))

    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


@dataclass(frozen=True)
class TdoaVector:
    """TDOAs of every microphone relative to one reference microphone.

    ``taus[m]`` is the delay of mic m relative to ``ref_mic`` in seconds;
    the reference entry is exactly zero. ``method`` records provenance.
    """

    ref_mic: int
    taus: np.ndarray
    method: str = ""

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        if not 0 <= self.ref_mic < taus.shape[0]:
            raise ValueError("reference index out of range")
        if taus[self.ref_mic] != 0.0:
            raise ValueError("reference entry of a TDOA vector must be zero")
        object.__setattr__(self, "taus", taus)

    @property
    def n_mics(self) -> int:
        return self.taus.shape[0]

    def with_reference(self, m: int) -> "TdoaVector":
        """Rewrite the vector relative to another reference microphone."""
        taus = self.taus - self.taus[m]
        taus[m] = 0.0
        return TdoaVector(m, taus, self.method)


def tdoa_vector_for_source(
    array: MicArray, p, nu: float = SPEED_OF_SOUND, ref: int = 0
) -> TdoaVector:
    """Ground-truth TDOA vector of a source at ``p`` relative to mic ``ref``."""
    taus = np.array(
        [true_tdoa(p, array.positions[m], array.positions[ref], nu) for m in range(array.n_mics)]
    )
    taus[ref] = 0.0
    return TdoaVector(ref, taus, "truth")


def matrix_from_vector(v: TdoaVector) -> np.ndarray:
    """Expand a reference-relative TDOA vector into the full (M, M) matrix.

    Entry (i, j) is ``taus[i] - taus[j]``; the result is antisymmetric with a
    zero diagonal and numerical rank at most 2.
    """
    t = v.taus
    return t[:, None] - t[None, :]


def consistency_residual(T: np.ndarray) -> float:
    """Largest violation of the chain rule T[i,j] == T[i,m] - T[j,m].

    Zero exactly when the matrix is consistent, i.e., derivable from a single
    reference-relative vector.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError("expected a square matrix")
    dev = T[:, :, None] - T[:, None, :] + T[None, :, :]
    return float(np.abs(dev).max())
