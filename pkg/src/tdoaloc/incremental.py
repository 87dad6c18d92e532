"""Incremental TDOA re-estimation over the ordered tree edges.

Each step re-estimates one tree edge's TDOA from the phase transform of an
average of cross-spectra: the pair's own cross-spectrum plus, for every
already-processed microphone other than the edge's connected endpoint, the raw
cross-spectrum between that microphone and the edge's new endpoint, phase
shifted into alignment using TDOAs fixed in earlier steps. Spurious
correlation peaks caused by noise and reverberation tend to cancel across
these differently-routed spectra while the direct-path phase adds coherently.

All bookkeeping runs on integer upsampled lags, so the re-estimated TDOA
matrix is consistent exactly, not merely to rounding error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import SPEED_OF_SOUND, MicArray, TdoaVector
from .minimal_set import EdgeOrder
from .spectral import CpsdState, StftConfig, gcc_phat, phat_weight


def indirect_cpsd(psi_ik: np.ndarray, tau_jk: float, cfg: StftConfig) -> np.ndarray:
    """Estimate one pair's cross-spectrum from another pair's by a phase shift.

    Multiplies bin k of ``psi_ik`` by exp(j 2 pi k f_s tau / K). Magnitudes are
    unchanged; the distance-ratio amplitude factor of the exact free-field
    relation is deliberately dropped since only the phase matters downstream.
    """
    psi = np.asarray(psi_ik, dtype=complex)
    if not np.isfinite(tau_jk):
        raise ValueError("phase-shift TDOA must be finite")
    k = np.arange(psi.shape[0])
    shift = np.exp(2j * np.pi * k * cfg.sample_rate_hz * tau_jk / cfg.dft_len)
    return psi * shift


def averaged_phat(direct: np.ndarray, indirect_list) -> np.ndarray:
    """Phase transform of the sum of a direct and any number of indirect spectra."""
    total = np.asarray(direct, dtype=complex).copy()
    for ind in indirect_list:
        ind = np.asarray(ind)
        if ind.shape != total.shape:
            raise ValueError("all spectra must share one length")
        total += ind
    return phat_weight(total)


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    pair: tuple[int, int]  # (new endpoint, connected endpoint); step 1 as presented
    n_indirect: int
    peak_direct: float
    peak_averaged: float
    lag: int

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "pair": [self.pair[0] + 1, self.pair[1] + 1],
            "n_indirect": self.n_indirect,
            "peak_direct": self.peak_direct,
            "peak_averaged": self.peak_averaged,
            "lag": self.lag,
        }


@dataclass
class IncrementalResult:
    vector: TdoaVector
    steps: list[StepDiagnostics]
    lag_matrix: np.ndarray  # (M, M) integer-valued upsampled lags, exactly consistent
    upsample: int
    sample_rate_hz: float

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([s.to_json_dict() for s in self.steps], fh, indent=1)


def run_incremental(
    order: EdgeOrder,
    cpsd: CpsdState,
    array: MicArray,
    cfg: StftConfig,
    upsample: int = 10,
    nu: float = SPEED_OF_SOUND,
    ref: int = 0,
    pair_peaks: dict[tuple[int, int], tuple[int, float]] | None = None,
) -> IncrementalResult:
    """Re-estimate all tree-edge TDOAs by incremental cross-spectrum averaging.

    Parameters
    ----------
    order : EdgeOrder
        Tree edges in processing order for the current frame.
    cpsd : CpsdState
        Raw smoothed cross-spectra of all pairs for the current frame.
    pair_peaks : dict, optional
        (i, j) -> (upsampled peak lag, peak value) from the reliability pass,
        keyed with i < j. Step 1 reuses this estimate verbatim and later steps
        report their pre-averaging peak from it; without it those values are
        recomputed from the state.

    Returns
    -------
    IncrementalResult
        Output vector relative to ``ref``, per-step diagnostics, and the full
        integer lag matrix over all microphones.
    """
    m = array.n_mics
    if len(order.steps) != m - 1:
        raise ValueError("edge order does not span the array")
    rate = upsample * cfg.sample_rate_hz

    def direct_peak(i: int, j: int) -> tuple[int, float]:
        """Peak of pair (i, j)'s own GCC; (lag, value) with i < j."""
        if pair_peaks is not None:
            if (i, j) not in pair_peaks:
                raise KeyError(f"missing pair estimate for ({i}, {j})")
            return pair_peaks[(i, j)]
        g = gcc_phat(phat_weight(cpsd.pair(i, j)), array.distance(i, j), cfg,
                     upsample, nu, (i, j))
        return g.peak()

    lag: dict[tuple[int, int], int] = {}

    def record(a: int, b: int, n: int) -> None:
        lag[(a, b)] = n
        lag[(b, a)] = -n

    diags: list[StepDiagnostics] = []
    processed: set[int] = set()
    for h, step in enumerate(order.steps, start=1):
        if h == 1:
            lo, hi = min(step.u, step.v), max(step.u, step.v)
            n_hat, peak = direct_peak(lo, hi)
            record(lo, hi, n_hat)
            processed.update((lo, hi))
            diags.append(StepDiagnostics(h, (step.u, step.v), 0, peak, peak,
                                         n_hat if step.u == lo else -n_hat))
            continue
        a, b = step.anchor, step.newcomer
        routes = sorted(processed - {a})
        direct = cpsd.pair(b, a)
        indirect = [
            indirect_cpsd(cpsd.pair(b, v), lag[(a, v)] / rate, cfg) for v in routes
        ]
        phat = averaged_phat(direct, indirect)
        g = gcc_phat(phat, array.distance(a, b), cfg, upsample, nu, (b, a))
        n_hat, peak_avg = g.peak()
        lo, hi = min(a, b), max(a, b)
        _, peak_direct = direct_peak(lo, hi)
        record(b, a, n_hat)
        # Close the chain so the processed submatrix stays complete and the
        # next step can phase-align against any processed microphone.
        for v in routes:
            record(b, v, n_hat + lag[(a, v)])
        processed.add(b)
        diags.append(StepDiagnostics(h, (b, a), len(routes), peak_direct, peak_avg, n_hat))

    lag_matrix = np.zeros((m, m))
    for (i, j), n in lag.items():
        lag_matrix[i, j] = n
    taus = lag_matrix[:, ref] / rate
    taus[ref] = 0.0
    return IncrementalResult(
        TdoaVector(ref, taus, "mst+"), diags, lag_matrix, upsample, cfg.sample_rate_hz
    )
