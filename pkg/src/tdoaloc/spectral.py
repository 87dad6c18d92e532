"""STFT framing, recursive cross-spectra, and upsampled phase-transform correlation.

The correlation functions produced here ("GCC functions") are evaluated on an
integer lag grid at ``upsample`` times the audio rate, restricted to the lags a
microphone pair can physically produce. The peak lag divided by the upsampled
rate is the pair's TDOA estimate, and the peak value is its reliability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.signal.windows import hann

from .geometry import SPEED_OF_SOUND

PHAT_GUARD = 1e-12  # relative to the mean bin magnitude


@dataclass(frozen=True)
class StftConfig:
    """Analysis framing: sqrt-Hann window, 50% overlap, DFT length = frame length."""

    sample_rate_hz: float = 16000.0
    frame_len: int = 1024
    hop: int = 512

    def __post_init__(self):
        if self.hop * 2 != self.frame_len:
            raise ValueError("hop must be half the frame length")

    @property
    def dft_len(self) -> int:
        return self.frame_len

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    @cached_property
    def window(self) -> np.ndarray:
        return np.sqrt(hann(self.frame_len, sym=False))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            raise ValueError("signal shorter than one frame")
        return (n_samples - self.frame_len) // self.hop + 1

    def frame_time(self, frame: int) -> float:
        """Center time of a frame in seconds."""
        return (frame * self.hop + self.frame_len / 2) / self.sample_rate_hz


def stft(signal: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Windowed one-sided DFT frames of a signal.

    Parameters
    ----------
    signal : ndarray, shape (N,) or (N, M)
        Mono or multichannel audio.

    Returns
    -------
    ndarray, complex, shape (F, n_bins) or (F, M, n_bins)
    """
    x = np.asarray(signal, dtype=float)
    n = x.shape[0]
    n_frames = cfg.n_frames(n)
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.frame_len)[None, :]
    if x.ndim == 1:
        frames = x[idx] * cfg.window
        return np.fft.rfft(frames, axis=-1)
    frames = x[idx]  # (F, L, M)
    frames = np.moveaxis(frames, 2, 1) * cfg.window
    return np.fft.rfft(frames, axis=-1)


class CpsdState:
    """Recursively smoothed cross-power spectra for all microphone pairs.

    Holds the Hermitian (M, M, n_bins) array psi with psi[j, i] = conj(psi[i, j]).
    The first observed frame initializes the state with the instantaneous
    outer product, so early frames carry no zero-state bias.
    """

    def __init__(self, n_mics: int, n_bins: int, smoothing: float = 0.98):
        if not 0.0 <= smoothing < 1.0:
            raise ValueError("smoothing factor must be in [0, 1)")
        self.smoothing = smoothing
        self.psi = np.zeros((n_mics, n_mics, n_bins), dtype=complex)
        self.frames_seen = 0

    @property
    def n_mics(self) -> int:
        return self.psi.shape[0]

    def pair(self, i: int, j: int) -> np.ndarray:
        """Current cross-spectrum of mics (i, j), shape (n_bins,)."""
        return self.psi[i, j]


def cpsd_update(state: CpsdState, frame_spectra: np.ndarray) -> CpsdState:
    """Fold one frame of per-microphone spectra (M, n_bins) into the state."""
    Y = np.asarray(frame_spectra)
    if Y.shape != (state.n_mics, state.psi.shape[2]):
        raise ValueError(f"expected spectra of shape {state.psi.shape[:1] + state.psi.shape[2:]}")
    inst = Y[:, None, :] * Y[None, :, :].conj()
    if state.frames_seen == 0:
        state.psi[:] = inst
    else:
        lam = state.smoothing
        state.psi *= lam
        state.psi += (1.0 - lam) * inst
    state.frames_seen += 1
    return state


def phat_weight(cpsd_bins: np.ndarray) -> np.ndarray:
    """Phase transform: normalize each bin to unit magnitude.

    Bins whose magnitude is at or below ``PHAT_GUARD`` times the mean bin
    magnitude carry no usable phase and are zeroed.
    """
    psi = np.asarray(cpsd_bins, dtype=complex)
    mag = np.abs(psi)
    thr = PHAT_GUARD * mag.mean()
    out = np.zeros_like(psi)
    live = mag > thr
    out[live] = psi[live] / mag[live]
    return out


@dataclass(frozen=True)
class GccFunction:
    """Correlation values over the admissible upsampled lags of one pair.

    ``values[k]`` corresponds to lag ``n_min + k`` at rate upsample * sample_rate.
    """

    values: np.ndarray
    n_max: int
    upsample: int
    sample_rate_hz: float
    pair: tuple[int, int] = (-1, -1)

    @property
    def n_min(self) -> int:
        return -self.n_max

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.n_max, self.n_max + 1)

    def value_at(self, n: int | np.ndarray) -> np.ndarray:
        return self.values[np.asarray(n) + self.n_max]

    def peak(self) -> tuple[int, float]:
        """Maximizing lag and its value; ties resolve to the smallest |lag|,
        negative before positive."""
        vmax = self.values.max()
        ties = np.flatnonzero(self.values == vmax) - self.n_max
        order = np.lexsort((ties, np.abs(ties)))
        n_hat = int(ties[order[0]])
        return n_hat, float(vmax)


def gcc_phat(
    phat: np.ndarray,
    pair_distance: float,
    cfg: StftConfig,
    upsample: int = 10,
    nu: float = SPEED_OF_SOUND,
    pair: tuple[int, int] = (-1, -1),
) -> GccFunction:
    """Band-limited correlation of a PHAT-weighted cross-spectrum.

    The one-sided spectrum is mirrored to its Hermitian two-sided form with the
    DC bin dropped, zero-padded to ``upsample`` times the DFT length, and
    inverse transformed, which interpolates the correlation exactly. Values are
    normalized by 1/(dft_len - 1) so a fully coherent spectrum peaks near 1,
    and are kept only for lags within the pair's physical range
    ``|n| <= floor(upsample * f_s * distance / nu)``.
    """
    if upsample < 1 or int(upsample) != upsample:
        raise ValueError("upsampling factor must be a positive integer")
    K = cfg.dft_len
    half = K // 2
    phat = np.asarray(phat, dtype=complex)
    if phat.shape[0] != cfg.n_bins:
        raise ValueError("spectrum length does not match the configuration")
    n_max = int(np.floor(upsample * cfg.sample_rate_hz * pair_distance / nu))
    n_fft = upsample * K
    if n_max >= n_fft // 2:
        raise ValueError("pair distance exceeds the representable lag range")

    spec = np.zeros(n_fft, dtype=complex)
    spec[1:half] = phat[1:half]
    spec[n_fft - half + 1:] = phat[half - 1:0:-1].conj()
    # Nyquist energy is split across the +/- images to keep the result real.
    spec[half] = 0.5 * phat[half]
    spec[n_fft - half] = 0.5 * phat[half].conj()

    corr = np.fft.ifft(spec).real * (n_fft / (K - 1))
    values = np.concatenate([corr[n_fft - n_max:], corr[: n_max + 1]])
    return GccFunction(values, n_max, int(upsample), cfg.sample_rate_hz, pair)


def estimate_tdoa(g: GccFunction) -> tuple[float, float]:
    """TDOA in seconds and reliability (peak value) from a GCC function."""
    if g.values.size == 0:
        raise ValueError("empty lag range")
    n_hat, peak = g.peak()
    return n_hat / (g.upsample * g.sample_rate_hz), peak


def dump_gcc_csv(g: GccFunction, path) -> None:
    """Debug dump: one row per lag with columns lag_samples, value.

    Lags are written in audio samples (upsampled lag / upsample factor).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag_samples", "value"])
        for n, v in zip(g.lags, g.values):
            w.writerow([f"{n / g.upsample:.6g}", f"{v:.9g}"])
