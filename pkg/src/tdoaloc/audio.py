"""Multichannel WAV ingestion and emission.

Accepts 16-bit PCM and 32-bit float files; samples are returned as float64 in
[-1, 1] scaling for PCM input. The loader checks the file's rate against the
expected processing rate instead of resampling.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile


def load_wav(path, expected_fs: int | None = None) -> tuple[int, np.ndarray]:
    """Read a WAV file as (sample_rate, float array of shape (N, channels))."""
    fs, data = wavfile.read(path)
    if expected_fs is not None and fs != expected_fs:
        raise ValueError(f"{path}: sample rate {fs} does not match configured {expected_fs}")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    if x.ndim == 1:
        x = x[:, None]
    return int(fs), x


def save_wav(path, fs: int, data: np.ndarray) -> None:
    """Write float32 WAV; shape (N,) or (N, channels)."""
    wavfile.write(path, int(fs), np.asarray(data, dtype=np.float32))
