"""Snapshot selection and evaluation metrics.

Snapshots are analysis frames with active source energy; metric averages run
over snapshots only. TDOA error follows the per-pair mean absolute deviation
relative to microphone 1; position metrics are the mean 2D error and the share
of snapshots within 10 cm (inclusive).
"""

from __future__ import annotations

import logging
from typing import Iterable, Mapping

import numpy as np

from .geometry import TdoaVector
from .spectral import StftConfig

logger = logging.getLogger(__name__)


def vad_snapshots(reference: np.ndarray, cfg: StftConfig, drop_db: float = 30.0) -> np.ndarray:
    """Frames whose energy is within ``drop_db`` of the loudest frame.

    ``reference`` should be the clean source-only signal when available
    (oracle selection); the noisy mixture degrades gracefully. Multichannel
    input is pooled by summing channel energies.
    """
    x = np.asarray(reference, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_frames = cfg.n_frames(x.shape[0])
    idx = np.arange(n_frames)[:, None] * cfg.hop + np.arange(cfg.frame_len)[None, :]
    energy = (x[idx] ** 2).sum(axis=(1, 2))
    peak = energy.max()
    if peak <= 0:
        logger.warning("no active frames: reference signal is silent")
        return np.array([], dtype=int)
    threshold = peak * 10.0 ** (-drop_db / 10.0)
    return np.flatnonzero(energy > threshold)


def _check_reference(vec: TdoaVector) -> None:
    if vec.ref_mic != 0:
        raise ValueError("estimates must be rewritten relative to microphone 1")


def mean_tdoa_error(
    estimates: Mapping[int, TdoaVector],
    truth: TdoaVector,
    snapshots: Iterable[int],
) -> float:
    """Mean absolute TDOA error in milliseconds over snapshots and microphones.

    Both estimates and truth must be relative to microphone 1; the average
    runs over the M - 1 non-reference entries of each snapshot.
    """
    _check_reference(truth)
    total = 0.0
    count = 0
    for s in snapshots:
        vec = estimates[s]
        _check_reference(vec)
        total += np.abs(vec.taus[1:] - truth.taus[1:]).mean()
        count += 1
    if count == 0:
        return 0.0
    return 1e3 * total / count


def position_metrics(
    estimates: Mapping[int, np.ndarray],
    truth,
    snapshots: Iterable[int],
) -> tuple[float, float]:
    """Mean 2D position error in cm and the accuracy percentage at 10 cm.

    The accuracy threshold is inclusive: an error of exactly 10 cm counts.
    """
    truth = np.asarray(truth, dtype=float)[:2]
    errors = [
        float(np.linalg.norm(np.asarray(estimates[s], dtype=float)[:2] - truth))
        for s in snapshots
    ]
    if not errors:
        return 0.0, 0.0
    err_cm = 100.0 * np.asarray(errors)
    acc = 100.0 * float(np.mean(err_cm <= 10.0))
    return float(err_cm.mean()), acc
