"""Scene description and sidecar-file round-tripping.

A scene pins everything needed to render and score one static configuration:
room box, microphone and source positions, reverberation target, noise level,
propagation speed, and sample rate. Scenes serialize to JSON; rendered audio
lives in WAV files referenced from the JSON sidecar.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import MicArray, true_tdoa


@dataclass
class Scene:
    room_dims_m: np.ndarray        # (3,)
    mic_positions_m: np.ndarray    # (M, 3)
    source_position_m: np.ndarray  # (3,)
    t60_s: float = 0.0
    snr_db: float = math.inf       # array-averaged; inf disables noise
    nu_mps: float = 343.0
    sample_rate_hz: int = 16000
    name: str = ""
    condition: str = ""
    achieved_t60_s: float | None = None
    achieved_snr_db: float | None = None

    def __post_init__(self):
        self.room_dims_m = np.asarray(self.room_dims_m, dtype=float)
        self.mic_positions_m = np.atleast_2d(np.asarray(self.mic_positions_m, dtype=float))
        self.source_position_m = np.asarray(self.source_position_m, dtype=float)
        if self.t60_s < 0:
            raise ValueError("reverberation time must be nonnegative")
        inside = lambda p: np.all(p >= 0) and np.all(p <= self.room_dims_m)
        if not inside(self.source_position_m) or not all(
            inside(p) for p in self.mic_positions_m
        ):
            raise ValueError("all positions must lie inside the room")

    @property
    def n_mics(self) -> int:
        return self.mic_positions_m.shape[0]

    def mic_array(self) -> MicArray:
        return MicArray(self.mic_positions_m)

    def room_centre_xy(self) -> np.ndarray:
        return self.room_dims_m[:2] / 2.0

    def true_pair_tdoas(self) -> dict[tuple[int, int], float]:
        """Ground-truth TDOA for every unordered pair (i < j), 0-based."""
        out = {}
        for i in range(self.n_mics):
            for j in range(i + 1, self.n_mics):
                out[(i, j)] = true_tdoa(
                    self.source_position_m,
                    self.mic_positions_m[i],
                    self.mic_positions_m[j],
                    self.nu_mps,
                )
        return out

    def to_json_dict(self) -> dict:
        d = {
            "name": self.name,
            "condition": self.condition,
            "room_dims_m": self.room_dims_m.tolist(),
            "mic_positions_m": self.mic_positions_m.tolist(),
            "source_position_m": self.source_position_m.tolist(),
            "t60_s": self.t60_s,
            "snr_db": None if math.isinf(self.snr_db) else self.snr_db,
            "nu_mps": self.nu_mps,
            "sample_rate_hz": self.sample_rate_hz,
            "achieved_t60_s": self.achieved_t60_s,
            "achieved_snr_db": self.achieved_snr_db,
            "true_tdoas_s": {
                f"{i + 1},{j + 1}": t for (i, j), t in self.true_pair_tdoas().items()
            },
        }
        return d

    def save_json(self, path, wav_files: dict[str, str] | None = None) -> None:
        d = self.to_json_dict()
        if wav_files:
            d.update(wav_files)
        Path(path).write_text(json.dumps(d, indent=1))

    @classmethod
    def from_json_dict(cls, d: dict) -> "Scene":
        snr = d.get("snr_db")
        return cls(
            room_dims_m=d["room_dims_m"],
            mic_positions_m=d["mic_positions_m"],
            source_position_m=d["source_position_m"],
            t60_s=d.get("t60_s", 0.0),
            snr_db=math.inf if snr is None else float(snr),
            nu_mps=d.get("nu_mps", 343.0),
            sample_rate_hz=int(d.get("sample_rate_hz", 16000)),
            name=d.get("name", ""),
            condition=d.get("condition", ""),
            achieved_t60_s=d.get("achieved_t60_s"),
            achieved_snr_db=d.get("achieved_snr_db"),
        )

    @classmethod
    def load_json(cls, path) -> tuple["Scene", dict]:
        """Load a sidecar file; returns the scene and the raw dict (which may
        carry wav paths and other extras)."""
        d = json.loads(Path(path).read_text())
        return cls.from_json_dict(d), d
