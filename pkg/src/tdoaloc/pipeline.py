"""Experiment orchestration: scenes in, frame-level results out.

Per frame the pipeline smooths all cross-spectra, estimates every pair's TDOA
and reliability once, and feeds the shared reliability graph to each enabled
method. Methods are evaluated on snapshot frames only (the recursion still
runs on every frame); the frame-level CSV the run emits is the source of truth
from which all reports are recomputed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import reporting
from .audio import load_wav
from .geometry import MicArray, TdoaVector, tdoa_vector_for_source
from .incremental import run_incremental
from .localization import SrpGrid, si_locate, srp_phat_locate, srp_tdoa_readout
from .metrics import vad_snapshots
from .minimal_set import (
    build_graph,
    order_edges,
    prim_mst,
    rewrite_to_reference,
    select_ref_arbitrary,
    select_ref_centroid,
    select_ref_reliability,
)
from .scene import Scene
from .simulator import RenderResult, generate_configs, render_scene
from .spectral import CpsdState, StftConfig, cpsd_update, gcc_phat, phat_weight, stft

logger = logging.getLogger(__name__)

ALL_METHODS = ("srp-phat", "ref-a", "ref-c", "ref-r", "mst", "mst+")
T60_BY_CONDITION = {"anechoic": 0.0, "low": 0.3, "med": 0.5, "high": 1.0}

RESULT_COLUMNS = (
    "scene", "condition", "t60_s", "frame", "method",
    "sigma_frame_ms", "est_x_m", "est_y_m", "pos_err_cm", "cost",
)


@dataclass
class ExperimentConfig:
    seed: int = 0
    methods: tuple[str, ...] = ALL_METHODS
    conditions: tuple[str, ...] = ("med",)
    n_scenes: int = 1
    scene_files: tuple[str, ...] = ()
    out_dir: str = "results"
    sample_rate_hz: int = 16000
    frame_len: int = 1024
    hop: int = 512
    smoothing: float = 0.98
    upsample: int = 10
    vad_drop_db: float = 30.0
    settle_s: float = 2.0
    duration_s: float = 10.0
    room_dims_m: tuple[float, float, float] = (6.0, 7.0, 2.7)
    n_mics: int = 6
    snr_db: float = 5.0
    source_height_m: float = 1.5
    nu_mps: float = 343.0

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method must be enabled")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        for c in self.conditions:
            if c not in T60_BY_CONDITION:
                raise ValueError(f"unknown reverberation condition: {c}")
        if not self.scene_files and self.n_scenes < 1:
            raise ValueError("need scene files or a positive scene count")

    def stft(self) -> StftConfig:
        return StftConfig(self.sample_rate_hz, self.frame_len, self.hop)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        raw.update({k: v for k, v in overrides.items() if v is not None})
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("methods", "conditions", "scene_files", "room_dims_m"):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        return cls(**raw)


@dataclass
class FrameDebug:
    """Per-frame internals kept only when requested by tests/diagnostics."""

    frame: int
    reliabilities: dict
    tree_edges: tuple
    order_rows: np.ndarray
    mst_plus_steps: list
    mst_plus_lag_matrix: np.ndarray


def _reference_vector(tau_matrix: np.ndarray, ref: int, method: str) -> TdoaVector:
    taus = tau_matrix[:, ref].copy()
    taus[ref] = 0.0
    return TdoaVector(ref, taus, method).with_reference(0)


def process_scene(
    scene: Scene,
    mixture: np.ndarray,
    clean: np.ndarray | None,
    cfg: ExperimentConfig,
    scene_seed=0,
    keep_debug: bool = False,
) -> tuple[list[dict], list[FrameDebug]]:
    """Run every enabled method over one scene's snapshot frames."""
    stft_cfg = cfg.stft()
    if mixture.shape[1] != scene.n_mics:
        raise ValueError("channel count does not match the scene")
    array = scene.mic_array()
    nu = scene.nu_mps
    m = scene.n_mics
    rate = cfg.upsample * stft_cfg.sample_rate_hz

    Y = stft(mixture, stft_cfg)
    vad_ref = clean if clean is not None else mixture
    snapshots = vad_snapshots(vad_ref, stft_cfg, cfg.vad_drop_db)
    settle = int(np.ceil(cfg.settle_s * stft_cfg.sample_rate_hz / stft_cfg.hop))
    snapshot_set = set(int(s) for s in snapshots if s >= settle)

    truth = tdoa_vector_for_source(array, scene.source_position_m, nu, ref=0)
    truth_xy = scene.source_position_m[:2]
    centre = scene.room_centre_xy()
    dists = array.pair_distances()
    grid = SrpGrid(x_max=scene.room_dims_m[0], y_max=scene.room_dims_m[1])
    h_src = float(scene.source_position_m[2]) if scene.source_position_m.size > 2 else cfg.source_height_m

    ss = scene_seed if isinstance(scene_seed, np.random.SeedSequence) else np.random.SeedSequence(scene_seed)
    rng = np.random.default_rng(ss)
    ref_a = select_ref_arbitrary(m, rng)
    ref_c = select_ref_centroid(array)

    state = CpsdState(m, stft_cfg.n_bins, cfg.smoothing)
    rows: list[dict] = []
    debug: list[FrameDebug] = []
    for l in range(Y.shape[0]):
        cpsd_update(state, Y[l])
        if l not in snapshot_set:
            continue

        gccs = {}
        peaks = {}
        rels = {}
        tau_hat = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                g = gcc_phat(phat_weight(state.pair(i, j)), dists[i, j], stft_cfg,
                             cfg.upsample, nu, (i, j))
                n_hat, peak = g.peak()
                gccs[(i, j)] = g
                peaks[(i, j)] = (n_hat, peak)
                rels[(i, j)] = peak
                tau_hat[i, j] = n_hat / rate
                tau_hat[j, i] = -tau_hat[i, j]

        graph = build_graph(rels, m)
        tree = prim_mst(graph)
        order = order_edges(tree, graph)
        inc = None

        for method in cfg.methods:
            if method == "srp-phat":
                est = srp_phat_locate(gccs, array, grid, nu, h_src)
                vector = srp_tdoa_readout(est.position, array, nu, 0, h_src)
                pos, cost = est.position, est.cost
            else:
                if method == "ref-a":
                    vector = _reference_vector(tau_hat, ref_a, method)
                elif method == "ref-c":
                    vector = _reference_vector(tau_hat, ref_c, method)
                elif method == "ref-r":
                    vector = _reference_vector(tau_hat, select_ref_reliability(graph), method)
                elif method == "mst":
                    edge_taus = {e: tau_hat[e] for e in tree.edges}
                    vector = rewrite_to_reference(tree, edge_taus, 0)
                    vector = TdoaVector(0, vector.taus, method)
                elif method == "mst+":
                    inc = run_incremental(order, state, array, stft_cfg, cfg.upsample,
                                          nu, 0, pair_peaks=peaks)
                    vector = inc.vector
                est = si_locate(vector, array, nu, centre, h_src)
                pos, cost = est.position, est.cost
            sigma_ms = 1e3 * float(np.abs(vector.taus[1:] - truth.taus[1:]).mean())
            pos_err_cm = 100.0 * float(np.linalg.norm(pos - truth_xy))
            rows.append({
                "scene": scene.name,
                "condition": scene.condition,
                "t60_s": scene.t60_s,
                "frame": l,
                "method": method,
                "sigma_frame_ms": sigma_ms,
                "est_x_m": float(pos[0]),
                "est_y_m": float(pos[1]),
                "pos_err_cm": pos_err_cm,
                "cost": float(cost),
            })
        if keep_debug:
            debug.append(FrameDebug(
                l, rels, tree.edges, order.vertex_rows,
                inc.steps if inc else [],
                inc.lag_matrix if inc else np.zeros((m, m)),
            ))
    return rows, debug


def build_scenes(cfg: ExperimentConfig) -> list[tuple[Scene, int]]:
    """Scenes plus per-scene render seeds; geometry is shared across conditions."""
    base = np.random.SeedSequence(cfg.seed)
    geom_ss, render_ss = base.spawn(2)
    prototypes = generate_configs(
        cfg.n_scenes,
        geom_ss,
        room_dims=cfg.room_dims_m,
        n_mics=cfg.n_mics,
        snr_db=cfg.snr_db,
        sample_rate_hz=cfg.sample_rate_hz,
        source_height=cfg.source_height_m,
    )
    seeds = render_ss.spawn(len(prototypes) * len(cfg.conditions))
    out = []
    k = 0
    for cond in cfg.conditions:
        for proto in prototypes:
            scene = dataclasses.replace(
                proto,
                t60_s=T60_BY_CONDITION[cond],
                condition=cond,
                name=f"{cond}_{proto.name}",
            )
            out.append((scene, seeds[k]))
            k += 1
    return out


def load_scene_file(path, cfg: ExperimentConfig) -> tuple[Scene, np.ndarray, np.ndarray | None]:
    """Load a sidecar JSON and its referenced mixture (and clean, if present)."""
    scene, raw = Scene.load_json(path)
    base = Path(path).parent
    if "mixture_wav" not in raw:
        raise ValueError(f"{path}: sidecar does not reference a mixture_wav")
    _, mixture = load_wav(base / raw["mixture_wav"], cfg.sample_rate_hz)
    clean = None
    if raw.get("clean_wav"):
        _, clean = load_wav(base / raw["clean_wav"], cfg.sample_rate_hz)
    return scene, mixture, clean


def write_results_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([
                r["scene"], r["condition"], f"{r['t60_s']:.9g}", r["frame"], r["method"],
                f"{r['sigma_frame_ms']:.9g}", f"{r['est_x_m']:.9g}", f"{r['est_y_m']:.9g}",
                f"{r['pos_err_cm']:.9g}", f"{r['cost']:.9g}",
            ])


def run_experiment(cfg: ExperimentConfig):
    """Render or load every scene, process it, and emit results plus reports.

    Returns the aggregated report DataFrame; all artifacts land in
    ``cfg.out_dir`` (results.csv, report.csv, report.md, figures).
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    if cfg.scene_files:
        for k, path in enumerate(cfg.scene_files):
            try:
                scene, mixture, clean = load_scene_file(path, cfg)
            except (OSError, ValueError) as exc:
                logger.error("skipping scene %s: %s", path, exc)
                continue
            rows.extend(process_scene(scene, mixture, clean, cfg, scene_seed=(cfg.seed, k))[0])
    else:
        for scene, seed in build_scenes(cfg):
            rendered: RenderResult = render_scene(scene, seed, cfg.duration_s)
            rows.extend(
                process_scene(scene, rendered.mixture, rendered.clean, cfg, scene_seed=seed)[0]
            )
    results_csv = out / "results.csv"
    write_results_csv(rows, results_csv)
    report = reporting.write_report(results_csv, out, methods=cfg.methods)
    return report
