"""Command line entry points: simulate scenes, run experiments, build reports."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import save_wav
from .pipeline import ALL_METHODS, T60_BY_CONDITION, ExperimentConfig, run_experiment
from .reporting import write_report
from .simulator import generate_configs, render_scene

logger = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdoaloc",
        description="TDOA estimation and 2D source localization over distributed microphones",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="render scenes to WAV + JSON sidecars")
    _add_common(sim)
    sim.add_argument("--n-scenes", type=int, default=5)
    sim.add_argument("--reverb", choices=sorted(T60_BY_CONDITION), default="med")
    sim.add_argument("--snr-db", type=float, default=5.0)
    sim.add_argument("--duration-s", type=float, default=10.0)
    sim.add_argument("--n-mics", type=int, default=6)

    run = sub.add_parser("run", help="run an experiment and write results + report")
    _add_common(run)
    run.add_argument("--config", type=Path, default=None, help="experiment config JSON")
    run.add_argument("--methods", type=str, default=None,
                     help="comma-separated subset of: " + ",".join(ALL_METHODS))
    run.add_argument("--reverb", choices=sorted(T60_BY_CONDITION), default=None)
    run.add_argument("--n-scenes", type=int, default=None)
    run.add_argument("--scenes", type=Path, nargs="*", default=None,
                     help="scene sidecar JSON files (skips simulation)")

    rep = sub.add_parser("report", help="rebuild report tables and figures from a results CSV")
    rep.add_argument("results_csv", type=Path)
    rep.add_argument("--out", type=Path, default=None)
    return parser


def cmd_simulate(args) -> int:
    out = args.out or Path("scenes")
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    ss = np.random.SeedSequence(seed)
    geom_ss, render_ss = ss.spawn(2)
    scenes = generate_configs(
        args.n_scenes, geom_ss,
        t60_s=T60_BY_CONDITION[args.reverb],
        snr_db=args.snr_db,
        n_mics=args.n_mics,
        condition=args.reverb,
    )
    for scene, child in zip(scenes, render_ss.spawn(len(scenes))):
        rendered = render_scene(scene, child, args.duration_s)
        scene.achieved_t60_s = rendered.achieved_t60_s
        scene.achieved_snr_db = (
            None if np.isinf(rendered.achieved_snr_db) else rendered.achieved_snr_db
        )
        name = f"{args.reverb}_{scene.name}"
        save_wav(out / f"{name}.wav", scene.sample_rate_hz, rendered.mixture)
        save_wav(out / f"{name}_clean.wav", scene.sample_rate_hz, rendered.clean)
        scene.save_json(
            out / f"{name}.json",
            {"mixture_wav": f"{name}.wav", "clean_wav": f"{name}_clean.wav"},
        )
        print(f"wrote {out / name}.json")
    return 0


def cmd_run(args) -> int:
    overrides = {
        "seed": args.seed,
        "out_dir": str(args.out) if args.out else None,
        "methods": tuple(args.methods.split(",")) if args.methods else None,
        "conditions": (args.reverb,) if args.reverb else None,
        "n_scenes": args.n_scenes,
        "scene_files": tuple(str(p) for p in args.scenes) if args.scenes else None,
    }
    try:
        if args.config:
            cfg = ExperimentConfig.from_json(args.config, **overrides)
        else:
            cfg = ExperimentConfig(
                **{k: v for k, v in overrides.items() if v is not None}
            )
    except (OSError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    agg = run_experiment(cfg)
    print(agg.to_string(index=False))
    print(f"results in {cfg.out_dir}")
    return 0


def cmd_report(args) -> int:
    out = args.out or args.results_csv.parent
    agg = write_report(args.results_csv, out)
    print(agg.to_string(index=False))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args)
    if args.command == "run":
        return cmd_run(args)
    return cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
