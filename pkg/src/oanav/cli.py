"""Command-line interface: scenario generation, episode runs, experiment
batches, and point-cloud annotation."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .annotate import AnnotateConfig, annotate_sessions
from .config import EpisodeConfig
from .episode import VARIANTS, run_batch, run_episode, summarize, summary_rows
from .geometry import OrientedBox3
from .lidar import read_oapc
from .scene import ModelDb, Scene, SceneConfig, randomize_scene


def _load_config(path: str | None) -> EpisodeConfig:
    if path is None:
        return EpisodeConfig()
    return EpisodeConfig.load(path)


def cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = ModelDb()
    if args.density == "mixed":
        n_dense = max(args.n // 3, min(8, args.n))
        n_medium = (args.n - n_dense) // 2
        n_sparse = args.n - n_dense - n_medium
        densities = (["sparse"] * n_sparse + ["medium"] * n_medium
                     + ["dense"] * n_dense)
    else:
        densities = [args.density] * args.n
    for i, density in enumerate(densities):
        cfg = SceneConfig(seed=args.seed * 1000 + i, density=density)
        scene = randomize_scene(cfg, models)
        path = out / f"scene_{i:03d}.json"
        scene.save(path)
        print(f"{path}  density={density} objects={len(scene.objects)} "
              f"con_feasible={scene.con_feasible}")
    return 0


def cmd_run(args) -> int:
    scene = Scene.load(args.scene)
    cfg = _load_config(args.config)
    variant = VARIANTS[args.variant]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "resolved_config.json")
    t0 = time.time()
    metrics = run_episode(scene, variant, cfg, args.seed,
                          scene_name=Path(args.scene).stem, out_dir=out_dir)
    wall = time.time() - t0
    print(f"success={metrics.success} t_g={metrics.t_g:.2f}s "
          f"t_r={metrics.t_r:.2f}s d_g={metrics.d_g:.3f}m "
          f"(wall {wall:.1f}s)")
    return 0 if metrics.success else 1


def cmd_batch(args) -> int:
    scene_paths = sorted(Path(args.scenes).glob("*.json"))
    if not scene_paths:
        print(f"no scene files in {args.scenes}", file=sys.stderr)
        return 2
    names = (list(VARIANTS) if args.variants == "all"
             else args.variants.split(","))
    for name in names:
        if name not in VARIANTS:
            print(f"unknown variant {name!r}", file=sys.stderr)
            return 2
    cfg = _load_config(args.config)

    def progress(done, total, m):
        print(f"[{done}/{total}] {m.scene} {m.variant}: "
              f"success={m.success} t_g={m.t_g:.1f} t_r={m.t_r:.2f}",
              file=sys.stderr)

    t0 = time.time()
    results = run_batch(scene_paths, names, cfg, args.out, args.seed,
                        jobs=args.jobs, keep_logs=args.keep_logs,
                        progress=progress)
    wall = time.time() - t0
    print(f"\n{len(results)} episodes in {wall:.1f}s "
          f"-> {Path(args.out) / 'summary.csv'}")
    for row in summary_rows(summarize(results)):
        print(row)
    return 0


def cmd_annotate(args) -> int:
    sessions = [read_oapc(p) for p in args.sessions]
    models = ModelDb()
    if args.models:
        manifest = Path(args.models) / "models.json"
        if manifest.exists():
            for entry in json.loads(manifest.read_text()):
                models.get(entry["class"], int(entry.get("seed", 0)))
        else:
            models.get("chair", 0)
            models.get("table", 0)
    else:
        models.get("chair", 0)
        models.get("table", 0)
    manual = None
    if args.manual_boxes:
        manual = []
        for b in json.loads(Path(args.manual_boxes).read_text()):
            manual.append(OrientedBox3(b["center"], b["size"], b["yaw"]))
    labeled = annotate_sessions(sessions, models, AnnotateConfig(),
                                manual_boxes=manual)
    labeled.save(args.out)
    n_aligned = sum(1 for i in labeled.instances if i.aligned)
    print(f"{args.out}: {len(labeled.instances)} instances "
          f"({n_aligned} aligned), "
          f"{int((labeled.instance >= 0).sum())} labeled points")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="oanav",
        description="Object-aware LiDAR navigation simulation and benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate random scenarios")
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--density", default="mixed",
                   choices=["sparse", "medium", "dense", "mixed"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("run", help="run one episode")
    p.add_argument("--scene", required=True)
    p.add_argument("--variant", required=True, choices=list(VARIANTS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run an experiment batch")
    p.add_argument("--scenes", required=True, help="directory of scene JSONs")
    p.add_argument("--variants", default="all")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None)
    p.add_argument("--keep-logs", action="store_true",
                   help="write per-episode trajectory/track logs")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("annotate", help="label multi-session clouds")
    p.add_argument("--sessions", nargs="+", required=True,
                   help="two or more .oapc files, first one gets labeled")
    p.add_argument("--models", default=None,
                   help="directory with models.json manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--manual-boxes", default=None,
                   help="JSON list of user boxes merged with clustering")
    p.set_defaults(func=cmd_annotate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
