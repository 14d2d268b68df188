"""Command-line entry points: run, eval, query, generate-scene."""

from __future__ import annotations

import argparse
import os
import sys

import cv2
import numpy as np

from .errors import EmptyStore, SplatSlamError
from .evaluation import MetricsReport, SceneSpec, ate_rmse, generate_scene, psnr, ssim
from .geometry import read_trajectory, write_trajectory
from .loopclosure import EmbeddingStore, read_embeddings
from .pipeline import PipelineConfig, run_trials


def _add_run(sub):
    p = sub.add_parser("run", help="run the full SLAM pipeline")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--input", help="input path or 'synthetic'")
    p.add_argument("--format", dest="input_format",
                   choices=["synthetic", "tum_rgb", "image_dir"])
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--provider", choices=["oracle", "matcher"])
    p.add_argument("--embedding-file", dest="embedding_file")
    p.add_argument("--serial", action="store_true", default=None)
    p.add_argument("--threaded", action="store_true", default=None)
    p.add_argument("--no-global-opt", action="store_true",
                   help="ablation: disable loop-driven global optimization only")
    p.set_defaults(func=cmd_run)


def cmd_run(args) -> int:
    overrides = {}
    for key in ("input", "input_format", "output_dir", "seed", "trials",
                "provider", "embedding_file"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.no_global_opt:
        overrides["global_opt"] = False
    if args.threaded:
        overrides["serial"] = False
    elif args.serial:
        overrides["serial"] = True
    if args.config:
        cfg = PipelineConfig.from_file(args.config, overrides)
    else:
        cfg = PipelineConfig.from_dict(overrides)
    report, all_reports = run_trials(cfg)
    sys.stdout.write(report.format())
    if len(all_reports) > 1:
        ates = sorted(r.ate_rmse for r in all_reports if r.ate_rmse is not None)
        sys.stdout.write(f"trials {len(all_reports)} median_ate {report.ate_rmse:.9g}\n")
    return 0


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a trajectory (and optional renders)")
    p.add_argument("trajectory")
    p.add_argument("groundtruth")
    p.add_argument("--renders-dir", help="directory with rendered/ and reference/ images")
    p.add_argument("--mode", choices=["rigid", "similarity"], default="similarity")
    p.set_defaults(func=cmd_eval)


def cmd_eval(args) -> int:
    est_t, est_p = read_trajectory(args.trajectory)
    ref_t, ref_p = read_trajectory(args.groundtruth)
    report = MetricsReport(
        ate_rmse=ate_rmse(est_p, ref_p, mode=args.mode,
                          estimated_times=est_t, reference_times=ref_t)
    )
    if args.renders_dir:
        rdir = os.path.join(args.renders_dir, "rendered")
        gdir = os.path.join(args.renders_dir, "reference")
        names = sorted(os.listdir(rdir))
        for name in names:
            a = cv2.imread(os.path.join(rdir, name)).astype(np.float64) / 255.0
            b = cv2.imread(os.path.join(gdir, name)).astype(np.float64) / 255.0
            report.psnr_per_keyframe.append(psnr(a, b))
            report.ssim_per_keyframe.append(ssim(a, b))
    sys.stdout.write(report.format())
    return 0


def _add_query(sub):
    p = sub.add_parser("query", help="text-to-trajectory query against a run output")
    p.add_argument("run_dir", help="output directory of a previous run")
    p.add_argument("prompt_file", help="EMB1 file holding the prompt embedding")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_query)


def cmd_query(args) -> int:
    store_path = os.path.join(args.run_dir, "embeddings.emb")
    records = read_embeddings(store_path)
    if not records:
        raise EmptyStore(store_path)
    store = EmbeddingStore()
    for idx, vec in records:
        store.ingest(idx, vec)
    prompts = read_embeddings(args.prompt_file)
    if not prompts:
        raise EmptyStore(args.prompt_file)

    timestamps = {}
    traj = os.path.join(args.run_dir, "trajectory.txt")
    if os.path.isfile(traj):
        times, _ = read_trajectory(traj)
        timestamps = dict(enumerate(times))
    for _, prompt in prompts:
        for rank, (kid, score) in enumerate(store.text_query(prompt, args.top_k)):
            ts = timestamps.get(kid)
            ts_str = f" t={ts:.3f}" if ts is not None else ""
            sys.stdout.write(f"{rank + 1}. keyframe {kid}{ts_str} score {score:.6f}\n")
    return 0


def _add_generate(sub):
    p = sub.add_parser("generate-scene", help="write a synthetic scene as a TUM-style dataset")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_generate)


def cmd_generate(args) -> int:
    spec = SceneSpec(width=args.size, height=args.size, n_frames=args.frames)
    scene = generate_scene(spec, seed=args.seed)
    img_dir = os.path.join(args.out_dir, "rgb")
    os.makedirs(img_dir, exist_ok=True)
    lines = ["# timestamp path"]
    for i, (ts, img) in enumerate(zip(scene.timestamps, scene.images)):
        name = f"rgb/{i:06d}.png"
        bgr = cv2.cvtColor((img * 255).round().astype(np.uint8), cv2.COLOR_RGB2BGR)
        cv2.imwrite(os.path.join(args.out_dir, name), bgr)
        lines.append(f"{ts:.6f} {name}")
    with open(os.path.join(args.out_dir, "rgb.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    write_trajectory(
        os.path.join(args.out_dir, "groundtruth.txt"), scene.timestamps, scene.poses
    )
    sys.stdout.write(f"wrote {len(scene.images)} frames to {args.out_dir}\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="splatslam")
    sub = parser.add_subparsers(required=True)
    _add_run(sub)
    _add_eval(sub)
    _add_query(sub)
    _add_generate(sub)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SplatSlamError as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
