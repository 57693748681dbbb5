"""Command-line pipeline: synth / splat / resample / pipeline / simulate / eval.

Every subcommand is re-runnable: identical inputs and --seed produce
byte-identical outputs. Stage failures exit nonzero with one parseable
`error: <stage>: <message>` line on stderr.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import io, synth
from .cloud import GroupMapping, map_semantic_groups
from .errors import SplatsimError
from .evaluate import (EvalReport, c2c_distance, c2c_per_class, coverage_fraction,
                       density_stats, plane_distance, write_report_csv,
                       write_timings_csv)
from .features import prepare_cloud
from .lidar import (Pose, SimOptions, linear_trajectory, load_sensor_config,
                    load_trajectory, save_trajectory, sensor_preset,
                    simulate_trajectory, splat_dynamic_frames)
from .resample import compute_density, resample_cloud, run_adaptive_pipeline
from .spatial import build_bvh
from .splatgen import GenConfig, Variant, generate_splats

_VARIANTS = {v.value: v for v in Variant}


def _set_threads(n: int | None):
    value = n if n is not None else os.environ.get("SPLATSIM_THREADS")
    if value is None:
        return
    import numba
    numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))


def _add_generation_flags(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=sorted(_VARIANTS), default="basic",
                   help="splat generation variant (default: basic)")
    p.add_argument("--mapping", type=Path, default=None,
                   help="class-to-group mapping file (required for --variant semantic)")
    p.add_argument("--k", type=int, default=40, help="base neighborhood size (default: 40)")
    p.add_argument("--alpha", type=float, default=0.2,
                   help="seed-discard sphere factor in [0,1] (default: 0.2)")
    p.add_argument("--beta", type=float, default=0.6,
                   help="normal smoothness threshold (default: 0.6)")
    p.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   default=None, help="fallback sensor position for normal orientation")


def _gen_config(args) -> GenConfig:
    return GenConfig(variant=_VARIANTS[args.variant], alpha=args.alpha,
                     beta=args.beta, k=args.k)


def _load_mapped_cloud(args, need_dynamic=False):
    cloud = io.load_cloud(args.input, labels_path=getattr(args, "labels", None))
    dynamic = {}
    if args.mapping is not None:
        mapping = GroupMapping.from_file(args.mapping)
        cloud, dynamic = map_semantic_groups(cloud, mapping)
    elif args.variant == "semantic":
        raise SplatsimError("--variant semantic requires --mapping")
    return (cloud, dynamic) if need_dynamic else (cloud, {})


def _cmd_synth(args):
    maker = synth.SCENES[args.scene]
    kwargs = {}
    if args.n is not None:
        key = {"plane": "n", "dihedral": "n_per_face", "pole": "ground_n"}.get(args.scene)
        if key is None:
            raise SplatsimError(f"--n is not applicable to scene {args.scene!r}")
        kwargs[key] = args.n
    if args.noise is not None:
        kwargs["noise" if args.scene != "pole" else "ground_noise"] = args.noise
    cloud = maker(seed=args.seed, **kwargs)
    io.save_cloud(cloud, args.output)
    if args.trajectory_out is not None:
        save_trajectory([Pose(position=args.pose, frame=0)], args.trajectory_out)
    print(f"synth: wrote {len(cloud)} points to {args.output}")
    return 0


def _cmd_splat(args):
    cloud, _ = _load_mapped_cloud(args)
    config = _gen_config(args)
    cloud, index, stats = prepare_cloud(cloud, config.k, viewpoint=args.viewpoint)
    if config.variant == Variant.ADA_DESCRIPTOR:
        from .features import classify_by_descriptors
        cloud = classify_by_descriptors(cloud, index, stats)
    splats = generate_splats(cloud, index, config.with_stats(stats))
    io.save_splats(splats, args.output)
    print(f"splat: wrote {len(splats)} splats to {args.output}")
    return 0


def _cmd_resample(args):
    from .resample import denoise
    cloud, _ = _load_mapped_cloud(args)
    config = _gen_config(args)
    cloud, index, stats = prepare_cloud(cloud, config.k, viewpoint=args.viewpoint)
    cloud = denoise(cloud, index, stats)
    cloud, index, stats = prepare_cloud(cloud, config.k, viewpoint=args.viewpoint)
    if config.variant == Variant.ADA_DESCRIPTOR:
        from .features import classify_by_descriptors
        cloud = classify_by_descriptors(cloud, index, stats)
    splats = generate_splats(cloud, index, config.with_stats(stats))
    density = compute_density(splats, stats)
    resampled = resample_cloud(cloud, splats, density, config.with_stats(stats))
    io.save_cloud(resampled, args.output)
    print(f"resample: {len(cloud)} -> {len(resampled)} points, wrote {args.output}")
    return 0


def _cmd_pipeline(args):
    cloud, dynamic = _load_mapped_cloud(args, need_dynamic=True)
    config = _gen_config(args)
    t0 = time.perf_counter()
    splats, final_cloud = run_adaptive_pipeline(
        cloud, config, resample=not args.no_resample, viewpoint=args.viewpoint)
    elapsed = time.perf_counter() - t0
    if dynamic and not args.drop_dynamic:
        splats = splats.concat(splat_dynamic_frames(dynamic))
    io.save_splats(splats, args.output)
    if args.cloud_out is not None:
        io.save_cloud(final_cloud, args.cloud_out)
    print(f"pipeline: {len(splats)} splats in {elapsed:.2f}s, wrote {args.output}")
    return 0


def _cmd_simulate(args):
    splats = io.load_splats(args.input)
    if args.sensor_config is not None:
        model = load_sensor_config(args.sensor_config)
    else:
        model = sensor_preset(args.sensor)
    if args.trajectory is not None:
        trajectory = load_trajectory(args.trajectory)
    else:
        trajectory = linear_trajectory(args.pose, args.pose, 1)
    options = SimOptions(
        noise_sigma=args.noise_sigma,
        multi_depth=args.multi_depth,
        depth=args.depth,
        max_gap=args.gap,
    )
    bvh = build_bvh(splats)
    scans, accumulated = simulate_trajectory(bvh, splats, model, trajectory,
                                             options, seed=args.seed)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for scan in scans:
        io.save_cloud(scan.to_cloud(), outdir / f"scan_{scan.pose.frame:06d}.ply")
    io.save_cloud(accumulated, outdir / "accumulated.ply")
    total = sum(len(s) for s in scans)
    print(f"simulate: {len(scans)} scans, {total} returns, wrote {outdir}")
    return 0


def _cmd_eval(args):
    sim = io.load_cloud(args.sim)
    ori = io.load_cloud(args.ori)
    timings = {}
    t0 = time.perf_counter()
    c2c = c2c_distance(sim, ori)
    timings["c2c"] = time.perf_counter() - t0

    per_class = {}
    if sim.labels is not None and ori.labels is not None:
        t0 = time.perf_counter()
        per_class = c2c_per_class(sim, ori, classes=args.classes)
        timings["c2c_per_class"] = time.perf_counter() - t0

    radius = args.density_radius
    t0 = time.perf_counter()
    density = density_stats(sim, radius)
    timings["density"] = time.perf_counter() - t0

    plane_c2c = None
    if args.plane_z is not None:
        plane_c2c = plane_distance(sim, (0.0, 0.0, args.plane_z), (0.0, 0.0, 1.0))

    coverage = None
    primitives = None
    if args.splats is not None:
        splats = io.load_splats(args.splats)
        primitives = len(splats)
        t0 = time.perf_counter()
        coverage = coverage_fraction(splats, ori, tolerance=args.coverage_tolerance)
        timings["coverage"] = time.perf_counter() - t0

    report = EvalReport(c2c_mean=c2c, per_class=per_class, density=density,
                        coverage=coverage, primitive_count=primitives,
                        plane_c2c=plane_c2c, timings=timings)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, outdir / "report.csv")
    write_timings_csv(timings, outdir / "timings.csv")
    summary = report.summary()
    (outdir / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatsim",
        description="Adaptive splat modeling and LiDAR simulation over point clouds.",
    )
    parser.add_argument("--seed", type=int, default=0,
                        help="global seed for all stochastic stages (default: 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker thread cap (default: env SPLATSIM_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a built-in synthetic scene")
    p.add_argument("scene", choices=sorted(synth.SCENES))
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--n", type=int, default=None, help="point budget for the scene")
    p.add_argument("--noise", type=float, default=None, help="Gaussian z-noise sigma")
    p.add_argument("--trajectory-out", type=Path, default=None,
                   help="also write a single-pose trajectory file")
    p.add_argument("--pose", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   default=(0.0, 0.0, 2.0), help="pose for --trajectory-out")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("splat", help="one-shot splat generation (no resampling)")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("--labels", type=Path, default=None, help="KITTI .label file")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_generation_flags(p)
    p.set_defaults(func=_cmd_splat)

    p = sub.add_parser("resample", help="denoise and resample a cloud")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("--labels", type=Path, default=None)
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_generation_flags(p)
    p.set_defaults(func=_cmd_resample)

    p = sub.add_parser("pipeline", help="full adaptive pipeline (cloud -> splats)")
    p.add_argument("-i", "--input", type=Path, required=True)
    p.add_argument("--labels", type=Path, default=None)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--cloud-out", type=Path, default=None,
                   help="also write the final (resampled) cloud")
    p.add_argument("--no-resample", action="store_true",
                   help="skip the denoise+resample round (single generation)")
    p.add_argument("--drop-dynamic", action="store_true",
                   help="discard dynamic-class points instead of splatting per frame")
    _add_generation_flags(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("simulate", help="ray-cast a splat model along a trajectory")
    p.add_argument("-i", "--input", type=Path, required=True, help="splat file")
    p.add_argument("-t", "--trajectory", type=Path, default=None,
                   help="trajectory file: `frame x y z [pitch_deg]` per line")
    p.add_argument("--pose", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   default=(0.0, 0.0, 2.0), help="single pose when no trajectory given")
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--sensor", choices=("hdl32", "hdl64"), default="hdl32")
    p.add_argument("--sensor-config", type=Path, default=None,
                   help="sensor model file overriding --sensor")
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="range noise sigma in meters (default: 0, off)")
    p.add_argument("--multi-depth", action="store_true",
                   help="weighted multi-depth returns instead of first hits")
    p.add_argument("--depth", type=int, default=5, help="multi-depth hit budget")
    p.add_argument("--gap", type=float, default=0.1,
                   help="max gap between accumulated hits in meters")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("eval", help="compare a simulated cloud against the original")
    p.add_argument("--sim", type=Path, required=True)
    p.add_argument("--ori", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True, help="report directory")
    p.add_argument("--classes", type=int, nargs="*", default=None)
    p.add_argument("--density-radius", type=float, default=0.5)
    p.add_argument("--coverage-tolerance", type=float, default=0.01)
    p.add_argument("--splats", type=Path, default=None,
                   help="splat file for coverage/primitive metrics")
    p.add_argument("--plane-z", type=float, default=None,
                   help="also report mean distance to the analytic plane z=const")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except SplatsimError as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
