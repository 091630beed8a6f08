"""Command-line interface: simulate, train, render, build-nog, localize, eval.

Every report-producing command writes delimited output (CSV/JSONL) and, where
asked, a rendered figure next to it.  Errors leave no partial output files
and exit with a stable code: 1 usage, 2 bad input, 3 numeric failure,
4 localization failure gate.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config, reference_page
from .core import Box2, Pose2
from .field import FieldModel
from .gridmap import GridScanSource, build_grid
from .logio import ScanLog, from_sim, load_scanlog, parse_carmen, save_scanlog
from .mcl import Localizer, load_trajectory, save_trajectory
from .metrics import (
    ape_report,
    convergence_curve,
    scan_quality,
    throughput_bench,
)
from .motion import MotionNoise
from .nog import Nog, NogScanSource, build_nog
from .render import RaySampling, VolumeScanSource
from .sim import TrajectorySpec, builtin_worlds, generate_log, load_world, save_world
from .train import NonFiniteLossError, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_LOC_FAILED = 4


class UsageError(Exception):
    pass


class LocalizationGateError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise UsageError(message)


def _emit_error(code: int, kind: str, message: str) -> None:
    line = json.dumps({"error": {"code": code, "kind": kind,
                                 "message": message}})
    print(line, file=sys.stderr)


class OutputGuard:
    """Removes declared output files on failure unless they pre-existed."""

    def __init__(self) -> None:
        self.paths: list[str] = []
        self.preexisting: set[str] = set()

    def declare(self, *paths: str | None) -> None:
        for p in paths:
            if p is None:
                continue
            self.paths.append(p)
            if os.path.exists(p):
                self.preexisting.add(p)

    def cleanup(self) -> None:
        for p in self.paths:
            if p not in self.preexisting and os.path.exists(p):
                try:
                    os.remove(p)
                except OSError:
                    pass


def _parse_pose(text: str) -> Pose2:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"pose must be 'x,y,theta', got {text!r}")
    return Pose2(float(parts[0]), float(parts[1]), float(parts[2]))


def _parse_bounds(text: str) -> Box2:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise UsageError(f"bounds must be 'x0,y0,x1,y1', got {text!r}")
    return Box2(*parts)


def _load_world_arg(name: str):
    worlds = builtin_worlds()
    if name in worlds:
        return worlds[name]
    return load_world(name)


def _load_log(path: str) -> ScanLog:
    with open(path, "r", encoding="utf-8") as f:
        head = f.readline()
    if head.startswith("{"):
        return load_scanlog(path)
    log, report = parse_carmen(path)
    if report.skipped_lines:
        print(f"carmen import: skipped {report.skipped_lines} malformed lines",
              file=sys.stderr)
    return log


def _nog_bounds(nog: Nog) -> Box2:
    return Box2(nog.origin[0], nog.origin[1],
                nog.origin[0] + nog.width * nog.resolution,
                nog.origin[1] + nog.height * nog.resolution)


def _scan_source(model: FieldModel | None, nog: Nog | None, cfg: RunConfig):
    params = cfg.lidar.build()
    sampling = RaySampling(cfg.sampling.num_samples, params.range_min,
                           params.range_max)
    if nog is not None:
        return NogScanSource(nog, params, sampling)
    if model is None:
        raise ValueError("need a model or a grid cache to render scans")
    return VolumeScanSource(model, params, sampling)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


# -- commands ---------------------------------------------------------------


def cmd_simulate(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    world = _load_world_arg(args.world)
    with open(args.trajectory, "r", encoding="utf-8") as f:
        traj = json.load(f)
    noise_spec = traj.get("odom_noise", {})
    spec = TrajectorySpec(
        waypoints=[Pose2(*w) for w in traj["waypoints"]],
        speed=traj.get("speed", 0.5),
        scan_rate=traj.get("scan_rate", 10.0),
        odom_noise=MotionNoise(
            noise_spec.get("alpha1", 0.0), noise_spec.get("alpha2", 0.0),
            noise_spec.get("alpha3", 0.0), noise_spec.get("alpha4", 0.0)),
        range_noise_std=traj.get("range_noise_std", 0.0))
    seed = args.seed if args.seed is not None else cfg.seed
    params = cfg.lidar.build()
    guard.declare(args.out, args.save_world)
    sim_log = generate_log(world, spec, params, np.random.default_rng(seed))
    save_scanlog(args.out, from_sim(sim_log))
    if args.save_world:
        save_world(args.save_world, world)
    print(f"simulated {len(sim_log.frames)} frames -> {args.out}")
    return EXIT_OK


def cmd_train(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    log = _load_log(args.log)
    seed = args.seed if args.seed is not None else cfg.seed
    model = FieldModel(cfg.model.encoding(), cfg.model.hidden_width,
                       cfg.model.num_hidden_layers,
                       rng=np.random.default_rng(seed + 1))
    report_path = args.report or args.out + ".report.jsonl"
    plot_path = args.plot or args.out + ".loss.png"
    guard.declare(args.out, report_path, plot_path)
    model, report = fit(log.require_poses(), log.frames,
                        cfg.train.build(seed), model)
    model.save(args.out)
    report.save(report_path)
    from .plots import plot_loss_curves
    plot_loss_curves(report, plot_path)
    last = report.epochs[-1]
    val = "n/a" if last.val_abs_err is None else f"{last.val_abs_err:.3f} m"
    print(f"trained {cfg.train.epochs} epochs; final range loss "
          f"{last.geo_loss:.3f} m, validation {val} -> {args.out}")
    return EXIT_OK


def cmd_render(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    model = FieldModel.load(args.model) if args.model else None
    nog = Nog.load(args.nog) if args.nog else None
    pose = _parse_pose(args.pose)
    if nog is not None and not nog.contains(pose.x, pose.y):
        print("warning: pose outside the grid cache; expect no-returns",
              file=sys.stderr)
    source = _scan_source(model, nog, cfg)
    params = cfg.lidar.build()
    guard.declare(args.out, args.plot)
    ranges, _ = source.render_poses(pose.as_array()[None, :])
    from .core import LidarFrame
    frame = LidarFrame(0.0, ranges[0], params)
    out_log = ScanLog(params, [frame], [pose], [Pose2(0, 0, 0)])
    save_scanlog(args.out, out_log)
    if args.plot:
        from .plots import plot_scan
        plot_scan(frame, pose, args.plot)
    n_valid = int(frame.valid.sum())
    print(f"rendered {params.num_beams} beams ({n_valid} returns) -> {args.out}")
    return EXIT_OK


def cmd_build_nog(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    model = FieldModel.load(args.model)
    bounds = _parse_bounds(args.bounds)
    resolution = args.resolution if args.resolution is not None \
        else cfg.nog.resolution
    guard.declare(args.out, args.image)
    nog = build_nog(model, bounds, resolution)
    nog.save(args.out)
    if args.image:
        if args.image.endswith(".pgm"):
            nog.save_pgm(args.image)
        else:
            from .plots import plot_nog
            plot_nog(nog.values, args.image)
    print(f"built {nog.width} x {nog.height} grid at {resolution} m -> {args.out}")
    return EXIT_OK


def cmd_localize(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    log = _load_log(args.log)
    model = FieldModel.load(args.model) if args.model else None
    nog = Nog.load(args.nog) if args.nog else None
    source = _scan_source(model, nog, cfg)
    if args.bounds:
        bounds = _parse_bounds(args.bounds)
    elif nog is not None:
        bounds = _nog_bounds(nog)
    else:
        raise ValueError("map bounds required: pass --bounds or --nog")
    seed = args.seed if args.seed is not None else cfg.seed
    odometry = log.require_odometry()
    guard.declare(args.out, args.plot)
    loc = Localizer(cfg.filter.build(bounds, seed), cfg.observation.build(),
                    cfg.motion.build(), source)
    records = []
    for k, frame in enumerate(log.frames):
        records.append(loc.step(odometry[k] if k > 0 else None, frame))
    save_trajectory(args.out, records)
    if args.plot:
        from .plots import plot_trajectory
        truth = [p for p in log.poses if p is not None]
        plot_trajectory(records, truth if len(truth) == len(log) else None,
                        None, args.plot)
    conv = next((r for r in records if r.converged), None)
    status = f"converged at t={conv.timestamp:.2f}s" if conv else "did not converge"
    print(f"localized {len(records)} frames ({status}) -> {args.out}")
    return EXIT_OK


def _truth_arrays(log: ScanLog):
    poses = log.require_poses()
    return log.times(), np.array([p.as_array() for p in poses])


def cmd_eval_ape(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    records = load_trajectory(args.traj)
    truth_log = _load_log(args.truth)
    est_t = np.array([r.timestamp for r in records])
    est_p = np.array([r.pose.as_array() for r in records])
    truth_t, truth_p = _truth_arrays(truth_log)
    conv = next((r.timestamp for r in records if r.converged), None)
    report = ape_report(est_t, est_p, truth_t, truth_p,
                        init_window=cfg.eval.init_window,
                        max_gap=cfg.eval.pairing_max_gap,
                        convergence_time=conv)
    rows = report.rows()
    for name, value in rows:
        print(f"{name:>22}: {value}")
    if args.out:
        guard.declare(args.out)
        _write_csv(args.out, ["metric", "value"], [list(r) for r in rows])
    if args.plot:
        guard.declare(args.plot)
        times, errs = convergence_curve(est_t, est_p, truth_t, truth_p,
                                        cfg.eval.pairing_max_gap)
        from .plots import plot_convergence
        plot_convergence(times, errs, args.plot)
    if not report.converged:
        raise LocalizationGateError(
            f"localization failed the gate: location RMSE "
            f"{report.location_rmse_cm:.1f} cm, yaw RMSE "
            f"{report.yaw_rmse_deg:.2f} deg")
    return EXIT_OK


def cmd_eval_scan(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    log = _load_log(args.log)
    model = FieldModel.load(args.model) if args.model else None
    nog = Nog.load(args.nog) if args.nog else None
    source = _scan_source(model, nog, cfg)
    poses = log.require_poses()
    from .core import LidarFrame
    pose_arr = np.array([p.as_array() for p in poses])
    rendered, _ = source.render_poses(pose_arr)
    per_frame = []
    for i, (pose, frame) in enumerate(zip(poses, log.frames)):
        r_frame = LidarFrame(frame.timestamp, rendered[i], frame.params)
        try:
            q = scan_quality(r_frame, frame, pose, cfg.eval.scan_threshold)
        except ValueError:
            continue
        per_frame.append([frame.timestamp, q.avg_abs_error, q.acc, q.chamfer,
                          q.f_score, q.n_beams])
    if not per_frame:
        raise ValueError("no frames with mutually valid beams")
    arr = np.array([r[1:] for r in per_frame], dtype=float)
    w = arr[:, 4] / arr[:, 4].sum()
    print(f"frames evaluated: {len(per_frame)}")
    print(f"avg abs error: {np.dot(w, arr[:, 0]):.4f} m")
    print(f"acc(<{cfg.eval.scan_threshold:g} m): {np.dot(w, arr[:, 1]):.2f} %")
    print(f"chamfer: {np.dot(w, arr[:, 2]):.4f} m")
    print(f"f-score: {np.dot(w, arr[:, 3]):.4f}")
    if args.out:
        guard.declare(args.out)
        _write_csv(args.out,
                   ["t", "avg_abs_error", "acc", "chamfer", "f_score", "beams"],
                   per_frame)
    if args.plot:
        guard.declare(args.plot)
        from .plots import plot_convergence
        plot_convergence(np.array([r[0] for r in per_frame]), arr[:, 0],
                         args.plot)
    return EXIT_OK


def cmd_eval_converge(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    records = load_trajectory(args.traj)
    truth_log = _load_log(args.truth)
    est_t = np.array([r.timestamp for r in records])
    est_p = np.array([r.pose.as_array() for r in records])
    truth_t, truth_p = _truth_arrays(truth_log)
    times, errs = convergence_curve(est_t, est_p, truth_t, truth_p,
                                    cfg.eval.pairing_max_gap)
    print(f"{errs.size} frames; final location error {errs[-1]:.3f} m")
    if args.out:
        guard.declare(args.out)
        _write_csv(args.out, ["t", "location_error_m"],
                   [[t, e] for t, e in zip(times, errs)])
    if args.plot:
        guard.declare(args.plot)
        from .plots import plot_convergence
        plot_convergence(times, errs, args.plot)
    return EXIT_OK


def cmd_eval_bench(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    log = _load_log(args.log)
    model = FieldModel.load(args.model) if args.model else None
    nog = Nog.load(args.nog) if args.nog else None
    variants = {}
    if model is not None:
        variants["field"] = _scan_source(model, None, cfg)
    if nog is not None:
        variants["nog"] = _scan_source(None, nog, cfg)
    if not variants:
        raise ValueError("need --model and/or --nog to benchmark")
    if args.bounds:
        bounds = _parse_bounds(args.bounds)
    elif nog is not None:
        bounds = _nog_bounds(nog)
    else:
        raise ValueError("map bounds required: pass --bounds or --nog")
    counts = [int(v) for v in args.counts.split(",")]
    rows = throughput_bench(variants, counts, log.frames[0], bounds,
                            cfg.observation.build(), cfg.motion.build(),
                            rng_seed=cfg.seed)
    print(f"{'variant':>8} {'particles':>10} {'s/frame':>10} {'Hz':>8}")
    for r in rows:
        print(f"{r.variant:>8} {r.particles:>10} {r.seconds_per_frame:>10.4f} "
              f"{r.hz:>8.2f}")
    if args.out:
        guard.declare(args.out)
        _write_csv(args.out,
                   ["variant", "particles", "seconds_per_frame", "hz",
                    "particles_per_second"],
                   [[r.variant, r.particles, r.seconds_per_frame, r.hz,
                     r.particles_per_second] for r in rows])
    if args.plot:
        guard.declare(args.plot)
        from .plots import plot_bench
        plot_bench(rows, args.plot)
    return EXIT_OK


def cmd_compare_obs(args, guard: OutputGuard) -> int:
    cfg = load_config(args.config)
    log = _load_log(args.log)
    grid_log = _load_log(args.grid_from)
    model = FieldModel.load(args.model)
    params = cfg.lidar.build()
    resolution = args.resolution if args.resolution is not None \
        else cfg.nog.resolution
    grid = build_grid(grid_log.require_poses(), grid_log.frames, resolution)
    sources = {"field": _scan_source(model, None, cfg),
               "raycast": GridScanSource(grid, params)}
    poses = log.require_poses()
    pose_arr = np.array([p.as_array() for p in poses])
    from .core import LidarFrame
    table = []
    for name, source in sources.items():
        rendered, _ = source.render_poses(pose_arr)
        reports = []
        for i, (pose, frame) in enumerate(zip(poses, log.frames)):
            r_frame = LidarFrame(frame.timestamp, rendered[i], frame.params)
            try:
                reports.append(scan_quality(r_frame, frame, pose,
                                            cfg.eval.scan_threshold))
            except ValueError:
                continue
        if not reports:
            raise ValueError(f"{name}: no frames with mutually valid beams")
        w = np.array([r.n_beams for r in reports], dtype=float)
        w = w / w.sum()
        table.append([name,
                      float(np.dot(w, [r.avg_abs_error for r in reports])),
                      float(np.dot(w, [r.acc for r in reports])),
                      float(np.dot(w, [r.chamfer for r in reports])),
                      float(np.dot(w, [r.f_score for r in reports]))])
    print(f"{'variant':>8} {'avg_err':>9} {'acc %':>7} {'chamfer':>9} {'F':>6}")
    for name, avg, acc, cd, f1 in table:
        print(f"{name:>8} {avg:>9.4f} {acc:>7.2f} {cd:>9.4f} {f1:>6.3f}")
    if args.out:
        guard.declare(args.out)
        _write_csv(args.out, ["variant", "avg_abs_error", "acc", "chamfer",
                              "f_score"], table)
    if args.plot:
        guard.declare(args.plot)
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6, 4))
        names = [t[0] for t in table]
        ax.bar(names, [t[1] for t in table], color=["tab:blue", "tab:orange"])
        ax.set_ylabel("avg abs range error (m)")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        plt.close(fig)
    return EXIT_OK


def cmd_config_reference(args, guard: OutputGuard) -> int:
    print(reference_page(), end="")
    return EXIT_OK


def cmd_import_carmen(args, guard: OutputGuard) -> int:
    log, report = parse_carmen(args.input)
    guard.declare(args.out)
    save_scanlog(args.out, log)
    print(f"imported {report.frames} frames "
          f"({report.skipped_lines} lines skipped) -> {args.out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="scanloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p = sub.add_parser("simulate", help="generate a synthetic scan log")
    add_common(p)
    p.add_argument("--world", required=True,
                   help="builtin world name or world file")
    p.add_argument("--trajectory", required=True, help="trajectory JSON file")
    p.add_argument("--out", required=True, help="output scan log")
    p.add_argument("--save-world", default=None, help="also write the world file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit an occupancy field to a posed log")
    add_common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True, help="output model checkpoint")
    p.add_argument("--report", default=None, help="training report JSONL")
    p.add_argument("--plot", default=None, help="loss-curve figure")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a scan at a pose")
    add_common(p)
    p.add_argument("--model", default=None)
    p.add_argument("--nog", default=None, help="render from a grid cache")
    p.add_argument("--pose", required=True, help="x,y,theta")
    p.add_argument("--out", required=True, help="output one-frame scan log")
    p.add_argument("--plot", default=None, help="scan figure")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("build-nog", help="precompute the occupancy grid cache")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--bounds", required=True, help="x0,y0,x1,y1")
    p.add_argument("--resolution", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--image", default=None, help="grayscale image (.pgm or .png)")
    p.set_defaults(func=cmd_build_nog)

    p = sub.add_parser("localize", help="run the particle filter over a log")
    add_common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--nog", default=None)
    p.add_argument("--bounds", default=None, help="x0,y0,x1,y1 map bounds")
    p.add_argument("--out", required=True, help="output trajectory log")
    p.add_argument("--plot", default=None, help="trajectory figure")
    p.set_defaults(func=cmd_localize)

    pe = sub.add_parser("eval", help="metrics and benchmarks")
    esub = pe.add_subparsers(dest="eval_command", required=True)

    p = esub.add_parser("ape", help="absolute pose error report")
    add_common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--truth", required=True, help="scan log with truth poses")
    p.add_argument("--out", default=None, help="report CSV")
    p.add_argument("--plot", default=None, help="error-series figure")
    p.set_defaults(func=cmd_eval_ape)

    p = esub.add_parser("scan", help="rendered-scan quality vs a posed log")
    add_common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--nog", default=None)
    p.add_argument("--out", default=None, help="per-frame CSV")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_eval_scan)

    p = esub.add_parser("converge", help="per-frame location error series")
    add_common(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_eval_converge)

    p = esub.add_parser("bench", help="observation-model throughput")
    add_common(p)
    p.add_argument("--log", required=True, help="scan log providing the frame")
    p.add_argument("--model", default=None)
    p.add_argument("--nog", default=None)
    p.add_argument("--bounds", default=None)
    p.add_argument("--counts", default="1000,5000",
                   help="comma-separated particle counts")
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_eval_bench)

    p = sub.add_parser("compare-obs",
                       help="field vs grid ray-casting scan quality")
    add_common(p)
    p.add_argument("--log", required=True, help="evaluation log with poses")
    p.add_argument("--model", required=True)
    p.add_argument("--grid-from", required=True,
                   help="log used to build the grid map")
    p.add_argument("--resolution", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_compare_obs)

    p = sub.add_parser("import-carmen", help="convert a CARMEN log")
    add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_carmen)

    p = sub.add_parser("config-reference",
                       help="print all settings with defaults")
    p.set_defaults(func=cmd_config_reference)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    guard = OutputGuard()
    try:
        args = parser.parse_args(argv)
        return args.func(args, guard)
    except UsageError as err:
        _emit_error(EXIT_USAGE, "usage", str(err))
        return EXIT_USAGE
    except LocalizationGateError as err:
        _emit_error(EXIT_LOC_FAILED, "localization-failed", str(err))
        return EXIT_LOC_FAILED
    except NonFiniteLossError as err:
        guard.cleanup()
        _emit_error(EXIT_NUMERIC, "numeric",
                    f"{err} (epoch {err.epoch}, batch {err.batch_index})")
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        guard.cleanup()
        _emit_error(EXIT_INPUT, "input", str(err))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
