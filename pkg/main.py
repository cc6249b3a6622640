"""
Command-line entry point:

* simulate: render a trajectory over the synthetic terrain to a frame stream
* ingest: replay a stream through the spatial memory, write snapshot and per-frame log
* retrieve: one point-to-frame query against a snapshot, with the camera it was ingested with
* bench: efficiency benchmark of the geometric memory against the pose baseline
* snapshot-info: header of a snapshot

Exit code 0 on success, 2 on a configuration error, 1 on any other failure. Data goes to
stdout, diagnostics to stderr.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from bench import emit_report, emit_sidecar, run_replicated_bench
from config import ConfigError, load_config
from geometry import Pose
from log import entry_from_decision, write_log
from memory_store import SpatialMemory, load_snapshot, save_snapshot, snapshot_info
from metrics import save_summary
from plot import plot_report
from retrieval import point_to_frame_retrieve
from stream import CAMERA, ingest_stream, read_camera, read_manifest, simulate_stream, write_camera
from util.utils import setup_logging, timing
from world import generate_terrain, load_trajectory, make_revisit_trajectory, unroll_trajectory

logger = logging.getLogger(__name__)

SNAPSHOT_NAME = "memory.gmem"
LOG_NAME = "ingest.log"


def build_script(cfg, length=None, seed=None, loops=None):
    """The configured trajectory file, or the seeded revisit generator"""
    if cfg.trajectory:
        return load_trajectory(cfg.trajectory)
    return make_revisit_trajectory(cfg.seed if seed is None else seed, length or cfg.trajectory_length,
                                   cfg.trajectory_loops if loops is None else loops,
                                   step_move=cfg.step_move, step_turn=cfg.step_turn,
                                   eye_height=cfg.eye_height)


def build_terrain(cfg):
    return generate_terrain(cfg.seed, cfg.terrain_extent, cfg.terrain_cell, cfg.terrain_roughness)


@timing
def cmd_simulate(cfg, args):
    terrain = build_terrain(cfg)
    poses = unroll_trajectory(build_script(cfg), terrain, cfg.eye_height)
    count = simulate_stream(args.out, terrain, poses, cfg.intrinsics(), cfg.confidence_noise_fraction,
                            cfg.seed)
    print("frames {0}".format(count))
    print("stream {0}".format(args.out))


@timing
def cmd_ingest(cfg, args):
    intr, _ = read_manifest(args.stream)
    memory = SpatialMemory.from_config(cfg, intr)
    decisions = ingest_stream(args.stream, memory)
    os.makedirs(args.out, exist_ok=True)
    write_log([entry_from_decision(decision) for decision in decisions], Path(args.out) / LOG_NAME)
    save_snapshot(memory.geometry, memory.frames.values(), Path(args.out) / SNAPSHOT_NAME)
    write_camera(Path(args.out) / CAMERA, memory.working_intr)
    print("frames {0}".format(len(decisions)))
    print("keyframes {0}".format(memory.keyframe_count))
    print("points {0}".format(len(memory.geometry)))
    print("snapshot {0}".format(Path(args.out) / SNAPSHOT_NAME))
    print("camera {0}".format(Path(args.out) / CAMERA))


def snapshot_camera(cfg, snapshot):
    """The working camera recorded next to a snapshot by ingest, else the configured one"""
    path = Path(snapshot).parent / CAMERA
    if path.exists():
        return read_camera(path)
    logger.warning("No %s next to %s, using the configured camera", CAMERA, snapshot)
    return cfg.working_intrinsics()


def cmd_retrieve(cfg, args):
    geo, _ = load_snapshot(args.snapshot)
    pose = Pose(*args.pose)
    camera = snapshot_camera(cfg, args.snapshot)
    result = point_to_frame_retrieve(pose, geo, camera, args.k or cfg.top_k,
                                     occlusion=cfg.occlusion and not args.frustum_only)
    print("ids {0}".format(" ".join(str(i) for i in result.frame_ids)))
    print("counts {0}".format(" ".join(str(c) for c in result.counts)))
    print("time_us {0:.1f}".format(result.elapsed_us))


@timing
def cmd_bench(cfg, args):
    scripts = [build_script(cfg, cfg.bench_frames, cfg.seed + replica, cfg.bench_loops)
               for replica in range(cfg.bench_replicas)]
    report = run_replicated_bench(scripts, cfg.bench_frames, cfg.bench_methods, cfg.bench_bucket, cfg,
                                  cfg.bench_workers)
    out = Path(args.out)
    os.makedirs(out, exist_ok=True)
    emit_report(report, out / "bench.csv")
    emit_sidecar(report, cfg, out / "bench.json")
    if report.rows:
        save_summary(report, out / "summary.txt")
        plot_report(report, out / "bench.png")
    print("report {0}".format(out / "bench.csv"))


def cmd_snapshot_info(cfg, args):
    for key, value in snapshot_info(args.snapshot).items():
        print("{0} {1}".format(key, value))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key = value configuration file")
    common.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    common.add_argument("--out", default=None, help="output folder (default: the configured out)")

    parser = argparse.ArgumentParser(prog="spatial-memory", description=__doc__.split("\n\n")[0])
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="render a trajectory to a frame stream")
    ingest = commands.add_parser("ingest", parents=[common], help="replay a stream into the memory")
    ingest.add_argument("stream", help="stream folder written by simulate")
    retrieve = commands.add_parser("retrieve", parents=[common], help="query a snapshot")
    retrieve.add_argument("snapshot")
    retrieve.add_argument("--pose", nargs=5, type=float, required=True,
                          metavar=("X", "Y", "Z", "PITCH", "YAW"))
    retrieve.add_argument("--k", type=int, default=None)
    retrieve.add_argument("--frustum-only", action="store_true", help="disable the z-buffer")
    commands.add_parser("bench", parents=[common], help="run the efficiency benchmark")
    info = commands.add_parser("snapshot-info", parents=[common], help="print a snapshot header")
    info.add_argument("snapshot")
    return parser


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "retrieve": cmd_retrieve,
            "bench": cmd_bench, "snapshot-info": cmd_snapshot_info}


def main(argv=None):
    """ Main function;
    * Parse the command line and load the configuration
    * Run the sub-command
    * Map failures to exit codes
    """
    args = build_parser().parse_args(argv)
    try:
        overrides = {} if args.seed is None else {"seed": args.seed}
        cfg = load_config(args.config, overrides)
    except ConfigError as err:
        print("config error: {0}".format(err), file=sys.stderr)
        return 2
    setup_logging(cfg.log_level)
    if args.out is None:
        args.out = cfg.out
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        print("config error: {0}".format(err), file=sys.stderr)
        return 2
    except Exception as err:
        logger.debug("command failed", exc_info=True)
        print("error: {0}".format(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
