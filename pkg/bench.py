"""
Efficiency benchmark: per-bucket retrieval throughput and memory-bank growth of the geometric
memory against the pose baseline on the same rendered stream.
"""

import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from config import RunConfig, config_hash
from memory_store import SpatialMemory
from metrics import COLUMNS, GEOMETRIC, POSE_BASELINE, BenchReport, BucketRow, FrameSample, \
    average_reports, bucket_rows
from retrieval import PoseBaselineMemory
from util.utils import Stopwatch, timing
from world import generate_terrain, render_depth, unroll_trajectory

logger = logging.getLogger(__name__)

METHODS = (GEOMETRIC, POSE_BASELINE)


def machine_descriptor():
    return {"platform": platform.platform(), "processor": platform.processor(),
            "python": platform.python_version(), "numpy": np.__version__}


def render_frames(terrain, poses, intr, noise_fraction=0.0, seed=0):
    """(pose, depth, confidence) of every pose, rendered once and shared by all methods.

    A revisited pose reuses the rendering (and noise draw) of its first visit.
    """
    rendered, frames = {}, []
    for i, pose in enumerate(poses):
        if pose.key() not in rendered:
            rendered[pose.key()] = render_depth(terrain, pose, intr, noise_fraction, seed + i)
        frames.append((pose,) + rendered[pose.key()])
    logger.debug("rendered %d distinct poses out of %d", len(rendered), len(frames))
    return frames


def _run_geometric(frames, cfg, intr):
    memory = SpatialMemory.from_config(cfg.replace(working_downsample=1), intr)
    retrieve_clock, ingest_clock = Stopwatch(), Stopwatch()
    samples = []
    for frame_id, (pose, depth, confidence) in enumerate(frames):
        with retrieve_clock:
            retrieval = memory.retrieve(pose)
        with ingest_clock:
            memory.observe(frame_id, pose, depth, confidence, retrieval)
        samples.append(FrameSample(frame_id, retrieve_clock.elapsed, ingest_clock.elapsed,
                                   memory.keyframe_count))
    return samples


def _run_pose_baseline(frames, cfg, intr):
    bank = PoseBaselineMemory(intr, cfg.top_k)
    retrieve_clock, ingest_clock = Stopwatch(), Stopwatch()
    samples = []
    for frame_id, (pose, _, _) in enumerate(frames):
        with retrieve_clock:
            bank.retrieve(pose)
        with ingest_clock:
            bank.add(frame_id, pose)
        samples.append(FrameSample(frame_id, retrieve_clock.elapsed, ingest_clock.elapsed, len(bank)))
    return samples


RUNNERS = {GEOMETRIC: (_run_geometric, True), POSE_BASELINE: (_run_pose_baseline, False)}


@timing
def run_efficiency_bench(script, n_frames, methods, bucket=1000, cfg=None, terrain=None):
    """
    Stream a trajectory through every requested memory method

    The geometric method is timed around its whole per-frame pipeline (retrieval, then keyframe
    gate and window integration); the baseline around its linear scan. The first
    ``cfg.bench_warmup`` frames are left out of the first bucket's timing.

    :param script: TrajectoryScript with at least n_frames poses
    :param n_frames: frames to stream, a multiple of bucket
    :param methods: method names out of METHODS
    :param bucket: frames per report row
    :param cfg: RunConfig (terrain, camera and engine parameters)
    :param terrain: HeightField, generated from cfg when omitted
    :return: BenchReport
    """
    cfg = cfg or RunConfig()
    methods = list(methods)
    unknown = [method for method in methods if method not in RUNNERS]
    if unknown:
        raise ValueError("unknown bench method(s) {0}, expected {1}".format(unknown, list(METHODS)))
    if bucket < 1 or n_frames < 1 or n_frames % bucket:
        raise ValueError("n_frames {0} must be a positive multiple of bucket {1}".format(n_frames, bucket))
    report = BenchReport(machine=machine_descriptor(), config_hash=config_hash(cfg))
    if not methods:
        return report
    if len(script) < n_frames:
        raise ValueError("trajectory has {0} poses, {1} requested".format(len(script), n_frames))
    if terrain is None:
        terrain = generate_terrain(cfg.seed, cfg.terrain_extent, cfg.terrain_cell, cfg.terrain_roughness)
    intr = cfg.working_intrinsics()
    poses = unroll_trajectory(script, terrain, cfg.eye_height)[:n_frames]
    frames = render_frames(terrain, poses, intr, cfg.confidence_noise_fraction, cfg.seed)
    for method in methods:
        runner, include_ingest = RUNNERS[method]
        samples = runner(frames, cfg, intr)
        rows = bucket_rows(method, samples, bucket, cfg.bench_warmup, include_ingest)
        for row in rows:
            logger.info("%s %d-%d: %.1f q/s, memory +%s = %s", method, row.range_start, row.range_end,
                        row.qps, row.mem_increment, row.mem_total)
        report.rows.extend(rows)
    return report


def run_replicated_bench(scripts, n_frames, methods, bucket=1000, cfg=None, workers=1):
    """Run one benchmark per script on a thread pool and average the reports row-wise"""
    cfg = cfg or RunConfig()
    with ThreadPoolExecutor(max(1, workers)) as executor:
        futures = [executor.submit(run_efficiency_bench, script, n_frames, methods, bucket, cfg)
                   for script in scripts]
        reports = [future.result() for future in futures]
    return average_reports(reports)


def emit_report(report, path):
    """
    Write the report CSV: header plus one row per (method, bucket)

    :param report: the BenchReport
    :param path: output file
    :return: the number of data rows
    """
    frame = pd.DataFrame([row.as_tuple() for row in report.rows], columns=list(COLUMNS))
    frame.to_csv(path, index=False)
    return len(frame)


def _scalar(value):
    return value.item() if hasattr(value, "item") else value


def load_report(path):
    """Parse a report CSV back into a BenchReport (values exactly as written)"""
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"method": str})
    if list(frame.columns) != list(COLUMNS):
        raise ValueError("{0}: columns {1}, expected {2}".format(path, list(frame.columns), list(COLUMNS)))
    rows = [BucketRow(*(_scalar(value) for value in record))
            for record in frame.itertuples(index=False, name=None)]
    return BenchReport(rows)


def emit_sidecar(report, cfg, path):
    """Config echo with machine descriptor, config hash and the per-bucket timing components"""
    sidecar = {"config": cfg.as_dict(), "config_hash": report.config_hash, "machine": report.machine,
               "components": [{"method": row.method, "range_start": row.range_start,
                               "ingest_ms": row.ingest_ms, "retrieve_ms": row.retrieve_ms}
                              for row in report.rows]}
    Path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))
