"""
On-disk frame stream written by ``simulate`` and replayed by ``ingest``:

* ``manifest.txt``: ``width W``, ``height H``, ``intrinsics fx fy cx cy``, ``count N``, then one
  ``frame <id> <x> <y> <z> <pitch> <yaw>`` line per frame
* ``<id:06d>.depth`` and ``<id:06d>.conf``: float32 little-endian, row-major H x W

``camera.txt`` holds the first three manifest lines alone; ``ingest`` writes one next to the
snapshot with the working camera the geometry was built for.
"""

import dataclasses
import logging
import os
from pathlib import Path

import numpy as np

from geometry import Intrinsics, Pose
from world import render_depth

logger = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
CAMERA = "camera.txt"
FRAME_DTYPE = np.dtype("<f4")


class StreamFormatError(ValueError):
    """Manifest and frame files disagree or cannot be parsed"""


@dataclasses.dataclass(frozen=True)
class StreamFrame(object):
    frame_id: int
    pose: Pose
    depth: np.ndarray
    confidence: np.ndarray


def frame_paths(folder, frame_id):
    base = Path(folder) / "{0:06d}".format(frame_id)
    return base.with_suffix(".depth"), base.with_suffix(".conf")


def _format_float(value):
    return repr(float(value))


def _camera_lines(intr):
    return ["width {0}".format(intr.width), "height {0}".format(intr.height),
            "intrinsics {0}".format(" ".join(_format_float(v) for v in (intr.fx, intr.fy, intr.cx, intr.cy)))]


def write_stream(folder, frames, intr):
    """
    Write frames and their manifest

    :param folder: output directory, created if missing
    :param frames: iterable of (frame_id, Pose, depth, confidence)
    :param intr: Intrinsics of the depth maps
    :return: the number of frames written
    """
    folder = Path(folder)
    os.makedirs(folder, exist_ok=True)
    lines = []
    for frame_id, pose, depth, confidence in frames:
        if np.shape(depth) != intr.shape or np.shape(confidence) != intr.shape:
            raise ValueError("frame {0}: size {1} differs from {2}".format(
                frame_id, np.shape(depth), intr.shape))
        depth_path, conf_path = frame_paths(folder, frame_id)
        depth_path.write_bytes(np.ascontiguousarray(depth, dtype=FRAME_DTYPE).tobytes())
        conf_path.write_bytes(np.ascontiguousarray(confidence, dtype=FRAME_DTYPE).tobytes())
        lines.append("frame {0} {1}".format(frame_id, " ".join(_format_float(v) for v in pose.as_tuple())))
    header = _camera_lines(intr) + ["count {0}".format(len(lines))]
    (folder / MANIFEST).write_text("\n".join(header + lines) + "\n")
    logger.info("Wrote %d frames to %s", len(lines), folder)
    return len(lines)


def simulate_stream(folder, terrain, poses, intr, noise_fraction=0.0, seed=0):
    """Render every pose of an unrolled trajectory and write the stream"""
    frames = ((frame_id, pose) + render_depth(terrain, pose, intr, noise_fraction, seed + frame_id)
              for frame_id, pose in enumerate(poses))
    return write_stream(folder, frames, intr)


def _expect(fields, key, size, line_no, name=MANIFEST):
    if len(fields) != size + 1 or fields[0] != key:
        raise StreamFormatError("{0}:{1}: expected '{2}' with {3} values".format(name, line_no, key, size))
    return fields[1:]


def _parse_camera(lines, name=MANIFEST):
    width = int(_expect(lines[0], "width", 1, 1, name)[0])
    height = int(_expect(lines[1], "height", 1, 2, name)[0])
    fx, fy, cx, cy = (float(v) for v in _expect(lines[2], "intrinsics", 4, 3, name))
    return Intrinsics(fx, fy, cx, cy, width, height)


def write_camera(path, intr):
    Path(path).write_text("\n".join(_camera_lines(intr)) + "\n")


def read_camera(path):
    """Intrinsics from a ``camera.txt`` file"""
    lines = [line.split() for line in Path(path).read_text().splitlines()]
    if len(lines) < 3:
        raise StreamFormatError("{0}: truncated camera".format(path))
    try:
        return _parse_camera(lines, CAMERA)
    except ValueError as err:
        if isinstance(err, StreamFormatError):
            raise
        raise StreamFormatError("{0}: {1}".format(path, err))


def read_manifest(folder):
    """
    Parse ``manifest.txt``

    :return: (Intrinsics, list of (frame_id, Pose))
    """
    path = Path(folder) / MANIFEST
    lines = [line.split() for line in path.read_text().splitlines()]
    if len(lines) < 4:
        raise StreamFormatError("{0}: truncated header".format(path))
    try:
        intr = _parse_camera(lines)
        count = int(_expect(lines[3], "count", 1, 4)[0])
        frames = []
        for line_no, fields in enumerate(lines[4:], 5):
            if not fields:
                continue
            values = _expect(fields, "frame", 6, line_no)
            frames.append((int(values[0]), Pose(*(float(v) for v in values[1:]))))
    except ValueError as err:
        if isinstance(err, StreamFormatError):
            raise
        raise StreamFormatError("{0}: {1}".format(path, err))
    if count != len(frames):
        raise StreamFormatError("{0}: count {1} but {2} frame lines".format(path, count, len(frames)))
    ids = [frame_id for frame_id, _ in frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise StreamFormatError("{0}: frame ids not strictly increasing".format(path))
    return intr, frames


def check_stream(folder):
    """Fail when the manifest and the frame files on disk do not match"""
    intr, frames = read_manifest(folder)
    listed = set()
    for frame_id, _ in frames:
        listed.update(path.name for path in frame_paths(folder, frame_id))
    on_disk = {path.name for path in Path(folder).iterdir() if path.suffix in (".depth", ".conf")}
    if listed != on_disk:
        missing, extra = sorted(listed - on_disk), sorted(on_disk - listed)
        raise StreamFormatError("{0}: manifest lists {1} frames, missing {2}, unlisted {3}".format(
            folder, len(frames), missing[:4], extra[:4]))
    return intr, frames


def _read_map(path, intr):
    data = np.frombuffer(path.read_bytes(), dtype=FRAME_DTYPE)
    if data.size != intr.width * intr.height:
        raise StreamFormatError("{0}: {1} values, expected {2}x{3}".format(
            path, data.size, intr.height, intr.width))
    return data.reshape(intr.shape).astype(np.float32)


def read_stream(folder):
    """
    Iterate a stream in frame order

    :return: (Intrinsics, generator of StreamFrame)
    """
    intr, frames = check_stream(folder)

    def generate():
        for frame_id, pose in frames:
            depth_path, conf_path = frame_paths(folder, frame_id)
            yield StreamFrame(frame_id, pose, _read_map(depth_path, intr), _read_map(conf_path, intr))

    return intr, generate()


def ingest_stream(folder, memory):
    """
    Replay a stream through a SpatialMemory engine; a partial final window is flushed

    :param folder: stream directory
    :param memory: the SpatialMemory to feed (its intrinsics must match the stream)
    :return: list of FrameDecision in frame order
    """
    intr, frames = read_stream(folder)
    if intr.shape != memory.intr.shape:
        raise StreamFormatError("{0}: frames are {1}, engine expects {2}".format(
            folder, intr.shape, memory.intr.shape))
    decisions = [memory.observe(frame.frame_id, frame.pose, frame.depth, frame.confidence)
                 for frame in frames]
    memory.flush()
    logger.info("Ingested %d frames, %d keyframes, %d points", len(decisions),
                memory.keyframe_count, len(memory.geometry))
    return decisions
