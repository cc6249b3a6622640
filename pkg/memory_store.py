"""
Global geometry of the spatial memory.

Frames arrive one at a time; a frame becomes a keyframe when it shows enough novel coverage or
when too few historical frames are visible. Keyframes are buffered in a processing window and,
once the window is full, scale-aligned against the overlap frames of the previous window,
back-projected and merged into the voxel-capped point cloud. Non-keyframes keep only their pose.

Snapshot file (little-endian)::

    magic      4s   b"GMEM"
    version    u16  1
    voxel_size f64
    n_max      u32
    n_frames   u32, then n_frames x (u32 id, 5 x f64 pose x y z pitch yaw, u8 keyframe)
    n_points   u32, then n_points x (3 x f32 position, u32 source id, f32 confidence)

Nothing may follow the point table. The voxel index is rebuilt on load.
"""

import dataclasses
import itertools
import logging
import struct
from pathlib import Path

import numpy as np

from geometry import (INVALID_DEPTH, PointCloud, backproject, extrinsics_from_pose, Pose,
                      project_points)
from retrieval import candidate_indices, point_to_frame_retrieve
from scale_alignment import (KEEP_FRACTION, MIN_CORRESPONDENCES, TAU_MIN, RelativeDepthModel,
                             align_window, apply_scale, detect_overlap)

logger = logging.getLogger(__name__)

VOXEL_SIZE = 0.5
MAX_POINTS_PER_VOXEL = 4
THETA_NOVEL = 0.15
TAU_HIST = 8
COVERAGE_ABS_TOL = 0.05
COVERAGE_REL_TOL = 0.02
SPLAT_RADIUS_MAX = 4
"""Largest half-width (pixels) of the footprint searched around a pixel"""
_NEIGHBOURS = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=3)))

MAGIC = b"GMEM"
VERSION = 1
_HEADER = struct.Struct("<4sHdI")
_COUNT = struct.Struct("<I")
FRAME_DTYPE = np.dtype([("id", "<u4"), ("pose", "<f8", (5,)), ("keyframe", "u1")])
POINT_DTYPE = np.dtype([("position", "<f4", (3,)), ("source", "<u4"), ("confidence", "<f4")])

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)


class SnapshotFormatError(ValueError):
    """A snapshot file that cannot be decoded; ``offset`` is where decoding failed"""

    def __init__(self, message, offset):
        super(SnapshotFormatError, self).__init__("{0} (byte offset {1})".format(message, offset))
        self.offset = offset


@dataclasses.dataclass(eq=False)
class FrameRecord(object):
    """
    One observed frame. Keyframes keep their (aligned) depth and confidence; for every other
    frame only the pose metadata is retained.
    """
    frame_id: int
    pose: Pose
    depth: np.ndarray = None
    confidence: np.ndarray = None
    is_keyframe: bool = False

    def meta(self):
        return self.frame_id, self.pose.as_tuple(), bool(self.is_keyframe)


def voxel_cells(positions, voxel_size):
    """Integer voxel coordinate floor(position / voxel_size) of every point"""
    return np.floor(np.asarray(positions, dtype=np.float64) / voxel_size).astype(np.int64)


def voxel_keys(cells):
    """Pack integer cell coordinates into one sortable int64 key per cell"""
    shifted = cells + _KEY_OFFSET
    return (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]


class GlobalGeometry(object):
    """
    Immutable voxel-indexed world point cloud; integration builds a new instance, so readers
    may keep querying an old one.

    :ivar positions: Nx3 float32 world positions
    :ivar frame_ids: N uint32 source keyframe ids
    :ivar confidences: N float32
    :ivar cell_keys: sorted keys of the occupied voxel cells
    """

    def __init__(self, positions=None, frame_ids=None, confidences=None,
                 voxel_size=VOXEL_SIZE, max_per_voxel=MAX_POINTS_PER_VOXEL):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be > 0")
        if max_per_voxel < 1:
            raise ValueError("max_per_voxel must be >= 1")
        self.positions = np.zeros((0, 3), np.float32) if positions is None \
            else np.ascontiguousarray(positions, dtype=np.float32)
        self.frame_ids = np.zeros(0, np.uint32) if frame_ids is None \
            else np.ascontiguousarray(frame_ids, dtype=np.uint32)
        self.confidences = np.zeros(0, np.float32) if confidences is None \
            else np.ascontiguousarray(confidences, dtype=np.float32)
        if not (len(self.positions) == len(self.frame_ids) == len(self.confidences)):
            raise ValueError("point arrays differ in length")
        self.voxel_size = float(voxel_size)
        self.max_per_voxel = int(max_per_voxel)
        for array in (self.positions, self.frame_ids, self.confidences):
            array.setflags(write=False)
        self._build_index()

    def _build_index(self):
        cells = voxel_cells(self.positions, self.voxel_size)
        keys = voxel_keys(cells) if len(cells) else np.zeros(0, np.int64)
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_keys[1:] != sorted_keys[:-1]
        self.cell_starts = np.flatnonzero(first)
        self.cell_keys = sorted_keys[first]
        self.cell_counts = np.diff(np.append(self.cell_starts, len(order)))
        self.cell_order = order
        self.cell_coords = cells[order[self.cell_starts]] if len(order) else np.zeros((0, 3), np.int64)

    def __len__(self):
        return len(self.positions)

    @property
    def cloud(self):
        return PointCloud(self.positions, self.frame_ids, self.confidences)

    @property
    def voxel_index(self):
        """Mapping cell coordinate tuple -> indices of the points in that cell"""
        return {tuple(int(c) for c in cell): self.cell_order[start:start + count]
                for cell, start, count in zip(self.cell_coords, self.cell_starts, self.cell_counts)}

    def source_frames(self):
        return set(int(i) for i in np.unique(self.frame_ids))

    def with_points(self, cloud):
        """New geometry holding this one's points plus ``cloud``, voxel cap enforced"""
        merged = PointCloud.concat([self.cloud, PointCloud(cloud.positions.astype(np.float32),
                                                           cloud.frame_ids, cloud.confidences)])
        kept = voxel_downsample(merged, self.voxel_size, self.max_per_voxel)
        return GlobalGeometry(kept.positions, kept.frame_ids, kept.confidences,
                              self.voxel_size, self.max_per_voxel)

    def same_as(self, other):
        """Bit-identical points and voxel parameters"""
        return (self.voxel_size == other.voxel_size and self.max_per_voxel == other.max_per_voxel
                and self.positions.tobytes() == other.positions.tobytes()
                and self.frame_ids.tobytes() == other.frame_ids.tobytes()
                and self.confidences.tobytes() == other.confidences.tobytes())


def voxel_downsample(points, voxel_size, max_per_voxel):
    """
    Keep the max_per_voxel most confident points of every cell

    Ties go to the lower frame id, then to the earlier point. Survivors keep their input order.

    :param points: PointCloud
    :param voxel_size: cell edge in meters, > 0
    :param max_per_voxel: N_max, >= 1
    :return: the downsampled PointCloud
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be > 0")
    if max_per_voxel < 1:
        raise ValueError("max_per_voxel must be >= 1")
    if len(points) == 0:
        return points
    keys = voxel_keys(voxel_cells(points.positions, voxel_size))
    insertion = np.arange(len(points))
    order = np.lexsort((insertion, points.frame_ids, -points.confidences.astype(np.float64), keys))
    sorted_keys = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_keys[1:] != sorted_keys[:-1]
    group_start = np.maximum.accumulate(np.where(first, insertion, 0))
    kept = np.sort(order[insertion - group_start < max_per_voxel])
    return points.take(kept)


def _working_depth(depth, intr, downsample):
    working = intr.scaled(downsample)
    depth = np.asarray(depth)[::downsample, ::downsample][:working.height, :working.width]
    return depth, working


def frame_cell_keys(pose, depth, intr, voxel_size):
    """Sorted keys of the voxel cells hit by the valid pixels of a frame"""
    depth = np.asarray(depth, dtype=np.float64)
    lifted = backproject(depth, np.ones(depth.shape, np.float32), intr, extrinsics_from_pose(pose), 0)
    return np.unique(voxel_keys(voxel_cells(lifted.positions, voxel_size)))


def render_coverage_depth(geo, pose, intr):
    """Z-buffer of the global cloud seen from a pose, front-most point per pixel; empty pixels hold +inf"""
    zbuffer = np.full(intr.height * intr.width, np.inf)
    ext = extrinsics_from_pose(pose)
    index = candidate_indices(geo, intr, ext)
    projected = project_points(geo.positions[index], intr, ext)
    if len(projected) == 0:
        return zbuffer.reshape(intr.shape)
    rows, cols = projected.pixels()
    np.minimum.at(zbuffer, rows * intr.width + cols, projected.depth)
    return zbuffer.reshape(intr.shape)


def occupancy_margin(depth):
    """max(0.05 m, 2 % of depth)"""
    return np.maximum(COVERAGE_ABS_TOL, COVERAGE_REL_TOL * depth)


def coverage_tolerance(depth, voxel_size):
    """Occupancy margin widened by the voxel half-diagonal"""
    return occupancy_margin(depth) + 0.5 * np.sqrt(3.0) * voxel_size


def occupied_points(positions, margin, voxel_size, occupied):
    """
    Points with an occupied voxel cell within ``margin`` of them along every axis

    :param positions: Nx3 world points
    :param margin: N margins in meters, below voxel_size
    :param voxel_size: cell edge
    :param occupied: sorted int64 cell keys
    :return: N bool
    """
    hit = np.zeros(len(positions), dtype=bool)
    if len(positions) == 0 or len(occupied) == 0:
        return hit
    positions = np.asarray(positions, dtype=np.float64)
    margin = np.minimum(margin, 0.5 * voxel_size)[:, np.newaxis]
    for offset in _NEIGHBOURS:
        keys = voxel_keys(voxel_cells(positions + offset * margin, voxel_size))
        slot = np.minimum(np.searchsorted(occupied, keys), len(occupied) - 1)
        hit |= occupied[slot] == keys
    return hit


def footprint_matches(rendered, depth, voxel_size, fx):
    """
    Pixels whose depth is matched, within tolerance, by a rendered depth inside the projected
    half-width of a voxel around them (at most SPLAT_RADIUS_MAX pixels)
    """
    height, width = depth.shape
    valid = depth >= INVALID_DEPTH
    tolerance = coverage_tolerance(depth, voxel_size)
    safe = np.where(valid, depth, np.inf)
    radius = np.clip(np.floor(0.5 * voxel_size * fx / safe), 0, SPLAT_RADIUS_MAX).astype(np.int64)
    padded = np.pad(rendered, SPLAT_RADIUS_MAX, constant_values=np.inf)
    covered = np.zeros(depth.shape, dtype=bool)
    for dy in range(-SPLAT_RADIUS_MAX, SPLAT_RADIUS_MAX + 1):
        for dx in range(-SPLAT_RADIUS_MAX, SPLAT_RADIUS_MAX + 1):
            shifted = padded[SPLAT_RADIUS_MAX + dy:SPLAT_RADIUS_MAX + dy + height,
                             SPLAT_RADIUS_MAX + dx:SPLAT_RADIUS_MAX + dx + width]
            covered |= (radius >= max(abs(dx), abs(dy))) & (np.abs(shifted - depth) <= tolerance)
    return covered & valid


def covered_pixels(pose, depth, geo, intr, occupied=None):
    """
    Valid pixels the stored geometry already explains

    A pixel is covered when the surface point it sees lies within the occupancy margin of an
    occupied voxel cell. The cell test does not depend on how many points voxel sampling kept,
    so a frame always covers itself. Pixels left over are matched against the rendered
    z-buffer of the cloud (``footprint_matches``).

    :param pose: the frame Pose
    :param depth: depth map at ``intr`` resolution
    :param geo: GlobalGeometry
    :param intr: Intrinsics of the depth map
    :param occupied: sorted cell keys counted as occupied; ``geo.cell_keys`` when omitted
    :return: HxW bool
    """
    depth = np.asarray(depth, dtype=np.float64)
    valid = depth >= INVALID_DEPTH
    covered = np.zeros(depth.shape, dtype=bool)
    if not valid.any():
        return covered
    occupied = geo.cell_keys if occupied is None else occupied
    lifted = backproject(depth, np.ones(depth.shape, np.float32), intr, extrinsics_from_pose(pose), 0)
    covered[valid] = occupied_points(lifted.positions, occupancy_margin(depth[valid]), geo.voxel_size,
                                     occupied)
    if len(geo) and not covered[valid].all():
        covered |= footprint_matches(render_coverage_depth(geo, pose, intr), depth, geo.voxel_size,
                                     intr.fx)
    return covered & valid


def novel_coverage(pose, depth, geo, intr, downsample=1, occupied=None):
    """
    Fraction of the frame's valid pixels that the stored geometry does not explain

    :param pose: the frame Pose
    :param depth: the frame's depth map (at ``intr`` resolution)
    :param geo: GlobalGeometry
    :param intr: Intrinsics of the depth map
    :param downsample: test every ``downsample``-th pixel
    :param occupied: sorted cell keys of geo plus any keyframes still waiting for integration
    :return: value in [0, 1]; 1.0 for an empty store, 0.0 for a frame without valid pixels
    """
    if len(geo) == 0 and (occupied is None or len(occupied) == 0):
        return 1.0
    depth, working = _working_depth(depth, intr, downsample)
    valid = depth >= INVALID_DEPTH
    total = int(valid.sum())
    if total == 0:
        return 0.0
    covered = covered_pixels(pose, depth, geo, working, occupied)
    return float(total - int(covered.sum())) / total


def keyframe_decision(coverage, retrieval_count, theta_novel=THETA_NOVEL, tau_hist=TAU_HIST):
    """IsKeyframe = novel coverage >= theta_novel or fewer than tau_hist historical frames"""
    return bool(coverage >= theta_novel or retrieval_count < tau_hist)


def is_keyframe(pose, depth, geo, intr, retrieval_count, theta_novel=THETA_NOVEL, tau_hist=TAU_HIST,
                downsample=1):
    coverage = novel_coverage(pose, depth, geo, intr, downsample)
    return keyframe_decision(coverage, retrieval_count, theta_novel, tau_hist)


@dataclasses.dataclass
class ProcessingWindow(object):
    """
    Keyframes waiting for joint processing.

    :ivar capacity: W_rec, keyframes per window
    :ivar pending: keyframes of this window, depth still in observation scale
    :ivar retrieved: ids retrieved for the pending frames
    :ivar overlap: keyframes carried from the previous window (already stored), with the
        depth they were observed with
    :ivar cells: sorted voxel keys seen by each pending keyframe
    """
    capacity: int
    pending: list = dataclasses.field(default_factory=list)
    retrieved: set = dataclasses.field(default_factory=set)
    overlap: list = dataclasses.field(default_factory=list)
    cells: list = dataclasses.field(default_factory=list)

    @property
    def is_full(self):
        return len(self.pending) >= self.capacity

    def frame_ids(self):
        return [record.frame_id for record in self.overlap + self.pending]

    def occupied_keys(self):
        if not self.cells:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.cells))


@dataclasses.dataclass(frozen=True)
class IntegrationResult(object):
    geometry: GlobalGeometry
    scale: float
    keyframes: list
    fallback: bool
    correspondences: int


def integrate_window(window, geo, intr, stored_frames, depth_model=None, window_index=0,
                     tau_min=TAU_MIN, keep_fraction=KEEP_FRACTION,
                     min_correspondences=MIN_CORRESPONDENCES):
    """
    Align, back-project and merge the pending keyframes of a window

    :param window: the ProcessingWindow
    :param geo: current GlobalGeometry
    :param intr: Intrinsics of the frame depth maps
    :param stored_frames: mapping id -> FrameRecord of the global store (aligned depths)
    :param depth_model: RelativeDepthModel giving this window's depth scale (None = metric)
    :param window_index: index of this window in the stream
    :return: IntegrationResult with the new geometry and the aligned keyframe records
    """
    model = depth_model or RelativeDepthModel()
    window_ids = window.frame_ids()
    pending = {record.frame_id for record in window.pending}
    stored = {fid for fid, record in stored_frames.items()
              if record.depth is not None and fid not in pending}
    overlap = sorted(detect_overlap(window_ids, stored))
    carried = {record.frame_id: record for record in window.overlap}
    old_depths = [stored_frames[fid].depth for fid in overlap]
    old_confs = [stored_frames[fid].confidence for fid in overlap]
    new_depths = [model.estimate(window_index, carried[fid].depth) for fid in overlap]
    new_confs = [carried[fid].confidence for fid in overlap]
    alignment = align_window(old_depths, new_depths, old_confs, new_confs, tau_min, keep_fraction,
                             min_correspondences)

    observed = [model.estimate(window_index, record.depth) for record in window.pending]
    aligned = apply_scale(observed, alignment.scale)
    keyframes = []
    clouds = []
    for record, depth in zip(window.pending, aligned):
        keyframes.append(FrameRecord(record.frame_id, record.pose, depth, record.confidence, True))
        clouds.append(backproject(depth, record.confidence, intr, extrinsics_from_pose(record.pose),
                                  record.frame_id))
    geometry = geo.with_points(PointCloud.concat(clouds)) if clouds else geo
    logger.info("Window %d: %d keyframes, overlap %s, scale %.6f, %d points",
                window_index, len(keyframes), overlap, alignment.scale, len(geometry))
    count = len(alignment.correspondences) if alignment.correspondences is not None else 0
    return IntegrationResult(geometry, alignment.scale, keyframes, alignment.fallback, count)


@dataclasses.dataclass(frozen=True)
class FrameDecision(object):
    """Outcome of one observed frame"""
    frame_id: int
    coverage: float
    is_keyframe: bool
    retrieval: object
    scale: float
    integrated: bool = False


class SpatialMemory(object):
    """
    Streaming engine: retrieval, keyframe gate, windowed integration.

    Single writer: only ``observe``/``flush`` replace the geometry; the ``geometry`` snapshot a
    reader holds is never modified.
    """

    def __init__(self, intr, voxel_size=VOXEL_SIZE, max_points_per_voxel=MAX_POINTS_PER_VOXEL,
                 theta_novel=THETA_NOVEL, tau_hist=TAU_HIST, top_k=8, window_capacity=8,
                 window_overlap=2, tau_min=TAU_MIN, keep_fraction=KEEP_FRACTION,
                 min_correspondences=MIN_CORRESPONDENCES, occlusion=True, working_downsample=1,
                 depth_model=None):
        self.intr = intr
        self.working_intr = intr.scaled(working_downsample)
        self.working_downsample = working_downsample
        self.theta_novel = theta_novel
        self.tau_hist = tau_hist
        self.top_k = top_k
        self.window_overlap = window_overlap
        self.tau_min = tau_min
        self.keep_fraction = keep_fraction
        self.min_correspondences = min_correspondences
        self.occlusion = occlusion
        self.depth_model = depth_model or RelativeDepthModel()
        self.geometry = GlobalGeometry(voxel_size=voxel_size, max_per_voxel=max_points_per_voxel)
        self.frames = {}
        self.window = ProcessingWindow(window_capacity)
        self.window_index = 0
        self.last_scale = 1.0
        self._last_id = None
        self._settled_poses = set()

    @classmethod
    def from_config(cls, cfg, intr=None):
        return cls(intr or cfg.intrinsics(), voxel_size=cfg.voxel_size,
                   max_points_per_voxel=cfg.max_points_per_voxel, theta_novel=cfg.theta_novel,
                   tau_hist=cfg.tau_hist, top_k=cfg.top_k, window_capacity=cfg.window_capacity,
                   window_overlap=cfg.window_overlap, tau_min=cfg.tau_min,
                   keep_fraction=cfg.keep_fraction, min_correspondences=cfg.min_correspondences,
                   occlusion=cfg.occlusion, working_downsample=cfg.working_downsample,
                   depth_model=RelativeDepthModel(cfg.depth_scale_jitter, cfg.seed))

    @property
    def keyframe_ids(self):
        return [fid for fid, record in self.frames.items() if record.is_keyframe]

    @property
    def keyframe_count(self):
        return sum(1 for record in self.frames.values() if record.is_keyframe)

    def retrieve(self, pose, k=None):
        return point_to_frame_retrieve(pose, self.geometry, self.working_intr, k or self.top_k,
                                       self.occlusion)

    def _occupied(self):
        # pending keyframes count as stored for the gate
        pending = self.window.occupied_keys()
        if len(pending) == 0:
            return self.geometry.cell_keys
        return np.union1d(self.geometry.cell_keys, pending)

    def observe(self, frame_id, pose, depth, confidence, retrieval=None):
        """
        Gate one frame and integrate the window when it fills up

        :param frame_id: strictly increasing id
        :param pose: the frame Pose
        :param depth: depth map at the engine's frame resolution
        :param confidence: confidence map, same size
        :param retrieval: RetrievalResult already computed for this pose, if any
        :return: FrameDecision
        """
        if self._last_id is not None and frame_id <= self._last_id:
            raise ValueError("frame id {0} not after {1}".format(frame_id, self._last_id))
        if np.shape(depth) != self.intr.shape or np.shape(confidence) != self.intr.shape:
            raise ValueError("frame {0} size {1} does not match intrinsics {2}".format(
                frame_id, np.shape(depth), self.intr.shape))
        self._last_id = frame_id
        if retrieval is None:
            retrieval = self.retrieve(pose)
        coverage = novel_coverage(pose, depth, self.geometry, self.intr, self.working_downsample,
                                  self._occupied())
        history = len(retrieval)
        if pose.key() in self._settled_poses:
            # this view already had its history, or is stored itself
            history = max(history, self.tau_hist)
        keyframe = keyframe_decision(coverage, history, self.theta_novel, self.tau_hist)
        if keyframe or history >= self.tau_hist:
            self._settled_poses.add(pose.key())
        if keyframe:
            record = FrameRecord(frame_id, pose, np.asarray(depth), np.asarray(confidence), True)
            self.window.pending.append(record)
            self.window.retrieved.update(retrieval.frame_ids)
            working_depth, working = _working_depth(depth, self.intr, self.working_downsample)
            self.window.cells.append(frame_cell_keys(pose, working_depth, working,
                                                     self.geometry.voxel_size))
            logger.debug("Frame %d keyframe (coverage %.3f, %d retrieved)", frame_id, coverage,
                         len(retrieval))
        else:
            record = FrameRecord(frame_id, pose)
        self.frames[frame_id] = record
        integrated = False
        if self.window.is_full:
            self._integrate()
            integrated = True
        return FrameDecision(frame_id, coverage, keyframe, retrieval, self.last_scale, integrated)

    def flush(self):
        """Integrate a partially filled window (end of stream); returns its scale or None"""
        if not self.window.pending:
            return None
        self._integrate()
        return self.last_scale

    def _integrate(self):
        result = integrate_window(self.window, self.geometry, self.intr, self.frames,
                                  self.depth_model, self.window_index, self.tau_min,
                                  self.keep_fraction, self.min_correspondences)
        for record in result.keyframes:
            self.frames[record.frame_id] = record
        carried = self.window.pending[-self.window_overlap:] if self.window_overlap else []
        self.window = ProcessingWindow(self.window.capacity, overlap=list(carried))
        self.window_index += 1
        self.last_scale = result.scale
        self.geometry = result.geometry
        return result


def save_snapshot(geo, frames, path):
    """
    Write geometry and frame table in the snapshot format of this module

    :param geo: GlobalGeometry
    :param frames: iterable of FrameRecord (depth payloads are not stored)
    :param path: output file
    :return: the number of bytes written
    """
    frames = sorted(frames, key=lambda record: record.frame_id)
    table = np.zeros(len(frames), dtype=FRAME_DTYPE)
    for row, record in enumerate(frames):
        table[row] = (record.frame_id, record.pose.as_tuple(), 1 if record.is_keyframe else 0)
    points = np.zeros(len(geo), dtype=POINT_DTYPE)
    points["position"] = geo.positions
    points["source"] = geo.frame_ids
    points["confidence"] = geo.confidences
    payload = b"".join([_HEADER.pack(MAGIC, VERSION, geo.voxel_size, geo.max_per_voxel),
                        _COUNT.pack(len(table)), table.tobytes(),
                        _COUNT.pack(len(points)), points.tobytes()])
    Path(path).write_bytes(payload)
    return len(payload)


def _read_header(data):
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("truncated header", len(data))
    magic, version, voxel_size, max_per_voxel = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SnapshotFormatError("bad magic {0!r}".format(magic), 0)
    if version != VERSION:
        raise SnapshotFormatError("unsupported version {0}".format(version), 4)
    if not voxel_size > 0 or max_per_voxel < 1:
        raise SnapshotFormatError("bad voxel parameters", 6)
    return voxel_size, max_per_voxel, _HEADER.size


def _read_table(data, offset, dtype, what):
    if len(data) < offset + _COUNT.size:
        raise SnapshotFormatError("truncated {0} count".format(what), len(data))
    (count,) = _COUNT.unpack_from(data, offset)
    offset += _COUNT.size
    end = offset + count * dtype.itemsize
    if len(data) < end:
        raise SnapshotFormatError("truncated {0} table: {1} entries need {2} bytes".format(
            what, count, count * dtype.itemsize), len(data))
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset), end


def load_snapshot(path):
    """
    Read a snapshot back

    :param path: the snapshot file
    :return: (GlobalGeometry, list of FrameRecord without depth payloads)
    """
    data = Path(path).read_bytes()
    voxel_size, max_per_voxel, offset = _read_header(data)
    table, offset = _read_table(data, offset, FRAME_DTYPE, "frame")
    points, offset = _read_table(data, offset, POINT_DTYPE, "point")
    if offset != len(data):
        raise SnapshotFormatError("{0} trailing bytes".format(len(data) - offset), offset)
    frames = []
    for row in table:
        try:
            pose = Pose(*(float(value) for value in row["pose"]))
        except ValueError as err:
            raise SnapshotFormatError("frame {0}: {1}".format(int(row["id"]), err), _HEADER.size)
        frames.append(FrameRecord(int(row["id"]), pose, is_keyframe=bool(row["keyframe"])))
    geo = GlobalGeometry(points["position"].copy(), points["source"].copy(),
                         points["confidence"].copy(), voxel_size, max_per_voxel)
    return geo, frames


def snapshot_info(path):
    """Header fields and table sizes of a snapshot, without building the voxel index"""
    data = Path(path).read_bytes()
    voxel_size, max_per_voxel, offset = _read_header(data)
    table, offset = _read_table(data, offset, FRAME_DTYPE, "frame")
    points, offset = _read_table(data, offset, POINT_DTYPE, "point")
    if offset != len(data):
        raise SnapshotFormatError("{0} trailing bytes".format(len(data) - offset), offset)
    return {"version": VERSION, "voxel_size": voxel_size, "max_points_per_voxel": max_per_voxel,
            "frames": len(table), "keyframes": int(table["keyframe"].sum()), "points": len(points),
            "bytes": len(data)}
