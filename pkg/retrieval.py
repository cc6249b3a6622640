"""
Historical frame retrieval:

* point-to-frame retrieval: project the global point cloud into the query view and vote by the
  source frame of every visible point (voxel-culled fast path)
* the brute-force oracle of the same contract, used by tests
* the pose-based baseline that keeps every frame and scans all of them
"""

import collections
import dataclasses
import math
import time

import numpy as np

from geometry import extrinsics_from_pose, frustum_samples, project_points, rotation_from_pitch_yaw

DEPTH_ABS_TOL = 0.05
DEPTH_REL_TOL = 0.02
"""Z-buffer tolerance: a point is visible within max(0.05 m, 2 % of the front depth)"""
BASELINE_SAMPLE_DEPTH = 8.0
BASELINE_GRID = 8
"""The baseline scores 8 x 8 = 64 sampled directions"""


@dataclasses.dataclass(frozen=True)
class RetrievalResult(object):
    """
    Ranked frame ids with their evidence.

    :ivar frame_ids: ranked ids, at most k
    :ivar counts: visible points per frame (geometric) or frustum samples inside (baseline)
    :ivar elapsed_us: wall time of the query in microseconds
    :ivar samples: number of frustum samples (baseline only)
    """
    frame_ids: tuple = ()
    counts: tuple = ()
    elapsed_us: float = 0.0
    samples: int = 0

    def __len__(self):
        return len(self.frame_ids)

    @property
    def scores(self):
        return tuple(count / float(self.samples) for count in self.counts) if self.samples else ()


def depth_tolerance(depth):
    return np.maximum(DEPTH_ABS_TOL, DEPTH_REL_TOL * depth)


def frustum_planes(intr):
    """Unit inward normals of the four side planes of the view pyramid (camera frame)"""
    u_min, u_max = -0.5, intr.width - 0.5
    v_min, v_max = -0.5, intr.height - 0.5
    planes = np.array([[intr.fx, 0.0, -(u_min - intr.cx)],
                       [-intr.fx, 0.0, u_max - intr.cx],
                       [0.0, intr.fy, -(v_min - intr.cy)],
                       [0.0, -intr.fy, v_max - intr.cy]])
    return planes / np.linalg.norm(planes, axis=1, keepdims=True)


def candidate_indices(geo, intr, ext):
    """
    Indices of the points whose voxel cell may intersect the view pyramid.

    The test is conservative (bounding sphere against every side plane), so it never drops a
    point that project_points would keep.
    """
    if len(geo) == 0:
        return np.zeros(0, dtype=np.int64)
    radius = 0.5 * math.sqrt(3.0) * geo.voxel_size
    centers = (geo.cell_coords + 0.5) * geo.voxel_size
    cam = centers @ ext[:3, :3].T + ext[:3, 3]
    distances = cam @ frustum_planes(intr).T
    cells = np.flatnonzero((distances >= -radius).all(axis=1) & (cam[:, 2] >= -radius))
    counts = geo.cell_counts[cells]
    if counts.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    starts = geo.cell_starts[cells]
    offsets = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return geo.cell_order[offsets + np.arange(counts.sum())]


def zbuffer_visible(projected, intr):
    """Mask of projected points within the depth tolerance of their pixel's front-most point"""
    rows, cols = projected.pixels()
    flat = rows * intr.width + cols
    front = np.full(intr.width * intr.height, np.inf)
    np.minimum.at(front, flat, projected.depth)
    front = front[flat]
    return projected.depth <= front + depth_tolerance(front)


def rank_votes(frame_ids, k):
    """Top-k frame ids by vote count; ties go to the smaller id"""
    ids, counts = np.unique(frame_ids, return_counts=True)
    order = np.lexsort((ids, -counts))[:k]
    return tuple(int(i) for i in ids[order]), tuple(int(c) for c in counts[order])


def point_to_frame_retrieve(pose, geo, intr, k=8, occlusion=True):
    """
    Top-k historical frames referenced by the points visible from a pose

    :param pose: query Pose
    :param geo: GlobalGeometry snapshot (read only)
    :param intr: Intrinsics of the visibility test (the working resolution)
    :param k: frames to return, >= 1
    :param occlusion: z-buffer occlusion; False keeps every point inside the frustum
    :return: RetrievalResult ordered by decreasing vote count
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    started = time.perf_counter()
    if len(geo) == 0:
        return RetrievalResult(elapsed_us=(time.perf_counter() - started) * 1e6)
    ext = extrinsics_from_pose(pose)
    index = candidate_indices(geo, intr, ext)
    projected = project_points(geo.positions[index], intr, ext)
    visible = projected.index
    if occlusion and len(projected):
        visible = visible[zbuffer_visible(projected, intr)]
    frame_ids, counts = rank_votes(geo.frame_ids[index[visible]], k)
    return RetrievalResult(frame_ids, counts, (time.perf_counter() - started) * 1e6)


def brute_force_oracle(pose, geo, intr, k=8, occlusion=True):
    """
    Same contract as point_to_frame_retrieve, computed over every point without the voxel
    index; the z-buffer is resolved by sorting points per pixel.
    """
    started = time.perf_counter()
    if len(geo) == 0:
        return RetrievalResult(elapsed_us=(time.perf_counter() - started) * 1e6)
    ext = extrinsics_from_pose(pose)
    cam = np.einsum("ij,nj->ni", ext[:3, :3], geo.positions.astype(np.float64)) + ext[:3, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
        v = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    inside = ((cam[:, 2] > 0) & (u >= -0.5) & (u < intr.width - 0.5)
              & (v >= -0.5) & (v < intr.height - 0.5))
    index = np.flatnonzero(inside)
    depth = cam[index, 2]
    if occlusion and len(index):
        pixel = np.floor(v[index] + 0.5).astype(np.int64) * intr.width \
            + np.floor(u[index] + 0.5).astype(np.int64)
        order = np.lexsort((depth, pixel))
        first = np.ones(len(order), dtype=bool)
        first[1:] = pixel[order][1:] != pixel[order][:-1]
        group_start = np.maximum.accumulate(np.where(first, np.arange(len(order)), 0))
        front = np.empty(len(order))
        front[order] = depth[order][group_start]
        index = index[depth <= front + depth_tolerance(front)]
    votes = collections.Counter(int(i) for i in geo.frame_ids[index])
    ranked = sorted(votes.items(), key=lambda item: (-item[1], item[0]))[:k]
    return RetrievalResult(tuple(i for i, _ in ranked), tuple(c for _, c in ranked),
                           (time.perf_counter() - started) * 1e6)


def _baseline_rank(samples, ids, rotations, translations, intr, k):
    cam = np.einsum("fij,sj->fsi", rotations, samples) + translations[:, np.newaxis, :]
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[..., 0] / z + intr.cx
        v = intr.fy * cam[..., 1] / z + intr.cy
    inside = (z > 0) & (u >= -0.5) & (u < intr.width - 0.5) & (v >= -0.5) & (v < intr.height - 0.5)
    counts = inside.sum(axis=1)
    scored = np.flatnonzero(counts > 0)
    order = scored[np.lexsort((ids[scored], -counts[scored]))][:k]
    return tuple(int(i) for i in ids[order]), tuple(int(c) for c in counts[order])


def pose_baseline_retrieve(pose, all_frames, intr, k=8, sample_depth=BASELINE_SAMPLE_DEPTH,
                           grid=BASELINE_GRID):
    """
    Pose-based retrieval over every stored frame (linear scan).

    A frame scores the share of the query's grid x grid frustum samples (sampled at
    sample_depth) that fall inside its own view; frames scoring 0 are not returned.

    :param pose: query Pose
    :param all_frames: every stored FrameRecord
    :param intr: the Intrinsics shared by all frames
    :param k: frames to return
    :return: RetrievalResult with ``samples`` set; ``scores`` gives the overlap fractions
    """
    started = time.perf_counter()
    frames = list(all_frames)
    samples = frustum_samples(pose, intr, sample_depth, grid)
    if not frames:
        return RetrievalResult(elapsed_us=(time.perf_counter() - started) * 1e6, samples=len(samples))
    rotations = np.stack([rotation_from_pitch_yaw(f.pose.pitch, f.pose.yaw) for f in frames])
    translations = -np.einsum("fij,fj->fi", rotations, np.stack([f.pose.position for f in frames]))
    ids = np.array([f.frame_id for f in frames], dtype=np.int64)
    frame_ids, counts = _baseline_rank(samples, ids, rotations, translations, intr, k)
    return RetrievalResult(frame_ids, counts, (time.perf_counter() - started) * 1e6, len(samples))


class PoseBaselineMemory(object):
    """
    Memory bank of the pose baseline: stores every frame's pose and scans all of them per query.

    Extrinsics are cached in growing arrays so a query costs one vectorized pass over n frames.
    """

    def __init__(self, intr, k=8, sample_depth=BASELINE_SAMPLE_DEPTH, grid=BASELINE_GRID):
        self.intr = intr
        self.k = k
        self.sample_depth = sample_depth
        self.grid = grid
        self._size = 0
        self._ids = np.zeros(64, dtype=np.int64)
        self._rotations = np.zeros((64, 3, 3))
        self._translations = np.zeros((64, 3))

    def __len__(self):
        return self._size

    def add(self, frame_id, pose):
        if self._size == len(self._ids):
            grow = len(self._ids)
            self._ids = np.concatenate([self._ids, np.zeros(grow, dtype=np.int64)])
            self._rotations = np.concatenate([self._rotations, np.zeros((grow, 3, 3))])
            self._translations = np.concatenate([self._translations, np.zeros((grow, 3))])
        ext = extrinsics_from_pose(pose)
        self._ids[self._size] = frame_id
        self._rotations[self._size] = ext[:3, :3]
        self._translations[self._size] = ext[:3, 3]
        self._size += 1

    def retrieve(self, pose, k=None):
        started = time.perf_counter()
        samples = frustum_samples(pose, self.intr, self.sample_depth, self.grid)
        if self._size == 0:
            return RetrievalResult(elapsed_us=(time.perf_counter() - started) * 1e6, samples=len(samples))
        n = self._size
        frame_ids, counts = _baseline_rank(samples, self._ids[:n], self._rotations[:n],
                                           self._translations[:n], self.intr, k or self.k)
        return RetrievalResult(frame_ids, counts, (time.perf_counter() - started) * 1e6, len(samples))
