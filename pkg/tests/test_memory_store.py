import logging
import math

import numpy as np
import pytest

from geometry import PointCloud, Pose, backproject, extrinsics_from_pose
from memory_store import (FrameRecord, GlobalGeometry, MAGIC, TAU_HIST, ProcessingWindow,
                          SnapshotFormatError, SpatialMemory, covered_pixels, integrate_window,
                          is_keyframe, keyframe_decision, load_snapshot, novel_coverage,
                          occupied_points, save_snapshot, snapshot_info, voxel_cells,
                          voxel_downsample, voxel_keys)
from scale_alignment import RelativeDepthModel
from world import TrajectoryScript, make_revisit_trajectory, render_depth, unroll_trajectory

from conftest import ground_pose


def _cloud(positions, frame_ids, confidences):
    return PointCloud(np.asarray(positions, dtype=np.float64), np.asarray(frame_ids, dtype=np.uint32),
                      np.asarray(confidences, dtype=np.float32))


def _frame_geometry(hf, pose, intr, frame_id=0, **kwargs):
    depth, conf = render_depth(hf, pose, intr)
    cloud = backproject(depth, conf, intr, extrinsics_from_pose(pose), frame_id)
    return GlobalGeometry(**kwargs).with_points(cloud), depth, conf


def _feed(memory, frames, first_id=0):
    decisions = [memory.observe(first_id + i, pose, depth, conf) for i, (pose, depth, conf) in enumerate(frames)]
    memory.flush()
    return decisions


# ── voxel downsampling ───────────────────────────────────────────────────

def test_distinct_cells_unchanged():
    positions = np.arange(50)[:, np.newaxis] * np.array([1.0, 0.0, 0.0]) + 0.25
    cloud = _cloud(positions, np.arange(50), np.linspace(0.1, 1.0, 50))
    kept = voxel_downsample(cloud, 0.5, 1)
    np.testing.assert_array_equal(kept.positions, cloud.positions)
    np.testing.assert_array_equal(kept.frame_ids, cloud.frame_ids)


def test_identical_points_keep_most_confident():
    rng = np.random.default_rng(1)
    confidences = rng.random(100).astype(np.float32)
    cloud = _cloud(np.full((100, 3), 1.3), rng.integers(0, 9, 100), confidences)
    kept = voxel_downsample(cloud, 0.5, 1)
    assert len(kept) == 1
    assert kept.confidences[0] == confidences.max()


def test_downsample_matches_group_by_reference():
    rng = np.random.default_rng(2)
    positions = rng.uniform(-3.0, 3.0, (2000, 3))
    frame_ids = rng.integers(0, 5, 2000)
    confidences = rng.choice([0.2, 0.5, 1.0], 2000).astype(np.float32)
    kept = voxel_downsample(_cloud(positions, frame_ids, confidences), 0.5, 3)

    groups = {}
    for i, cell in enumerate(map(tuple, np.floor(positions / 0.5).astype(np.int64))):
        groups.setdefault(cell, []).append(i)
    survivors = []
    for members in groups.values():
        members.sort(key=lambda i: (-float(confidences[i]), int(frame_ids[i]), i))
        survivors += members[:3]
    survivors.sort()
    np.testing.assert_array_equal(kept.positions, positions[survivors])
    np.testing.assert_array_equal(kept.frame_ids, frame_ids[survivors])
    np.testing.assert_array_equal(kept.confidences, confidences[survivors])


@pytest.mark.parametrize("voxel_size, cap", [(0.0, 4), (-1.0, 4), (0.5, 0)])
def test_downsample_rejects_bad_parameters(voxel_size, cap):
    with pytest.raises(ValueError):
        voxel_downsample(_cloud(np.zeros((1, 3)), [0], [1.0]), voxel_size, cap)


# ── global geometry ──────────────────────────────────────────────────────

def test_voxel_index_consistent(revisit_memory):
    memory, _ = revisit_memory
    geo = memory.geometry
    index = geo.voxel_index
    assert sum(len(points) for points in index.values()) == len(geo)
    for cell, points in index.items():
        assert len(points) <= geo.max_per_voxel
        assert (voxel_cells(geo.positions[points], geo.voxel_size) == cell).all()


def test_points_reference_stored_keyframes(revisit_memory):
    memory, _ = revisit_memory
    for fid in memory.geometry.source_frames():
        assert memory.frames[fid].is_keyframe
        assert memory.frames[fid].depth is not None
    assert all(record.depth is None for record in memory.frames.values() if not record.is_keyframe)


def test_geometry_is_read_only(revisit_memory):
    memory, _ = revisit_memory
    with pytest.raises(ValueError):
        memory.geometry.positions[0, 0] = 1.0


# ── novel coverage and the keyframe gate ─────────────────────────────────

def test_empty_geometry_is_fully_novel(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0)
    depth, _ = render_depth(terrain, pose, small_intr)
    assert novel_coverage(pose, depth, GlobalGeometry(), small_intr) == 1.0


def test_frame_covers_itself(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0)
    geo, depth, _ = _frame_geometry(terrain, pose, small_intr)
    assert novel_coverage(pose, depth, geo, small_intr) == 0.0


@pytest.mark.parametrize("cap", [1, 4])
def test_voxel_cap_does_not_uncover_a_frame(terrain, small_intr, cap):
    pose = ground_pose(terrain, 64.0, 64.0, pitch=0.35)
    geo, depth, _ = _frame_geometry(terrain, pose, small_intr, max_per_voxel=cap)
    assert len(geo) < int((depth > 0).sum())
    assert novel_coverage(pose, depth, geo, small_intr) == 0.0
    assert covered_pixels(pose, depth, geo, small_intr).sum() == int((depth > 0).sum())


def test_occupied_points_search_the_margin():
    occupied = voxel_keys(np.array([[0, 0, 0], [4, 0, 0]]))
    positions = np.array([[0.25, 0.25, 0.25], [0.53, 0.1, 0.1], [0.6, 0.1, 0.1], [2.2, 0.1, 0.1]])
    hit = occupied_points(positions, np.full(4, 0.05), 0.5, np.sort(occupied))
    assert hit.tolist() == [True, True, False, True]
    assert not occupied_points(positions, np.full(4, 0.05), 0.5, np.zeros(0, np.int64)).any()


def test_pending_keyframe_covers_its_pose(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0)
    depth, conf = render_depth(terrain, pose, small_intr)
    memory = SpatialMemory(small_intr)
    first = memory.observe(0, pose, depth, conf)
    again = memory.observe(1, pose, depth, conf)
    assert len(memory.geometry) == 0
    assert first.coverage == 1.0
    assert again.coverage == 0.0
    assert not again.is_keyframe and len(again.retrieval) == 0


def test_history_clause_skips_repeated_views(terrain, small_intr):
    memory = SpatialMemory(small_intr)
    pose = ground_pose(terrain, 60.0, 50.0)
    moved = ground_pose(terrain, 60.0, 50.5)
    decisions = _feed(memory, [(p,) + render_depth(terrain, p, small_intr) for p in (pose, moved, pose)])
    # nothing is stored yet, so the moved view is admitted for lack of history
    assert [decision.is_keyframe for decision in decisions] == [True, True, False]
    assert all(len(decision.retrieval) == 0 for decision in decisions)


def test_opposite_view_is_novel(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0, yaw=0.0)
    geo, _, _ = _frame_geometry(terrain, pose, small_intr)
    behind = ground_pose(terrain, 60.0, 50.0, yaw=math.pi)
    depth, _ = render_depth(terrain, behind, small_intr)
    assert novel_coverage(behind, depth, geo, small_intr) > 0.9


def test_frame_without_valid_pixels(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0)
    geo, _, _ = _frame_geometry(terrain, pose, small_intr)
    assert novel_coverage(pose, np.zeros(small_intr.shape), geo, small_intr) == 0.0


@pytest.mark.parametrize("coverage, count, expected", [
    (1.0, 0, True),
    (0.0, 8, False),
    (0.1499, 7, True),
    (0.15, 8, True),
    (0.1499, 8, False),
])
def test_keyframe_decision(coverage, count, expected):
    assert keyframe_decision(coverage, count, 0.15, 8) is expected


def test_keyframe_decision_is_either_clause():
    rng = np.random.default_rng(3)
    for coverage, count in zip(rng.random(1000), rng.integers(0, 17, 1000)):
        assert keyframe_decision(coverage, count) == (coverage >= 0.15 or count < 8)


def test_empty_store_admits(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0)
    depth, _ = render_depth(terrain, pose, small_intr)
    assert is_keyframe(pose, depth, GlobalGeometry(), small_intr, 0)


# ── integration ──────────────────────────────────────────────────────────

def test_integrate_single_frame(terrain, small_intr, caplog):
    pose = ground_pose(terrain, 60.0, 50.0)
    depth, conf = render_depth(terrain, pose, small_intr)
    window = ProcessingWindow(1, pending=[FrameRecord(0, pose, depth, conf, True)])
    with caplog.at_level(logging.WARNING, logger="scale_alignment"):
        uncapped = integrate_window(window, GlobalGeometry(max_per_voxel=10 ** 6), small_intr, {})
    assert len(uncapped.geometry) == int((depth > 0).sum())
    assert uncapped.fallback and uncapped.scale == 1.0
    assert "scale 1" in caplog.text
    capped = integrate_window(window, GlobalGeometry(), small_intr, {})
    assert 0 < len(capped.geometry) <= len(uncapped.geometry)
    assert [record.frame_id for record in capped.keyframes] == [0]


def test_integrating_a_frame_twice_adds_nothing_new(terrain, small_intr):
    pose = ground_pose(terrain, 60.0, 50.0)
    depth, conf = render_depth(terrain, pose, small_intr)
    for cap in (1, 4):
        first = integrate_window(ProcessingWindow(1, pending=[FrameRecord(0, pose, depth, conf, True)]),
                                 GlobalGeometry(max_per_voxel=cap), small_intr, {}).geometry
        second = integrate_window(ProcessingWindow(1, pending=[FrameRecord(1, pose, depth, conf, True)]),
                                  first, small_intr, {}).geometry
        distinct_before = len(np.unique(first.positions, axis=0))
        distinct_after = len(np.unique(second.positions, axis=0))
        assert distinct_after <= 1.01 * distinct_before
        if cap == 1:
            assert len(second) == len(first)
            assert second.source_frames() == {0}


def _forward_walk(hf, intr, count=8):
    frames = []
    for i in range(count):
        pose = ground_pose(hf, 64.0, 40.0 + i, pitch=0.35)
        frames.append((pose,) + render_depth(hf, pose, intr))
    return frames


def test_window_scale_is_realigned(flat_terrain, small_intr):
    frames = _forward_walk(flat_terrain, small_intr)
    memory = SpatialMemory(small_intr, theta_novel=0.0, tau_hist=0, window_capacity=4, window_overlap=2,
                           depth_model=RelativeDepthModel(scales=[1.0, 0.5]))
    decisions = _feed(memory, frames)
    assert all(decision.is_keyframe for decision in decisions)
    assert [d.integrated for d in decisions] == [False, False, False, True] * 2
    assert memory.last_scale == pytest.approx(2.0, rel=1e-9)
    later = np.isin(memory.geometry.frame_ids, [4, 5, 6, 7])
    assert later.any()
    # flat ground at elevation 0
    assert np.abs(memory.geometry.positions[later, 1]).max() <= 1.5 * memory.geometry.voxel_size
    np.testing.assert_allclose(memory.frames[5].depth, frames[5][1], rtol=1e-6)


def test_unaligned_window_leaves_the_surface(flat_terrain, small_intr):
    frames = _forward_walk(flat_terrain, small_intr)
    memory = SpatialMemory(small_intr, theta_novel=0.0, tau_hist=0, window_capacity=4, window_overlap=2,
                           min_correspondences=10 ** 9, depth_model=RelativeDepthModel(scales=[1.0, 0.5]))
    _feed(memory, frames)
    assert memory.last_scale == 1.0
    later = np.isin(memory.geometry.frame_ids, [4, 5, 6, 7])
    assert np.median(memory.geometry.positions[later, 1]) > 0.5


# ── the streaming engine ─────────────────────────────────────────────────

def test_observe_validates_frames(small_intr):
    memory = SpatialMemory(small_intr)
    pose = Pose(64.0, 2.0, 64.0)
    depth = np.zeros(small_intr.shape, dtype=np.float32)
    memory.observe(3, pose, depth, depth)
    with pytest.raises(ValueError):
        memory.observe(3, pose, depth, depth)
    with pytest.raises(ValueError):
        memory.observe(4, pose, depth[:-1], depth[:-1])
    assert memory.flush() == 1.0
    assert memory.flush() is None


def test_first_frames_are_keyframes(revisit_memory):
    _, decisions = revisit_memory
    assert decisions[0].is_keyframe and decisions[0].coverage == 1.0
    assert len(decisions[0].retrieval) == 0


def _exact_loops(loops=3, leg=24):
    turn = ("turn_left",) * 8
    actions = (("forward",) * leg + turn) * 2 * loops
    return TrajectoryScript(Pose(64.0, 1.62, 64.0, 0.35, 0.0), actions, 0.5, math.pi / 8)


def test_keyframes_plateau_on_revisits(terrain, small_intr):
    poses = unroll_trajectory(_exact_loops(loops=4), terrain)
    memory = SpatialMemory(small_intr)
    decisions = _feed(memory, [(pose,) + render_depth(terrain, pose, small_intr) for pose in poses])
    admitted = np.array([decision.is_keyframe for decision in decisions])
    loop = 2 * (24 + 8)
    assert admitted[:loop].sum() > 0
    late = np.flatnonzero(admitted[loop + TAU_HIST:]) + loop + TAU_HIST
    assert late.tolist() == []
    assert memory.keyframe_count == admitted.sum()


def test_keyframes_grow_while_exploring(terrain, small_intr):
    poses = unroll_trajectory(make_revisit_trajectory(5, 100, 0), terrain)
    memory = SpatialMemory(small_intr)
    decisions = _feed(memory, [(pose,) + render_depth(terrain, pose, small_intr) for pose in poses])
    assert sum(decision.is_keyframe for decision in decisions[50:]) > 0


def test_ingest_is_deterministic(revisit_stream, small_intr, tmp_path):
    payloads = []
    for run in range(2):
        memory = SpatialMemory(small_intr)
        _feed(memory, revisit_stream[:40])
        path = tmp_path / "run{0}.gmem".format(run)
        save_snapshot(memory.geometry, memory.frames.values(), path)
        payloads.append(path.read_bytes())
    assert payloads[0] == payloads[1]


# ── snapshots ────────────────────────────────────────────────────────────

def test_empty_snapshot_round_trip(tmp_path):
    path = tmp_path / "empty.gmem"
    written = save_snapshot(GlobalGeometry(), [], path)
    geo, frames = load_snapshot(path)
    assert len(geo) == 0 and frames == []
    assert snapshot_info(path)["bytes"] == written


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    geo = GlobalGeometry(rng.uniform(-50, 50, (10000, 3)), rng.integers(0, 300, 10000),
                         rng.random(10000), 0.25, 10 ** 6)
    frames = [FrameRecord(i, Pose(*rng.uniform(-10, 10, 3), rng.uniform(-1.5, 1.5), rng.uniform(-3, 3)),
                          is_keyframe=bool(i % 3)) for i in range(300)]
    path = tmp_path / "store.gmem"
    save_snapshot(geo, reversed(frames), path)
    loaded, loaded_frames = load_snapshot(path)
    assert loaded.same_as(geo)
    np.testing.assert_array_equal(loaded.cell_order, geo.cell_order)
    np.testing.assert_array_equal(loaded.cell_coords, geo.cell_coords)
    assert [record.meta() for record in loaded_frames] == [record.meta() for record in frames]
    info = snapshot_info(path)
    assert (info["points"], info["frames"], info["keyframes"]) == (10000, 300, 200)


def test_snapshot_of_ingested_memory(revisit_memory, tmp_path):
    memory, _ = revisit_memory
    path = tmp_path / "memory.gmem"
    save_snapshot(memory.geometry, memory.frames.values(), path)
    geo, frames = load_snapshot(path)
    assert geo.same_as(memory.geometry)
    assert [record.frame_id for record in frames if record.is_keyframe] == sorted(memory.keyframe_ids)
    assert all(record.depth is None for record in frames)


@pytest.fixture
def snapshot_bytes(tmp_path):
    geo = GlobalGeometry(np.ones((3, 3)), [0, 0, 1], [1.0, 0.5, 0.25])
    path = tmp_path / "small.gmem"
    save_snapshot(geo, [FrameRecord(0, Pose(0, 0, 0), is_keyframe=True),
                        FrameRecord(1, Pose(1, 0, 0), is_keyframe=True)], path)
    return path.read_bytes()


def _corrupt(tmp_path, data):
    path = tmp_path / "corrupt.gmem"
    path.write_bytes(data)
    return path


def test_wrong_magic(tmp_path, snapshot_bytes):
    with pytest.raises(SnapshotFormatError) as err:
        load_snapshot(_corrupt(tmp_path, b"XMEM" + snapshot_bytes[len(MAGIC):]))
    assert err.value.offset == 0


def test_wrong_version(tmp_path, snapshot_bytes):
    with pytest.raises(SnapshotFormatError) as err:
        load_snapshot(_corrupt(tmp_path, snapshot_bytes[:4] + b"\x07\x00" + snapshot_bytes[6:]))
    assert err.value.offset == 4


@pytest.mark.parametrize("cut", [3, 20, 30, 1])
def test_truncated_snapshot(tmp_path, snapshot_bytes, cut):
    data = snapshot_bytes[:-cut]
    with pytest.raises(SnapshotFormatError) as err:
        load_snapshot(_corrupt(tmp_path, data))
    assert err.value.offset == len(data)


def test_trailing_bytes(tmp_path, snapshot_bytes):
    with pytest.raises(SnapshotFormatError) as err:
        snapshot_info(_corrupt(tmp_path, snapshot_bytes + b"\x00\x00"))
    assert err.value.offset == len(snapshot_bytes)
