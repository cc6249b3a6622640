"""
Camera math of the spatial memory: poses, quaternion-composed rotations, extrinsics,
pinhole projection, depth back-projection and Plücker ray maps.

Conventions (fixed here so every oracle agrees):

* world frame right-handed, +y up; yaw turns about world +y, pitch about the camera's
  right axis, positive pitch looks down (pitch = pi/2 looks straight down)
* camera frame: +z forward, +y up at zero pitch, +x = y cross z (the camera's left);
  image rows grow along camera +y, so row 0 is the bottom of the view
* a zero pose gives identity extrinsics
* a point belongs to pixel (floor(u + 0.5), floor(v + 0.5)); the image rectangle is
  -0.5 <= u < width - 0.5 and -0.5 <= v < height - 0.5
"""

import dataclasses
import math

import numpy as np

INVALID_DEPTH = 1e-6
"""Depths below this value mark invalid pixels (sky, holes)"""

_TWO_PI = 2.0 * math.pi


def normalize_yaw(yaw):
    """Wrap an angle to [-pi, pi); in-range angles come back bit-identical"""
    if -math.pi <= yaw < math.pi:
        return yaw
    wrapped = math.fmod(yaw + math.pi, _TWO_PI)
    if wrapped < 0.0:
        wrapped += _TWO_PI
    wrapped -= math.pi
    # fmod can land exactly on +pi after the shift back
    return -math.pi if wrapped >= math.pi else wrapped


@dataclasses.dataclass(frozen=True)
class Pose(object):
    """
    Camera position in world meters plus pitch/yaw orientation in radians.

    Yaw is wrapped to [-pi, pi) on construction; pitch outside [-pi/2, pi/2] or any
    non-finite field raises ValueError.
    """
    x: float
    y: float
    z: float
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "pitch", "yaw"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError("pose {0} must be finite, got {1}".format(name, value))
            object.__setattr__(self, name, value)
        if abs(self.pitch) > math.pi / 2:
            raise ValueError("pose pitch {0} outside [-pi/2, pi/2]".format(self.pitch))
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def position(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def as_tuple(self):
        return self.x, self.y, self.z, self.pitch, self.yaw

    def key(self, decimals=6):
        """Hashable rounded pose; equal for revisits of the same view up to float drift"""
        return tuple(round(value, decimals) for value in self.as_tuple())


@dataclasses.dataclass(frozen=True)
class Intrinsics(object):
    """Pinhole camera: focal lengths and principal point in pixels, image size"""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be >= 1")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point ({0}, {1}) outside the image".format(self.cx, self.cy))

    @classmethod
    def from_fov(cls, fov_deg, width, height):
        """
        Square-pixel camera with the given horizontal field of view

        :param fov_deg: horizontal field of view in degrees
        :param width: image width in pixels
        :param height: image height in pixels
        :return: the Intrinsics with the principal point at (width/2, height/2)
        """
        focal = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(focal, focal, width / 2.0, height / 2.0, int(width), int(height))

    def scaled(self, factor):
        """Camera seeing every ``factor``-th pixel of this one (pixel 0 stays pixel 0)"""
        if factor == 1:
            return self
        return Intrinsics(self.fx / factor, self.fy / factor, self.cx / factor, self.cy / factor,
                          max(1, self.width // factor), max(1, self.height // factor))

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def shape(self):
        return self.height, self.width


@dataclasses.dataclass(frozen=True)
class PointCloud(object):
    """World points tagged with their source frame id and confidence"""
    positions: np.ndarray
    frame_ids: np.ndarray
    confidences: np.ndarray

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls, dtype=np.float64):
        return cls(np.zeros((0, 3), dtype=dtype), np.zeros(0, dtype=np.uint32),
                   np.zeros(0, dtype=np.float32))

    @classmethod
    def concat(cls, clouds):
        clouds = [cloud for cloud in clouds if len(cloud)]
        if not clouds:
            return cls.empty()
        return cls(np.concatenate([cloud.positions for cloud in clouds]),
                   np.concatenate([cloud.frame_ids for cloud in clouds]),
                   np.concatenate([cloud.confidences for cloud in clouds]))

    def take(self, index):
        return PointCloud(self.positions[index], self.frame_ids[index], self.confidences[index])


@dataclasses.dataclass(frozen=True)
class ProjectedPoints(object):
    """Forward projection result, restricted to the image rectangle and positive depth"""
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.index)

    def pixels(self):
        """Integer (row, column) of every projected point"""
        return (np.floor(self.v + 0.5).astype(np.int64),
                np.floor(self.u + 0.5).astype(np.int64))


@dataclasses.dataclass(frozen=True)
class PluckerRayMap(object):
    """Per-pixel unit direction and moment (camera center x direction), both HxWx3"""
    directions: np.ndarray
    moments: np.ndarray


# QUATERNIONS (w, x, y, z)

def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_multiply(q, r):
    """Hamilton product q * r (apply r first, then q)"""
    w1, x1, y1, z1 = q
    w2, x2, y2, z2 = r
    return np.array([w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                     w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                     w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                     w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def orientation_quaternion(pitch, yaw):
    """Camera-to-world orientation: yaw about world up, then pitch about the camera right axis"""
    if not (math.isfinite(pitch) and math.isfinite(yaw)):
        raise ValueError("pitch and yaw must be finite")
    q_yaw = quat_from_axis_angle((0.0, 1.0, 0.0), yaw)
    q_pitch = quat_from_axis_angle((1.0, 0.0, 0.0), pitch)
    return quat_multiply(q_yaw, q_pitch)


def rotation_from_pitch_yaw(pitch, yaw):
    """
    World-to-camera rotation R(pitch, yaw) of the extrinsics.

    It is the matrix of the conjugate of :func:`orientation_quaternion`, i.e. the transpose of
    the camera orientation, so its rows are the camera axes expressed in world coordinates.

    :param pitch: radians, in [-pi/2, pi/2]
    :param yaw: radians
    :return: 3x3 orthonormal matrix with determinant 1
    """
    if not (math.isfinite(pitch) and math.isfinite(yaw)):
        raise ValueError("pitch and yaw must be finite")
    if abs(pitch) > math.pi / 2:
        raise ValueError("pitch {0} outside [-pi/2, pi/2]".format(pitch))
    return quat_to_matrix(quat_conjugate(orientation_quaternion(pitch, yaw)))


def forward_vector(pose):
    """World direction of the camera's optical axis"""
    return rotation_from_pitch_yaw(pose.pitch, pose.yaw)[2].copy()


def extrinsics_from_pose(pose):
    """
    4x4 world-to-camera matrix E = [R, -RC; 0, 1]

    :param pose: the camera Pose
    :return: the extrinsics as a float64 array
    """
    rotation = rotation_from_pitch_yaw(pose.pitch, pose.yaw)
    extrinsics = np.eye(4)
    extrinsics[:3, :3] = rotation
    extrinsics[:3, 3] = -rotation @ pose.position
    return extrinsics


def invert_extrinsics(extrinsics):
    """Camera-to-world matrix of a rigid world-to-camera matrix"""
    rotation = extrinsics[:3, :3]
    inverse = np.eye(4)
    inverse[:3, :3] = rotation.T
    inverse[:3, 3] = -rotation.T @ extrinsics[:3, 3]
    return inverse


def camera_center(extrinsics):
    return -extrinsics[:3, :3].T @ extrinsics[:3, 3]


def pixel_grid(intr):
    """Column (u) and row (v) index of every pixel, both HxW float64"""
    return np.meshgrid(np.arange(intr.width, dtype=np.float64),
                       np.arange(intr.height, dtype=np.float64))


def backproject(depth, conf, intr, ext, frame_id):
    """
    Lift every valid pixel of a depth map to a world point tagged with frame_id

    :param depth: HxW depth in meters, entries below INVALID_DEPTH are skipped
    :param conf: HxW confidence in [0, 1]
    :param intr: Intrinsics matching the map size
    :param ext: world-to-camera extrinsics
    :param frame_id: source frame of every point
    :return: PointCloud in row-major pixel order
    """
    depth = np.asarray(depth)
    conf = np.asarray(conf)
    if depth.shape != conf.shape or depth.shape != intr.shape:
        raise ValueError("depth {0}, confidence {1} and intrinsics {2} sizes differ".format(
            depth.shape, conf.shape, intr.shape))
    u, v = pixel_grid(intr)
    valid = depth >= INVALID_DEPTH
    d = depth[valid].astype(np.float64)
    cam = np.stack([(u[valid] - intr.cx) * d / intr.fx,
                    (v[valid] - intr.cy) * d / intr.fy,
                    d], axis=1)
    cam_to_world = invert_extrinsics(ext)
    world = cam @ cam_to_world[:3, :3].T + cam_to_world[:3, 3]
    return PointCloud(world, np.full(len(d), frame_id, dtype=np.uint32),
                      conf[valid].astype(np.float32))


def to_camera(positions, ext):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    return positions @ ext[:3, :3].T + ext[:3, 3]


def project_points(positions, intr, ext):
    """
    Exact pinhole projection of world points

    :param positions: Nx3 world positions (or a PointCloud)
    :param intr: the Intrinsics
    :param ext: world-to-camera extrinsics
    :return: ProjectedPoints of the points in front of the camera and inside the image
    """
    if isinstance(positions, PointCloud):
        positions = positions.positions
    cam = to_camera(positions, ext)
    in_front = cam[:, 2] > 0
    index = np.flatnonzero(in_front)
    cam = cam[index]
    u = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
    v = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    inside = (u >= -0.5) & (u < intr.width - 0.5) & (v >= -0.5) & (v < intr.height - 0.5)
    return ProjectedPoints(u[inside], v[inside], cam[inside, 2], index[inside])


def pixel_rays(intr, ext):
    """Unnormalized world ray (camera z = 1) through every pixel, HxWx3"""
    u, v = pixel_grid(intr)
    cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    return cam @ ext[:3, :3]


def plucker_rays(intr, ext):
    """
    Plücker coordinates of every pixel ray

    :param intr: the Intrinsics
    :param ext: world-to-camera extrinsics
    :return: PluckerRayMap with unit directions and moments origin x direction
    """
    rays = pixel_rays(intr, ext)
    directions = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    origin = camera_center(ext)
    moments = np.cross(np.broadcast_to(origin, directions.shape), directions)
    return PluckerRayMap(directions, moments)


def frustum_samples(pose, intr, sample_depth, grid=8):
    """
    World points on a grid x grid lattice of the view, all at camera depth sample_depth.

    Samples sit at the centers of equal image cells, so every one of them lies inside the
    camera's own image rectangle.
    """
    us = (np.arange(grid) + 0.5) * intr.width / grid - 0.5
    vs = (np.arange(grid) + 0.5) * intr.height / grid - 0.5
    u, v = np.meshgrid(us, vs)
    cam = np.stack([(u.ravel() - intr.cx) * sample_depth / intr.fx,
                    (v.ravel() - intr.cy) * sample_depth / intr.fy,
                    np.full(u.size, float(sample_depth))], axis=1)
    cam_to_world = invert_extrinsics(extrinsics_from_pose(pose))
    return cam @ cam_to_world[:3, :3].T + cam_to_world[:3, 3]


def frustum_overlap(query, other, intr, sample_depth=8.0, grid=8):
    """Fraction of the query's frustum samples that fall inside the other camera's view"""
    samples = frustum_samples(query, intr, sample_depth, grid)
    return len(project_points(samples, intr, extrinsics_from_pose(other))) / float(len(samples))
