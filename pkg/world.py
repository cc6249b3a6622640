"""
Deterministic synthetic world supplying ground-truth depth and pose streams:

* value-noise heightfield terrain
* ray-marched depth/confidence rendering (sky is depth 0, the invalid marker)
* scripted Minecraft-style trajectories and their line-oriented text format

Trajectory text grammar, one item per line, ``#`` starts a comment::

    pose <x> <y> <z> <pitch> <yaw>
    step_move <meters>
    step_turn <radians>
    <action>            (repeated; one of ACTIONS)

The three header lines come first, each exactly once.
"""

import dataclasses
import itertools
import logging
import math
from pathlib import Path

import numpy as np

from geometry import Pose, extrinsics_from_pose, pixel_rays

logger = logging.getLogger(__name__)

ACTIONS = ("forward", "back", "left", "right", "turn_left", "turn_right", "look_up", "look_down")
"""Action vocabulary: ground-plane movement and view control"""

NEAR_PLANE = 0.01
FAR_PLANE = 128.0
MIN_STEP = 0.1
"""Ray-march step (meters of camera depth) up to MIN_STEP / REL_STEP"""
REL_STEP = 0.02
"""Ray-march step relative to the current depth beyond that"""
BISECTION_STEPS = 24

NOISE_LOW, NOISE_HIGH = 0.3, 1.0
"""Range of the confidence attenuation applied to noisy pixels"""

BASE_WAVELENGTH = 32.0
BASE_AMPLITUDE = 8.0
OCTAVES = 4


class OutOfBoundsError(ValueError):
    """A camera placed outside the terrain extent"""


class TrajectoryFormatError(ValueError):
    """A trajectory text that does not follow the documented grammar"""


@dataclasses.dataclass(frozen=True)
class HeightField(object):
    """
    Terrain elevations sampled on a square grid; ``elevations[iz, ix]`` is the ground height
    at x = ix * cell, z = iz * cell.
    """
    elevations: np.ndarray
    cell: float
    seed: int
    roughness: float

    @property
    def samples(self):
        return self.elevations.shape[0]

    @property
    def size(self):
        """Covered side length in meters"""
        return (self.samples - 1) * self.cell

    def contains(self, x, z):
        return 0.0 <= x <= self.size and 0.0 <= z <= self.size


@dataclasses.dataclass(frozen=True)
class TrajectoryScript(object):
    initial: Pose
    actions: tuple
    step_move: float = 1.0
    step_turn: float = math.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("trajectory script needs at least one action")
        unknown = sorted(set(self.actions) - set(ACTIONS))
        if unknown:
            raise ValueError("unknown actions {0}".format(unknown))
        if not (self.step_move > 0 and self.step_turn > 0):
            raise ValueError("step sizes must be > 0")

    def __len__(self):
        return len(self.actions) + 1


def _smoothstep(f):
    return f * f * (3.0 - 2.0 * f)


def generate_terrain(seed, extent, cell, roughness):
    """
    Value-noise heightfield, deterministic in seed and parameters

    :param seed: noise seed
    :param extent: side of the square terrain in meters
    :param cell: sample spacing in meters
    :param roughness: amplitude multiplier, 0 gives a flat plane at elevation 0
    :return: the HeightField
    """
    if not extent > 0:
        raise ValueError("terrain extent must be > 0, got {0}".format(extent))
    if not cell > 0:
        raise ValueError("terrain cell must be > 0, got {0}".format(cell))
    samples = max(2, int(round(extent / cell)) + 1)
    coords = np.arange(samples) * float(cell)
    rng = np.random.default_rng(seed)
    elevations = np.zeros((samples, samples))
    for octave in range(OCTAVES):
        wavelength = BASE_WAVELENGTH / 2 ** octave
        lattice = rng.uniform(-1.0, 1.0, size=(int(math.ceil(coords[-1] / wavelength)) + 2,) * 2)
        grid = coords / wavelength
        i0 = np.floor(grid).astype(np.int64)
        weight = _smoothstep(grid - i0)
        wx, wz = weight[np.newaxis, :], weight[:, np.newaxis]
        ix, iz = i0[np.newaxis, :], i0[:, np.newaxis]
        noise = ((1 - wz) * ((1 - wx) * lattice[iz, ix] + wx * lattice[iz, ix + 1])
                 + wz * ((1 - wx) * lattice[iz + 1, ix] + wx * lattice[iz + 1, ix + 1]))
        elevations += BASE_AMPLITUDE * 0.5 ** octave * noise
    # + 0.0 folds the -0.0 entries of a zero-roughness grid
    elevations = elevations * float(roughness) + 0.0
    return HeightField(elevations, float(cell), seed, float(roughness))


def height_at(hf, x, z):
    """Bilinear ground height at world (x, z); positions outside are clamped to the border"""
    last = hf.samples - 1
    gx = np.clip(np.asarray(x, dtype=np.float64) / hf.cell, 0.0, last)
    gz = np.clip(np.asarray(z, dtype=np.float64) / hf.cell, 0.0, last)
    ix = np.minimum(np.floor(gx).astype(np.int64), last - 1)
    iz = np.minimum(np.floor(gz).astype(np.int64), last - 1)
    fx, fz = gx - ix, gz - iz
    e = hf.elevations
    return ((1 - fz) * ((1 - fx) * e[iz, ix] + fx * e[iz, ix + 1])
            + fz * ((1 - fx) * e[iz + 1, ix] + fx * e[iz + 1, ix + 1]))


def _clearance(hf, origin, rays, t):
    """Height of each ray point above the ground (negative below)"""
    points = origin + rays * t[:, np.newaxis]
    return points[:, 1] - height_at(hf, points[:, 0], points[:, 2]), points


def render_depth(hf, pose, intr, noise_fraction=0.0, noise_seed=0):
    """
    Ray-march the heightfield from a pose

    :param hf: the HeightField
    :param pose: camera Pose, must lie inside the terrain extent
    :param intr: the Intrinsics of the rendered image
    :param noise_fraction: fraction of pixels whose confidence is attenuated
    :param noise_seed: seed of the confidence attenuation
    :return: (depth, confidence) float32 HxW maps; sky pixels have depth 0 and confidence 0
    """
    if not hf.contains(pose.x, pose.z):
        raise OutOfBoundsError("pose ({0:.3f}, {1:.3f}) outside terrain [0, {2}]".format(
            pose.x, pose.z, hf.size))
    ext = extrinsics_from_pose(pose)
    rays = pixel_rays(intr, ext).reshape(-1, 3)
    origin = pose.position
    count = len(rays)
    depth = np.zeros(count)

    t = np.full(count, NEAR_PLANE)
    clearance, _ = _clearance(hf, origin, rays, t)
    depth[clearance <= 0] = NEAR_PLANE
    active = np.flatnonzero(clearance > 0)
    while len(active):
        t_lo = t[active]
        t_hi = np.minimum(t_lo + np.maximum(MIN_STEP, REL_STEP * t_lo), FAR_PLANE)
        c_hi, points = _clearance(hf, origin, rays[active], t_hi)
        inside = ((points[:, 0] >= 0) & (points[:, 0] <= hf.size)
                  & (points[:, 2] >= 0) & (points[:, 2] <= hf.size))
        hit = inside & (c_hi <= 0)
        if hit.any():
            depth[active[hit]] = _refine(hf, origin, rays[active[hit]], t_lo[hit], t_hi[hit])
        t[active] = t_hi
        done = hit | ~inside | (t_hi >= FAR_PLANE)
        active = active[~done]

    depth = depth.reshape(intr.shape)
    valid = depth > 0
    confidence = valid.astype(np.float64)
    if noise_fraction > 0:
        rng = np.random.default_rng(noise_seed)
        noisy = rng.random(intr.shape) < noise_fraction
        attenuation = rng.uniform(NOISE_LOW, NOISE_HIGH, size=intr.shape)
        confidence = np.where(noisy & valid, attenuation, confidence)
    return depth.astype(np.float32), confidence.astype(np.float32)


def _refine(hf, origin, rays, t_lo, t_hi):
    """Bisection on the bracketing step, then one secant step (exact for planar ground)"""
    for _ in range(BISECTION_STEPS):
        t_mid = 0.5 * (t_lo + t_hi)
        c_mid, _ = _clearance(hf, origin, rays, t_mid)
        above = c_mid > 0
        t_lo = np.where(above, t_mid, t_lo)
        t_hi = np.where(above, t_hi, t_mid)
    c_lo, _ = _clearance(hf, origin, rays, t_lo)
    c_hi, _ = _clearance(hf, origin, rays, t_hi)
    span = c_lo - c_hi
    safe = np.where(span > 0, span, 1.0)
    secant = np.where(span > 0, t_lo + c_lo * (t_hi - t_lo) / safe, t_hi)
    return np.clip(secant, t_lo, t_hi)


def unroll_trajectory(script, terrain=None, eye_height=1.62):
    """
    Apply every action of a script to its initial pose

    :param script: the TrajectoryScript
    :param terrain: optional HeightField; when given the camera follows the ground at eye_height
    :param eye_height: camera height above the ground in meters
    :return: list of len(script) poses, the initial pose first
    """
    start = script.initial
    if terrain is not None:
        start = dataclasses.replace(start, y=float(height_at(terrain, start.x, start.z)) + eye_height)
    poses = [start]
    x, y, z, pitch, yaw = start.as_tuple()
    move, turn = script.step_move, script.step_turn
    for action in script.actions:
        if action == "forward":
            x, z = x + move * math.sin(yaw), z + move * math.cos(yaw)
        elif action == "back":
            x, z = x - move * math.sin(yaw), z - move * math.cos(yaw)
        elif action == "left":
            x, z = x + move * math.cos(yaw), z - move * math.sin(yaw)
        elif action == "right":
            x, z = x - move * math.cos(yaw), z + move * math.sin(yaw)
        elif action == "turn_left":
            yaw += turn
        elif action == "turn_right":
            yaw -= turn
        elif action == "look_up":
            pitch = max(pitch - turn, -math.pi / 2)
        elif action == "look_down":
            pitch = min(pitch + turn, math.pi / 2)
        if terrain is not None:
            y = float(height_at(terrain, x, z)) + eye_height
        pose = Pose(x, y, z, pitch, yaw)
        yaw = pose.yaw
        poses.append(pose)
    return poses


def make_revisit_trajectory(seed, length, loop_count, start=(64.0, 64.0), step_move=0.5,
                            step_turn=math.pi / 8, pitch=0.35, eye_height=1.62):
    """
    Script of ``length`` poses that walks out and back ``loop_count`` times.

    The seeded leg of forward moves and side steps is drawn once. Every loop walks it, turns
    around on the spot, replays it (which retraces it) and turns around again, so every loop
    ends on the start pose and later loops revisit exactly the poses of the first.
    ``loop_count`` 0 gives a monotone exploration path that never steps back.
    Actions left over after ``loop_count`` loops replay the start of the loop. When no loop fits,
    the script is look_down/look_up pairs at the start pose.

    :return: the TrajectoryScript
    """
    if length < 2 or length < 2 * loop_count:
        raise ValueError("length must be >= 2 and >= 2 * loop_count")
    rng = np.random.default_rng(seed)
    budget = length - 1
    actions = []
    if loop_count == 0:
        for _ in range(budget):
            draw = rng.random()
            actions.append("forward" if draw < 0.85 else ("left" if draw < 0.925 else "right"))
    else:
        segment = budget // loop_count
        half_turn = int(round(math.pi / step_turn))
        if segment < 2 * half_turn + 2:
            step_turn, half_turn = math.pi, 1
        if segment >= 2 * half_turn + 2:
            out_steps = (segment - 2 * half_turn) // 2
            leg = []
            for _ in range(out_steps):
                draw = rng.random()
                leg.append("forward" if draw < 0.8 else ("left" if draw < 0.9 else "right"))
            loop = leg + ["turn_left"] * half_turn + leg[::-1] + ["turn_left"] * half_turn
            actions = list(itertools.islice(itertools.cycle(loop), budget))
    padding = budget - len(actions)
    actions += ["look_down", "look_up"] * (padding // 2) + ["look_down"] * (padding % 2)
    initial = Pose(start[0], eye_height, start[1], pitch, 0.0)
    return TrajectoryScript(initial, tuple(actions), step_move, step_turn)


def format_trajectory(script):
    lines = ["pose " + " ".join(repr(value) for value in script.initial.as_tuple()),
             "step_move " + repr(script.step_move),
             "step_turn " + repr(script.step_turn)]
    lines += list(script.actions)
    return "\n".join(lines) + "\n"


def parse_trajectory(text):
    """
    Parse the trajectory text grammar documented at the top of this module

    :param text: the trajectory file content
    :return: the TrajectoryScript
    """
    header = {}
    actions = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        keyword = tokens[0]
        if keyword in ("pose", "step_move", "step_turn"):
            if actions:
                raise TrajectoryFormatError("line {0}: header {1!r} after actions".format(line_no, keyword))
            if keyword in header:
                raise TrajectoryFormatError("line {0}: duplicate {1!r}".format(line_no, keyword))
            expected = 5 if keyword == "pose" else 1
            if len(tokens) != expected + 1:
                raise TrajectoryFormatError("line {0}: {1!r} takes {2} values".format(
                    line_no, keyword, expected))
            try:
                header[keyword] = [float(token) for token in tokens[1:]]
            except ValueError:
                raise TrajectoryFormatError("line {0}: bad number in {1!r}".format(line_no, line))
        elif keyword in ACTIONS and len(tokens) == 1:
            actions.append(keyword)
        else:
            raise TrajectoryFormatError("line {0}: unknown token {1!r}".format(line_no, line.strip()))
    missing = [key for key in ("pose", "step_move", "step_turn") if key not in header]
    if missing:
        raise TrajectoryFormatError("missing header line(s): {0}".format(", ".join(missing)))
    try:
        return TrajectoryScript(Pose(*header["pose"]), tuple(actions),
                                header["step_move"][0], header["step_turn"][0])
    except ValueError as err:
        raise TrajectoryFormatError(str(err))


def dump_trajectory(script, path):
    Path(path).write_text(format_trajectory(script))


def load_trajectory(path):
    return parse_trajectory(Path(path).read_text())
