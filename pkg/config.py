"""
Configuration module of the spatial memory benchmark

Every knob has a documented module-level default. A run configuration file holds flat
``key = value`` lines whose keys are the lower-case field names of :class:`RunConfig`;
keys not listed there are rejected so that typos surface as errors.
"""

import dataclasses
import hashlib
import json
import math
from pathlib import Path

from geometry import Intrinsics

# WORLD
SEED = 42
"""Single seed every random stream of a run derives from"""
TERRAIN_EXTENT = 256.0
"""Side of the square terrain in meters"""
TERRAIN_CELL = 1.0
"""Heightfield sample spacing in meters"""
TERRAIN_ROUGHNESS = 0.5
"""Noise amplitude multiplier; 0 gives a flat plane"""
EYE_HEIGHT = 1.62
"""Camera height above the ground (Minecraft eye level)"""
CONFIDENCE_NOISE_FRACTION = 0.0
"""Fraction of pixels whose confidence is attenuated into [0.3, 1.0]"""

# TRAJECTORY
TRAJECTORY = ""
"""Path of a trajectory script; empty means generate one"""
TRAJECTORY_LENGTH = 200
"""Frames of the generated trajectory"""
TRAJECTORY_LOOPS = 2
"""Revisit loops of the generated trajectory (0 = straight exploration)"""
STEP_MOVE = 0.5
"""Meters per movement action"""
STEP_TURN = math.pi / 8
"""Radians per view-control action"""

# CAMERA
IMAGE_WIDTH = 384
IMAGE_HEIGHT = 224
"""Frame size (resolution of the generated frames)"""
FOV_DEG = 70.0
"""Horizontal field of view (Minecraft default)"""
WORKING_DOWNSAMPLE = 4
"""Coverage and retrieval run at 1/WORKING_DOWNSAMPLE of the frame resolution"""

# ENGINE
VOXEL_SIZE = 0.5
"""Voxel edge in meters"""
MAX_POINTS_PER_VOXEL = 4
"""N_max, points kept per voxel cell"""
THETA_NOVEL = 0.15
"""Novel-coverage fraction that admits a keyframe"""
CONTEXT_LENGTH = 16
"""L, slots of the conditioning window"""
TAU_HIST = CONTEXT_LENGTH // 2
"""Minimum historical frame count (L/2)"""
TOP_K = 8
"""Frames returned by point-to-frame retrieval"""
WINDOW_CAPACITY = 8
"""Keyframes per reconstruction window"""
WINDOW_OVERLAP = 2
"""Keyframes of the previous window re-processed as scale reference"""
OCCLUSION = True
"""Z-buffer occlusion in retrieval; False gives frustum-only visibility"""
DEPTH_SCALE_JITTER = 0.0
"""Relative scale drift between windows of the emulated depth estimator (0 = metric depth)"""

# ALIGNMENT
TAU_MIN = 0.1
"""Minimum confidence on both sides of a correspondence"""
KEEP_FRACTION = 0.6
"""Share of the most confident pixels kept on each map"""
MIN_CORRESPONDENCES = 32
"""Below this many pairs the scale fit is considered degenerate"""

# BENCHMARK
BENCH_FRAMES = 4000
BENCH_BUCKET = 1000
BENCH_WARMUP = 32
"""Frames excluded from the first bucket's timing"""
BENCH_METHODS = ("geometric", "pose_baseline")
BENCH_LOOPS = 20
"""Revisit loops of the benchmark trajectory"""
BENCH_REPLICAS = 1
BENCH_WORKERS = 1

# OUTPUT
OUT = "./results/"
LOG_LEVEL = "INFO"


class ConfigError(ValueError):
    """A configuration file or value that cannot be accepted"""


@dataclasses.dataclass(frozen=True)
class RunConfig(object):
    seed: int = SEED
    terrain_extent: float = TERRAIN_EXTENT
    terrain_cell: float = TERRAIN_CELL
    terrain_roughness: float = TERRAIN_ROUGHNESS
    eye_height: float = EYE_HEIGHT
    confidence_noise_fraction: float = CONFIDENCE_NOISE_FRACTION
    trajectory: str = TRAJECTORY
    trajectory_length: int = TRAJECTORY_LENGTH
    trajectory_loops: int = TRAJECTORY_LOOPS
    step_move: float = STEP_MOVE
    step_turn: float = STEP_TURN
    image_width: int = IMAGE_WIDTH
    image_height: int = IMAGE_HEIGHT
    fov_deg: float = FOV_DEG
    working_downsample: int = WORKING_DOWNSAMPLE
    voxel_size: float = VOXEL_SIZE
    max_points_per_voxel: int = MAX_POINTS_PER_VOXEL
    theta_novel: float = THETA_NOVEL
    context_length: int = CONTEXT_LENGTH
    tau_hist: int = TAU_HIST
    top_k: int = TOP_K
    window_capacity: int = WINDOW_CAPACITY
    window_overlap: int = WINDOW_OVERLAP
    occlusion: bool = OCCLUSION
    depth_scale_jitter: float = DEPTH_SCALE_JITTER
    tau_min: float = TAU_MIN
    keep_fraction: float = KEEP_FRACTION
    min_correspondences: int = MIN_CORRESPONDENCES
    bench_frames: int = BENCH_FRAMES
    bench_bucket: int = BENCH_BUCKET
    bench_warmup: int = BENCH_WARMUP
    bench_methods: tuple = BENCH_METHODS
    bench_loops: int = BENCH_LOOPS
    bench_replicas: int = BENCH_REPLICAS
    bench_workers: int = BENCH_WORKERS
    out: str = OUT
    log_level: str = LOG_LEVEL

    def __post_init__(self):
        validate(self)

    def intrinsics(self):
        """Camera model at frame resolution"""
        return Intrinsics.from_fov(self.fov_deg, self.image_width, self.image_height)

    def working_intrinsics(self):
        """Camera model at the coverage/retrieval working resolution"""
        return self.intrinsics().scaled(self.working_downsample)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        config = dataclasses.asdict(self)
        config["bench_methods"] = list(self.bench_methods)
        return config


def _check(condition, key, message):
    if not condition:
        raise ConfigError("{0}: {1}".format(key, message))


def validate(cfg):
    """
    Check every numeric field against its documented range

    :param cfg: the RunConfig to check
    :return: Nothing; raises ConfigError on the first violation
    """
    for field in dataclasses.fields(cfg):
        value = getattr(cfg, field.name)
        if isinstance(value, float):
            _check(math.isfinite(value), field.name, "must be finite")
    _check(cfg.terrain_extent > 0, "terrain_extent", "must be > 0")
    _check(cfg.terrain_cell > 0, "terrain_cell", "must be > 0")
    _check(cfg.terrain_roughness >= 0, "terrain_roughness", "must be >= 0")
    _check(cfg.eye_height > 0, "eye_height", "must be > 0")
    _check(0.0 <= cfg.confidence_noise_fraction <= 1.0, "confidence_noise_fraction",
           "must be in [0, 1]")
    _check(cfg.trajectory_length >= 2, "trajectory_length", "must be >= 2")
    _check(cfg.trajectory_loops >= 0, "trajectory_loops", "must be >= 0")
    _check(cfg.trajectory_length >= 2 * cfg.trajectory_loops, "trajectory_length",
           "must be >= 2 * trajectory_loops")
    _check(cfg.step_move > 0, "step_move", "must be > 0")
    _check(cfg.step_turn > 0, "step_turn", "must be > 0")
    _check(cfg.image_width >= 1 and cfg.image_height >= 1, "image_width", "image size must be >= 1")
    _check(0.0 < cfg.fov_deg < 180.0, "fov_deg", "must be in (0, 180)")
    _check(cfg.working_downsample >= 1, "working_downsample", "must be >= 1")
    _check(cfg.image_width // cfg.working_downsample >= 1
           and cfg.image_height // cfg.working_downsample >= 1,
           "working_downsample", "leaves an empty working image")
    _check(cfg.voxel_size > 0, "voxel_size", "must be > 0")
    _check(cfg.max_points_per_voxel >= 1, "max_points_per_voxel", "must be >= 1")
    _check(0.0 <= cfg.theta_novel <= 1.0, "theta_novel", "must be in [0, 1]")
    _check(cfg.context_length >= 2 and cfg.context_length % 2 == 0, "context_length",
           "must be even and >= 2")
    _check(cfg.tau_hist >= 0, "tau_hist", "must be >= 0")
    _check(cfg.top_k >= 1, "top_k", "must be >= 1")
    _check(cfg.window_capacity >= 1, "window_capacity", "must be >= 1")
    _check(0 <= cfg.window_overlap <= cfg.window_capacity, "window_overlap",
           "must be in [0, window_capacity]")
    _check(cfg.depth_scale_jitter >= 0, "depth_scale_jitter", "must be >= 0")
    _check(0.0 <= cfg.tau_min <= 1.0, "tau_min", "must be in [0, 1]")
    _check(0.0 < cfg.keep_fraction <= 1.0, "keep_fraction", "must be in (0, 1]")
    _check(cfg.min_correspondences >= 1, "min_correspondences", "must be >= 1")
    _check(cfg.bench_bucket >= 1, "bench_bucket", "must be >= 1")
    _check(cfg.bench_frames >= 0 and cfg.bench_frames % cfg.bench_bucket == 0, "bench_frames",
           "must be a non-negative multiple of bench_bucket")
    _check(set(cfg.bench_methods) <= {"geometric", "pose_baseline"}, "bench_methods",
           "methods must be out of geometric, pose_baseline")
    _check(cfg.bench_warmup >= 0, "bench_warmup", "must be >= 0")
    _check(cfg.bench_loops >= 0, "bench_loops", "must be >= 0")
    _check(cfg.bench_replicas >= 1, "bench_replicas", "must be >= 1")
    _check(cfg.bench_workers >= 1, "bench_workers", "must be >= 1")


def _coerce(field, raw, line_no):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(item.strip() for item in raw.split(",") if item.strip())
        return raw
    except ValueError:
        raise ConfigError("line {0}: {1}: cannot parse {2!r} as {3}".format(
            line_no, field.name, raw, kind))


def parse_config(text, overrides=None):
    """
    Parse the flat ``key = value`` text of a run configuration

    :param text: the file content
    :param overrides: optional dictionary applied after the file (e.g. --seed from the CLI)
    :return: the validated RunConfig
    """
    fields = {field.name: field for field in dataclasses.fields(RunConfig)}
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line {0}: expected 'key = value'".format(line_no))
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ConfigError("line {0}: unknown key {1!r}".format(line_no, key))
        if key in values:
            raise ConfigError("line {0}: duplicate key {1!r}".format(line_no, key))
        values[key] = _coerce(fields[key], raw, line_no)
    for key, value in (overrides or {}).items():
        if key not in fields:
            raise ConfigError("unknown override {0!r}".format(key))
        values[key] = value
    return RunConfig(**values)


def load_config(path=None, overrides=None):
    """
    Load the config from the file if given otherwise use the defaults of this module

    :param path: the config file path or None
    :param overrides: values that win over the file
    :return: the RunConfig
    """
    if path is None:
        return parse_config("", overrides)
    config_file = Path(path)
    if not config_file.exists():
        raise ConfigError("config file not found: {0}".format(path))
    return parse_config(config_file.read_text(), overrides)


def config_hash(cfg):
    """Short stable digest of a configuration, echoed in every bench report"""
    canonical = json.dumps(cfg.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()[:12]


CONFIG_DICT = RunConfig().as_dict()
"""Default configuration as a plain dictionary"""
