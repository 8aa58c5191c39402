"""Synthetic drive-by scenes: a vehicle passes a base station whose camera
sits just under the antenna array.

World frame: x along the road, y away from the base station (camera
boresight at zero yaw), z up. Azimuth is measured from +y towards +x, so a
vehicle driving towards +x sweeps from negative to positive azimuth.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .datasets import DataSequence
from .physics import (
    ArrayGeometry,
    Codebook,
    SignalConfig,
    beam_power_profile,
    los_channel,
    optimal_beam_index,
    perturb_power_profile,
)


class ConfigError(ValueError):
    pass


class EmptySequenceError(RuntimeError):
    """The vehicle never became visible to the camera."""


@dataclass(frozen=True)
class CameraModel:
    # 90 degree horizontal field of view on a 16:9 frame
    focal_length: float = 640.0
    image_width: int = 1280
    image_height: int = 720
    position: tuple[float, float, float] = (0.0, 0.0, 2.0)
    yaw: float = 0.0
    pitch: float = 0.0  # positive tilts the camera down

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ConfigError("focal_length must be positive")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError("image dimensions must be positive")

    @property
    def horizontal_fov(self) -> float:
        return 2 * np.arctan(self.image_width / (2 * self.focal_length))

    def rotation(self) -> np.ndarray:
        """Rows are the camera right, down and forward axes in world coordinates."""
        cy, sy = np.cos(self.yaw), np.sin(self.yaw)
        cp, sp = np.cos(self.pitch), np.sin(self.pitch)
        forward = np.array([sy * cp, cy * cp, -sp])
        right = np.array([cy, -sy, 0.0])
        down = np.cross(forward, right)
        return np.stack([right, down, forward])


@dataclass(frozen=True)
class BoundingBox:
    x_center: float
    y_center: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("x_center", "y_center", "width", "height"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("bounding box must have positive extent")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_center, self.y_center, self.width, self.height])


@dataclass(frozen=True)
class Trajectory:
    positions: np.ndarray  # T x 3, vehicle box centre
    timestamps: np.ndarray  # T

    def __post_init__(self):
        if len(self.positions) != len(self.timestamps):
            raise ValueError("positions and timestamps differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True)
class SceneConfig:
    vehicle_extent: tuple[float, float, float] = (4.5, 1.8, 1.5)  # length, width, height
    path_distance: float = 30.0
    speed_range: tuple[float, float] = (8.0, 12.0)
    frame_rate: float = 15.0
    bbox_noise_std: float = 0.0
    num_sequences: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vehicle_extent", tuple(float(v) for v in self.vehicle_extent))
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))
        if len(self.vehicle_extent) != 3 or min(self.vehicle_extent) <= 0:
            raise ConfigError("vehicle_extent must be three positive lengths")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ConfigError(f"degenerate speed_range {self.speed_range!r}")
        if self.path_distance <= 0 or self.frame_rate <= 0:
            raise ConfigError("path_distance and frame_rate must be positive")
        if self.bbox_noise_std < 0:
            raise ConfigError("bbox_noise_std must be non-negative")
        if self.num_sequences < 1:
            raise ConfigError("num_sequences must be at least 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown scene config key(s): {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "SceneConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def sample_trajectory(cfg: SceneConfig, sequence_seed: int) -> Trajectory:
    """Straight constant-speed pass along the road at ``path_distance``.

    The pass covers |x| <= 2 * path_distance; direction and the sub-frame
    start offset are drawn per sequence so frames never align across passes.
    """
    rng = np.random.default_rng(_seed(sequence_seed, 0))
    lo, hi = cfg.speed_range
    speed = rng.uniform(lo, hi) if hi > lo else lo
    direction = 1.0 if rng.random() < 0.5 else -1.0
    step = speed / cfg.frame_rate
    span = 2.0 * cfg.path_distance
    offset = rng.uniform(0.0, step)
    travelled = np.arange(offset, 2 * span, step)
    x = direction * (travelled - span)
    positions = np.column_stack([
        x,
        np.full_like(x, cfg.path_distance),
        np.full_like(x, cfg.vehicle_extent[2] / 2),
    ])
    return Trajectory(positions=positions, timestamps=np.arange(len(x)) / cfg.frame_rate)


def _box_corners(position, extent) -> np.ndarray:
    half = np.asarray(extent, dtype=float) / 2
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return np.asarray(position, dtype=float) + signs * half


def project_bbox(camera: CameraModel, position, extent) -> BoundingBox | None:
    """Pinhole projection of the vehicle box; ``None`` when out of view.

    The box is treated as out of view when any corner is at or behind the
    camera plane, or when its hull misses the frame entirely.
    """
    rel = _box_corners(position, extent) - np.asarray(camera.position)
    cam = rel @ camera.rotation().T
    depth = cam[:, 2]
    if np.any(depth <= 1e-6):
        return None
    u = (camera.focal_length * cam[:, 0] / depth) / camera.image_width + 0.5
    v = (camera.focal_length * cam[:, 1] / depth) / camera.image_height + 0.5
    u0, u1 = np.clip([u.min(), u.max()], 0.0, 1.0)
    v0, v1 = np.clip([v.min(), v.max()], 0.0, 1.0)
    if u1 - u0 <= 0 or v1 - v0 <= 0:
        return None
    return BoundingBox((u0 + u1) / 2, (v0 + v1) / 2, u1 - u0, v1 - v0)


_MIN_EXTENT = 1e-4


def apply_bbox_noise(b: BoundingBox, std: float, seed: int) -> BoundingBox:
    if std == 0:
        return b
    rng = np.random.default_rng(seed)
    noisy = b.as_array() + rng.normal(0.0, std, size=4)
    noisy[:2] = np.clip(noisy[:2], 0.0, 1.0)
    noisy[2:] = np.clip(noisy[2:], _MIN_EXTENT, 1.0)
    return BoundingBox(*noisy)


def synthesize_sequence(
    cfg: SceneConfig,
    camera: CameraModel,
    geometry: ArrayGeometry,
    codebook: Codebook,
    signal_cfg: SignalConfig,
    sequence_seed: int,
    sequence_id: str | None = None,
    array_offset: float = 0.25,
) -> DataSequence:
    """One pass: per frame a (noisy) bbox, a (noisy) beam sweep and its argmax.

    The array sits ``array_offset`` metres above the camera. The receiving
    antenna is on the vehicle roof. Frames where the vehicle is out of view
    are dropped from both ends.
    """
    traj = sample_trajectory(cfg, sequence_seed)
    array_pos = np.asarray(camera.position, dtype=float) + np.array([0.0, 0.0, array_offset])
    boxes = [project_bbox(camera, p, cfg.vehicle_extent) for p in traj.positions]
    visible = [i for i, b in enumerate(boxes) if b is not None]
    if not visible:
        raise EmptySequenceError(f"vehicle never enters the camera view (seed {sequence_seed})")
    first, last = visible[0], visible[-1]

    bboxes, powers, beams = [], [], []
    for t in range(first, last + 1):
        b = boxes[t]
        if b is None:
            # a gap inside the visible run cannot happen on a straight pass
            raise EmptySequenceError(f"vehicle left the view mid-sequence at frame {t}")
        b = apply_bbox_noise(b, cfg.bbox_noise_std, _seed(sequence_seed, t, 1))
        ue = traj.positions[t] + np.array([0.0, 0.0, cfg.vehicle_extent[2] / 2])
        d = ue - array_pos
        ground = np.hypot(d[0], d[1])
        h = los_channel(
            geometry,
            azimuth=np.arctan2(d[0], d[1]),
            elevation=np.arctan2(d[2], ground),
            distance=np.linalg.norm(d),
        )
        clean = signal_cfg.transmit_power * beam_power_profile(h, codebook) + signal_cfg.noise_power
        profile = perturb_power_profile(clean, signal_cfg, _seed(sequence_seed, t, 2))
        bboxes.append(b.as_array())
        powers.append(profile)
        beams.append(optimal_beam_index(profile))

    return DataSequence(
        sequence_id=sequence_id or f"seed{sequence_seed}",
        bboxes=np.array(bboxes),
        beams=np.array(beams, dtype=np.int64),
        powers=np.array(powers),
    )


def generate_dataset(
    cfg: SceneConfig,
    camera: CameraModel | None = None,
    geometry: ArrayGeometry | None = None,
    codebook: Codebook | None = None,
    signal_cfg: SignalConfig | None = None,
) -> list[DataSequence]:
    """``cfg.num_sequences`` passes with independent seeds derived from ``cfg.rng_seed``."""
    from .physics import build_codebook

    camera = camera or CameraModel()
    geometry = geometry or ArrayGeometry()
    codebook = codebook or build_codebook(geometry)
    signal_cfg = signal_cfg or SignalConfig()
    return [
        synthesize_sequence(
            cfg, camera, geometry, codebook, signal_cfg,
            sequence_seed=_seed(cfg.rng_seed, n),
            sequence_id=f"seq{n:04d}",
        )
        for n in range(cfg.num_sequences)
    ]
