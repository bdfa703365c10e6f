"""Scene description types: bodies, footprints, samples, generator configs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import CameraModel, RigidTransform, MOTION_TOL


DEGENERACY_TAGS = ("colinear", "static_movable", "group_motion", "part_motion", "none")

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class Shape(str, enum.Enum):
    DISC = "disc"
    RECTANGLE = "rectangle"
    TRIANGLE = "triangle"
    COMPOSITE = "composite"


class Footprint:
    """A 2D region in the body's local plane coordinates (world units)."""

    def contains(self, xy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bound_radius(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Disc(Footprint):
    radius: float

    def contains(self, xy):
        return (xy[..., 0] ** 2 + xy[..., 1] ** 2) <= self.radius**2

    def bound_radius(self):
        return self.radius


@dataclass(frozen=True)
class Rect(Footprint):
    half_w: float
    half_h: float
    angle: float = 0.0  # in-plane orientation, radians

    def contains(self, xy):
        c, s = np.cos(self.angle), np.sin(self.angle)
        u = c * xy[..., 0] + s * xy[..., 1]
        v = -s * xy[..., 0] + c * xy[..., 1]
        return (np.abs(u) <= self.half_w) & (np.abs(v) <= self.half_h)

    def bound_radius(self):
        return float(np.hypot(self.half_w, self.half_h))


@dataclass(frozen=True)
class Triangle(Footprint):
    vertices: tuple  # three (x, y) pairs in local coordinates

    def contains(self, xy):
        (x0, y0), (x1, y1), (x2, y2) = self.vertices
        x, y = xy[..., 0], xy[..., 1]
        d0 = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        d1 = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        d2 = (x0 - x2) * (y - y2) - (y0 - y2) * (x - x2)
        neg = (d0 < 0) | (d1 < 0) | (d2 < 0)
        pos = (d0 > 0) | (d1 > 0) | (d2 > 0)
        return ~(neg & pos)

    def bound_radius(self):
        return float(max(np.hypot(x, y) for x, y in self.vertices))


@dataclass(frozen=True)
class Part:
    """One rigid piece of a body: a footprint offset in the body plane with
    its own world motion. Plain bodies have a single part."""

    footprint: Footprint
    offset: tuple = (0.0, 0.0)
    motion: RigidTransform = field(default_factory=RigidTransform.identity)


@dataclass(frozen=True)
class RigidBody:
    body_id: int
    shape: Shape
    texture_seed: int
    depth: float
    center: np.ndarray  # (3,) world position of the body plane center
    motion: RigidTransform  # representative world motion (the moving part's)
    movable: bool
    moving: bool
    parts: tuple  # tuple[Part, ...]
    group_id: Optional[int] = None

    def __post_init__(self):
        if int(self.body_id) < 1:
            raise ValueError("body id must be >= 1")
        if not self.depth > 0:
            raise ValueError("body depth must be > 0")
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=np.float64).reshape(3)
        )
        if self.moving and not self.movable:
            raise ValueError("a moving body must be movable")
        if self.moving == self.motion.is_identity(MOTION_TOL):
            raise ValueError("moving must hold exactly when motion is non-identity")
        if (self.shape == Shape.COMPOSITE) != (len(self.parts) > 1):
            raise ValueError("composite bodies need >= 2 parts, others exactly 1")


@dataclass(frozen=True)
class BackgroundPlane:
    depth: float
    texture_seed: int = 0

    def __post_init__(self):
        if not self.depth > 0:
            raise ValueError("background depth must be > 0")


@dataclass
class SceneSample:
    """Two rendered frames plus dense geometric ground truth for frame 1."""

    frames: np.ndarray  # (2, H, W, 3) float32 in [0, 1]
    flow: np.ndarray  # (H, W, 2) float32, frame 1 -> 2
    depth: np.ndarray  # (2, H, W) float32
    scene_flow: np.ndarray  # (H, W, 6) float32: axis-angle + translation
    instance_masks: np.ndarray  # (H, W) int32, 0 = background
    motion_labels: dict  # id -> bool
    movable_labels: dict  # id -> bool
    degeneracy_tags: tuple  # subset of DEGENERACY_TAGS
    flow_valid: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def instance_ids(self) -> list:
        ids = np.unique(self.instance_masks)
        return [int(i) for i in ids if i != 0]

    def moving_ids(self) -> list:
        return [i for i in self.instance_ids() if self.motion_labels.get(i, False)]

    def movable_ids(self) -> list:
        return [i for i in self.instance_ids() if self.movable_labels.get(i, False)]

    def validate(self) -> None:
        h, w = self.height, self.width
        if self.frames.shape != (2, h, w, 3):
            raise ValueError("bad frames shape")
        if self.frames.min() < 0 or self.frames.max() > 1:
            raise ValueError("frame intensities must lie in [0, 1]")
        if self.flow.shape != (h, w, 2) or self.depth.shape != (2, h, w):
            raise ValueError("bad flow/depth shape")
        if self.scene_flow.shape != (h, w, 6):
            raise ValueError("bad scene_flow shape")
        if self.instance_masks.shape != (h, w):
            raise ValueError("bad mask shape")
        for tag in self.degeneracy_tags:
            if tag not in DEGENERACY_TAGS:
                raise ValueError(f"unknown degeneracy tag {tag}")
        for body_id in self.instance_ids():
            mask = self.instance_masks == body_id
            _, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
            if n != 1:
                raise ValueError(f"instance {body_id} mask is not 4-connected")
            if not self.motion_labels.get(body_id, False):
                if np.abs(self.scene_flow[mask]).max() > MOTION_TOL:
                    raise ValueError(f"static instance {body_id} has non-zero scene flow")


@dataclass(frozen=True)
class GeneratorConfig:
    """Sampling ranges for random scenes. All ranges are (low, high)."""

    height: int = 96
    width: int = 96
    focal: tuple = (90.0, 130.0)
    background_depth: tuple = (8.0, 14.0)
    body_depth: tuple = (3.0, 7.0)
    n_bodies: tuple = (0, 6)
    body_radius: tuple = (0.35, 0.9)
    # Camera motion: per-axis translation bounds and rotation magnitude (radians).
    cam_translation_xy: float = 0.2
    cam_translation_z: float = 0.6
    cam_rotation: float = 0.02
    static_camera: bool = False
    # Body motion magnitudes (world units / radians of in-plane spin).
    body_speed: tuple = (0.08, 0.5)
    body_speed_z: tuple = (0.0, 0.4)
    body_spin: tuple = (0.0, 0.12)
    # Probabilities steering body roles.
    p_immovable: float = 0.0
    p_moving: float = 0.75  # a movable body moves with this probability
    # Degenerate-construction probabilities (per scene).
    p_colinear: float = 0.0
    p_group: float = 0.0
    p_part: float = 0.0
    # Force at least one movable-but-static distractor into every scene.
    ensure_static_movable: bool = False

    def __post_init__(self):
        if self.height < 32 or self.width < 32:
            raise ValueError("resolution must be at least 32x32")
        if self.n_bodies[0] < 0 or self.n_bodies[1] < self.n_bodies[0]:
            raise ValueError("invalid body count range")
        for name in ("background_depth", "body_depth"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi < lo:
                raise ValueError(f"invalid {name} range")
        for p in (self.p_immovable, self.p_moving, self.p_colinear, self.p_group, self.p_part):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    def to_dict(self) -> dict:
        # Lists, not tuples, so the dict survives a JSON round trip unchanged.
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        clean = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return GeneratorConfig(**clean)


@dataclass(frozen=True)
class DatasetMix:
    """Weighted collection of generator configs to sample scenes from."""

    sources: tuple  # tuple[(GeneratorConfig, float), ...]
    equal_likelihood: bool = False

    def __post_init__(self):
        if len(self.sources) == 0:
            raise ValueError("mix must contain at least one source")
        object.__setattr__(
            self,
            "sources",
            tuple((cfg, float(w)) for cfg, w in self.sources),
        )
        if any(w <= 0 for _, w in self.sources):
            raise ValueError("mix weights must be > 0")

    def probabilities(self) -> np.ndarray:
        if self.equal_likelihood:
            return np.full(len(self.sources), 1.0 / len(self.sources))
        w = np.array([w for _, w in self.sources], dtype=np.float64)
        return w / w.sum()

    def to_dict(self) -> dict:
        return {
            "equal_likelihood": self.equal_likelihood,
            "sources": [
                {"config": cfg.to_dict(), "weight": w} for cfg, w in self.sources
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetMix":
        sources = tuple(
            (GeneratorConfig.from_dict(s["config"]), float(s["weight"]))
            for s in d["sources"]
        )
        return DatasetMix(sources=sources, equal_likelihood=bool(d.get("equal_likelihood", False)))
