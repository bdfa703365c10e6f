"""Scene construction: deterministic rendering plus seeded random generation.

Every surface is a fronto-parallel textured plane patch (the background plane
or a rigid-body part). Frame 1 is painted directly; frame 2 is rendered by
intersecting each pixel ray of the moved camera with each moved surface and
keeping the nearest hit, so appearance, depth, and the projected flow all come
from the same geometry.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import CameraModel, RigidTransform, project_flow
from .texture import TextureParams, texture_rgb
from .types import (
    BackgroundPlane,
    DatasetMix,
    Disc,
    GeneratorConfig,
    Part,
    Rect,
    RigidBody,
    SceneSample,
    Shape,
    Triangle,
)

_RAY_EPS = 1e-9


def _seed_entropy(seed: int) -> int:
    # SeedSequence wants a non-negative integer; fold negatives in reversibly.
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def body_bound_radius(body: RigidBody) -> float:
    return max(
        float(np.hypot(*p.offset)) + p.footprint.bound_radius() for p in body.parts
    )


class _Surface:
    """One renderable plane patch: a part of a body, tagged by ids."""

    def __init__(self, part_id, body, part):
        self.part_id = part_id
        self.body = body
        self.part = part
        self.depth = body.depth
        rot = part.motion.rotation
        # Frame-2 rendering needs the moved patch to stay fronto-parallel.
        if abs(rot[2, 2] - 1.0) > 1e-9:
            raise ValueError("body rotations must keep the plane fronto-parallel")
        self.depth2 = self.depth + part.motion.apply(body.center)[2] - body.center[2]

    def local_xy(self, world_xy: np.ndarray) -> np.ndarray:
        cx, cy = self.body.center[0], self.body.center[1]
        ox, oy = self.part.offset
        return world_xy - np.array([cx + ox, cy + oy])


def render_scene(
    camera: CameraModel,
    background: BackgroundPlane,
    bodies: list,
    tags: tuple = ("none",),
) -> SceneSample:
    """Render a fully specified scene into a SceneSample."""
    ids = [b.body_id for b in bodies]
    if len(set(ids)) != len(ids):
        raise ValueError("body ids must be unique")
    if max([b.depth for b in bodies], default=-np.inf) >= background.depth:
        raise ValueError("bodies must sit in front of the background plane")

    h, w = camera.height, camera.width
    surfaces = []
    for body in bodies:
        for part in body.parts:
            surfaces.append(_Surface(len(surfaces) + 1, body, part))

    bg_tex = TextureParams(background.texture_seed, "background")
    body_tex = {
        b.body_id: TextureParams(b.texture_seed, "movable" if b.movable else "immovable")
        for b in bodies
    }

    pixels = camera.pixel_grid()

    # Frame 1 membership: far-to-near z-buffer over fronto-parallel patches.
    depth1 = np.full((h, w), background.depth, dtype=np.float64)
    part_ids = np.zeros((h, w), dtype=np.int32)
    instance = np.zeros((h, w), dtype=np.int32)
    for surf in sorted(surfaces, key=lambda s: -s.depth):
        world_xy = camera.back_project(pixels, np.full((h, w), surf.depth))[..., :2]
        local = surf.local_xy(world_xy)
        inside = surf.part.footprint.contains(local) & (surf.depth < depth1)
        if not inside.any():
            continue
        depth1[inside] = surf.depth
        part_ids[inside] = surf.part_id
        instance[inside] = surf.body.body_id

    # Pixel-center sampling can strand isolated pixels at sharp corners; keep
    # each instance's largest 4-connected component so masks stay connected.
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    for body in bodies:
        sel = instance == body.body_id
        labeled, n = ndimage.label(sel, structure=four)
        if n <= 1:
            continue
        sizes = np.bincount(labeled.reshape(-1))[1:]
        stray = sel & (labeled != int(np.argmax(sizes)) + 1)
        instance[stray] = 0
        part_ids[stray] = 0
        depth1[stray] = background.depth

    # Paint frame 1 from the cleaned membership maps.
    frame1 = texture_rgb(
        bg_tex,
        camera.back_project(pixels, np.full((h, w), background.depth))[..., :2],
    )
    for surf in surfaces:
        sel = part_ids == surf.part_id
        if not sel.any():
            continue
        world_xy = camera.back_project(pixels[sel], np.full(sel.sum(), surf.depth))[..., :2]
        frame1[sel] = texture_rgb(body_tex[surf.body.body_id], surf.local_xy(world_xy))

    # Frame 2: intersect moved-camera rays with each moved surface, nearest wins.
    cx, cy = camera.principal_point
    d_hat = np.stack(
        [(pixels[..., 0] - cx) / camera.focal, (pixels[..., 1] - cy) / camera.focal, np.ones((h, w))],
        axis=-1,
    )
    rot_c = camera.pose_delta.rotation
    origin = camera.pose_delta.translation
    ray = d_hat @ rot_c.T

    with np.errstate(divide="ignore", invalid="ignore"):
        s_bg = (background.depth - origin[2]) / ray[..., 2]
    bg_ok = (ray[..., 2] > _RAY_EPS) & (s_bg > _RAY_EPS)
    depth2 = np.where(bg_ok, s_bg, np.inf)
    hit_bg = origin + np.where(bg_ok[..., None], s_bg[..., None], 0.0) * ray
    frame2 = texture_rgb(bg_tex, hit_bg[..., :2])
    for surf in surfaces:
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (surf.depth2 - origin[2]) / ray[..., 2]
        ok = (ray[..., 2] > _RAY_EPS) & (s > _RAY_EPS) & (s < depth2)
        if not ok.any():
            continue
        hit = origin + s[..., None] * ray
        back = surf.part.motion.inverse().apply(hit[ok].reshape(-1, 3))
        local = surf.local_xy(back[:, :2])
        inside = surf.part.footprint.contains(local)
        sel = np.zeros((h, w), dtype=bool)
        sel[ok] = inside
        depth2[sel] = s[sel]
        frame2[sel] = texture_rgb(body_tex[surf.body.body_id], local[inside])
    depth2 = np.where(np.isfinite(depth2), depth2, background.depth)

    # Dense ground truth from frame-1 geometry.
    motions = {
        s.part_id: s.part.motion for s in surfaces if not s.part.motion.is_identity()
    }
    flow, flow_valid = project_flow(depth1, camera, part_ids, motions)

    scene_flow = np.zeros((h, w, 6), dtype=np.float64)
    for surf in surfaces:
        if surf.part.motion.is_identity():
            continue
        sel = part_ids == surf.part_id
        scene_flow[sel] = surf.part.motion.as_sixvec()

    sample = SceneSample(
        frames=np.stack([frame1, frame2]).astype(np.float32),
        flow=flow.astype(np.float32),
        depth=np.stack([depth1, depth2]).astype(np.float32),
        scene_flow=scene_flow.astype(np.float32),
        instance_masks=instance,
        motion_labels={b.body_id: bool(b.moving) for b in bodies},
        movable_labels={b.body_id: bool(b.movable) for b in bodies},
        degeneracy_tags=tuple(tags),
        flow_valid=flow_valid,
    )
    return sample


def _make_footprint(rng: np.random.Generator, kind: Shape, radius: float):
    if kind == Shape.DISC:
        return Disc(radius)
    if kind == Shape.RECTANGLE:
        return Rect(
            half_w=radius * rng.uniform(0.6, 1.0),
            half_h=radius * rng.uniform(0.4, 0.9),
            angle=rng.uniform(0.0, np.pi),
        )
    if kind == Shape.TRIANGLE:
        # Fat triangles only: slivers pixelate badly at small projected sizes.
        for _ in range(64):
            angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=3))
            gaps = np.diff(np.concatenate([angles, [angles[0] + 2.0 * np.pi]]))
            if gaps.min() > 1.0:
                break
        else:
            base = rng.uniform(0.0, 2.0 * np.pi)
            angles = base + np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
        verts = tuple((radius * np.cos(a), radius * np.sin(a)) for a in angles)
        return Triangle(verts)
    raise ValueError(f"no direct footprint for {kind}")


def _random_unit_xy(rng: np.random.Generator) -> np.ndarray:
    ang = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(ang), np.sin(ang), 0.0])


def generate_scene(cfg: GeneratorConfig, seed: int) -> SceneSample:
    """Deterministic random scene for a (config, seed) pair."""
    rng = np.random.default_rng(_seed_entropy(seed))
    h, w = cfg.height, cfg.width
    focal = rng.uniform(*cfg.focal)

    if cfg.static_camera:
        pose = RigidTransform.identity()
    else:
        rotvec = rng.uniform(-1.0, 1.0, size=3) * cfg.cam_rotation
        t = np.array(
            [
                rng.uniform(-cfg.cam_translation_xy, cfg.cam_translation_xy),
                rng.uniform(-cfg.cam_translation_xy, cfg.cam_translation_xy),
                rng.uniform(-cfg.cam_translation_z, cfg.cam_translation_z),
            ]
        )
        pose = RigidTransform.from_rotvec(rotvec, t)
    camera = CameraModel(
        focal=focal,
        principal_point=((w - 1) / 2.0, (h - 1) / 2.0),
        image_size=(h, w),
        pose_delta=pose,
    )

    want_colinear = rng.random() < cfg.p_colinear
    want_group = rng.random() < cfg.p_group
    want_part = rng.random() < cfg.p_part
    cam_t = pose.translation
    if np.linalg.norm(cam_t) < 1e-6:
        want_colinear = False

    background = BackgroundPlane(
        depth=rng.uniform(*cfg.background_depth),
        texture_seed=int(rng.integers(2**31 - 1)),
    )

    n_total = int(rng.integers(cfg.n_bodies[0], cfg.n_bodies[1] + 1))
    plan = []
    if cfg.ensure_static_movable:
        plan.append("distractor")
    if want_colinear:
        plan.append("colinear")
    if want_group:
        plan.extend(["group", "group"])
    if want_part:
        plan.append("part")
    n_total = max(n_total, len(plan))
    plan.extend(["filler"] * (n_total - len(plan)))

    group_motion = RigidTransform(
        np.eye(3), _random_unit_xy(rng) * rng.uniform(*cfg.body_speed)
    )

    bodies = []
    placements = []  # (px, py, projected bound radius)
    placed_kinds = []
    for kind in plan:
        depth_b = rng.uniform(*cfg.body_depth)
        radius = rng.uniform(*cfg.body_radius)
        bound_factor = 1.3 if kind == "part" else 1.0
        max_proj = (min(h, w) / 2.0 - 4.0) / bound_factor
        # Keep every body at least ~5 projected pixels across and fully inside.
        radius = min(max(radius, 5.0 * depth_b / focal), max_proj * depth_b / focal)
        proj_r = focal * radius * bound_factor / depth_b

        spot = None
        for _ in range(60):
            px = rng.uniform(proj_r + 2.0, w - 1 - proj_r - 2.0)
            py = rng.uniform(proj_r + 2.0, h - 1 - proj_r - 2.0)
            if all(
                np.hypot(px - qx, py - qy) > proj_r + qr + 2.0
                for qx, qy, qr in placements
            ):
                spot = (px, py)
                break
        if spot is None:
            continue
        placements.append((spot[0], spot[1], proj_r))
        center = camera.back_project(np.array(spot, dtype=np.float64), depth_b)

        body_id = len(bodies) + 1
        texture_seed = int(rng.integers(2**31 - 1))
        movable = True
        group_id = None

        if kind == "distractor":
            motion = RigidTransform.identity()
        elif kind == "colinear":
            direction = cam_t / np.linalg.norm(cam_t)
            mag = np.linalg.norm(cam_t)
            mag = mag if rng.random() < 0.4 else mag * rng.uniform(0.6, 1.4)
            motion = RigidTransform(np.eye(3), direction * mag)
        elif kind == "group":
            motion = group_motion
            group_id = 1
        elif kind == "filler":
            movable = rng.random() >= cfg.p_immovable
            give_motion = movable and rng.random() < cfg.p_moving
            spin = rng.uniform(*cfg.body_spin) * rng.choice([-1.0, 1.0])
            txy = _random_unit_xy(rng) * rng.uniform(*cfg.body_speed)
            tz = rng.uniform(*cfg.body_speed_z) * rng.choice([-1.0, 1.0])
            if give_motion:
                motion = RigidTransform.about_center(
                    (0.0, 0.0, spin), txy + np.array([0.0, 0.0, tz]), center
                )
            else:
                motion = RigidTransform.identity()
        elif kind == "part":
            txy = _random_unit_xy(rng) * rng.uniform(*cfg.body_speed)
            motion = RigidTransform(np.eye(3), txy)
        else:
            raise AssertionError(kind)

        if kind == "part":
            base = Part(Rect(half_w=radius * 0.9, half_h=radius * 0.55), (0.0, 0.0))
            mover = Part(Disc(radius * 0.45), (radius * 0.8, 0.0), motion)
            body = RigidBody(
                body_id=body_id,
                shape=Shape.COMPOSITE,
                texture_seed=texture_seed,
                depth=depth_b,
                center=center,
                motion=motion,
                movable=True,
                moving=True,
                parts=(base, mover),
            )
        else:
            shape_kind = Shape(rng.choice([Shape.DISC.value, Shape.RECTANGLE.value, Shape.TRIANGLE.value]))
            footprint = _make_footprint(rng, shape_kind, radius)
            moving = not motion.is_identity()
            body = RigidBody(
                body_id=body_id,
                shape=shape_kind,
                texture_seed=texture_seed,
                depth=depth_b,
                center=center,
                motion=motion,
                movable=movable,
                moving=moving,
                parts=(Part(footprint, (0.0, 0.0), motion),),
                group_id=group_id,
            )
        bodies.append(body)
        placed_kinds.append(kind)

    tags = set()
    if any(k == "colinear" for k in placed_kinds):
        tags.add("colinear")
    if placed_kinds.count("group") >= 2:
        tags.add("group_motion")
    if any(k == "part" for k in placed_kinds):
        tags.add("part_motion")
    if any(b.movable and not b.moving for b in bodies):
        tags.add("static_movable")
    if not tags:
        tags.add("none")

    return render_scene(camera, background, bodies, tags=tuple(sorted(tags)))


def sample_mix(mix: DatasetMix, rng: np.random.Generator) -> int:
    """Draw a source index according to the mix's sampling rule."""
    probs = mix.probabilities()
    return int(rng.choice(len(probs), p=probs))


def generate_from_mix(mix: DatasetMix, rng: np.random.Generator) -> tuple:
    """Draw (source index, scene): source per mix rule, scene seed from rng."""
    idx = sample_mix(mix, rng)
    seed = int(rng.integers(0, 2**31 - 1))
    return idx, generate_scene(mix.sources[idx][0], seed)
