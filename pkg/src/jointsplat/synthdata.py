"""Deterministic synthetic scenes, cameras and multi-view samples.

Scenes are splat sets of unit diameter centered at the origin of a y-down
world (OpenCV-style). Cameras sit on a jittered arc in front of the scene
looking at its center; view 1's camera frame becomes the canonical frame, so
generated ground-truth poses always have view 1 at the identity and the
stored scene is expressed in that frame. Images are rendered with the tiled
splat renderer, which makes every sample self-consistent: re-rendering the
ground-truth scene at a ground-truth pose reproduces the stored image bitwise.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .gaussians import Gaussians, concat_gaussians, export_ply, import_ply
from .geometry import Intrinsics, PoseSE3, look_at, normalize_to_canonical, unproject
from .render import RenderConfig, render, save_image_png, save_image_raw, load_image_raw

UP_HINT = np.array([0.0, -1.0, 0.0])  # y-down world, so "up" is -y

LAYOUTS = ("box-room", "textured-planes", "random-cloud")

# two-tone checker palettes, one pair per wall index
_PALETTE = np.array([
    [[0.85, 0.25, 0.20], [0.95, 0.85, 0.75]],
    [[0.20, 0.55, 0.85], [0.90, 0.90, 0.60]],
    [[0.25, 0.70, 0.35], [0.85, 0.60, 0.85]],
    [[0.80, 0.50, 0.20], [0.40, 0.80, 0.80]],
    [[0.55, 0.35, 0.75], [0.95, 0.75, 0.35]],
    [[0.70, 0.70, 0.70], [0.25, 0.25, 0.30]],
])


@dataclass
class SceneSpec:
    seed: int = 0
    n_gaussians: int = 2880
    layout: str = "box-room"
    diameter: float = 1.0
    color_scheme: int = 0  # rotates the wall palette

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}, choose from {LAYOUTS}")
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")


@dataclass
class MultiViewSample:
    context_images: np.ndarray          # [N,H,W,3]
    target_images: np.ndarray           # [M,H,W,3]
    intrinsics: list[Intrinsics]        # per view, contexts then targets
    gt_poses: list[PoseSE3]             # view -> canonical, view 1 = identity
    scene: Gaussians                    # gt splats in the canonical frame
    bg: np.ndarray
    seed: int
    separation_deg: float

    @property
    def n_context(self) -> int:
        return len(self.context_images)

    @property
    def n_target(self) -> int:
        return len(self.target_images)

    @property
    def n_views(self) -> int:
        return self.n_context + self.n_target

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.context_images.shape[1], self.context_images.shape[2]

    def view_image(self, v: int) -> np.ndarray:
        n = self.n_context
        return self.context_images[v] if v < n else self.target_images[v - n]

    def with_context(self, keep: list[int]) -> "MultiViewSample":
        """Restrict to a subset of context views (multi-view dropout).

        The first context view must be kept so the canonical frame (and the
        stored ground-truth scene) stays valid.
        """
        keep = list(keep)
        if not keep or keep[0] != 0:
            raise ValueError("context subset must retain view 0 (the canonical frame)")
        return MultiViewSample(
            context_images=self.context_images[keep],
            target_images=self.target_images,
            intrinsics=[self.intrinsics[i] for i in keep]
            + self.intrinsics[self.n_context:],
            gt_poses=normalize_to_canonical(
                [self.gt_poses[i] for i in keep]
                + self.gt_poses[self.n_context:]),
            scene=self.scene,
            bg=self.bg, seed=self.seed, separation_deg=self.separation_deg,
        )


@dataclass
class CurriculumSchedule:
    """Step-indexed maximum camera separation, non-decreasing."""

    knots: list[tuple[int, float]] = field(default_factory=lambda: [(0, 10.0)])

    def __post_init__(self):
        self.knots = sorted((int(s), float(d)) for s, d in self.knots)
        degs = [d for _, d in self.knots]
        if any(b < a for a, b in zip(degs, degs[1:])):
            raise ValueError("curriculum must be non-decreasing")
        if not self.knots or self.knots[0][0] != 0:
            raise ValueError("curriculum needs a knot at step 0")

    def max_separation(self, step: int) -> float:
        out = self.knots[0][1]
        for s, d in self.knots:
            if step >= s:
                out = d
        return out


# -- scene generation -------------------------------------------------------------

def _wall(rng, grid_n, half, axis, sign, palette, sigma):
    """One axis-aligned wall as a grid of thin anisotropic splats."""
    lin = (np.arange(grid_n) + 0.5) / grid_n * 2.0 - 1.0
    u, v = np.meshgrid(lin, lin, indexing="ij")
    u = (u + rng.uniform(-0.3, 0.3, u.shape) / grid_n).ravel() * half
    v = (v + rng.uniform(-0.3, 0.3, v.shape) / grid_n).ravel() * half
    w = np.full_like(u, sign * half)
    planes = {0: (w, u, v), 1: (u, w, v), 2: (u, v, w)}
    mu = np.stack(planes[axis], axis=1)

    # local z (thin axis) rotated onto the wall normal
    h = np.sqrt(0.5)
    quat_by_axis = {0: (h, 0.0, h, 0.0), 1: (h, h, 0.0, 0.0), 2: (1.0, 0.0, 0.0, 0.0)}
    quat = np.tile(quat_by_axis[axis], (len(mu), 1)).astype(np.float64)

    cell = max(1, grid_n // 8)
    ij = np.stack(np.meshgrid(np.arange(grid_n), np.arange(grid_n), indexing="ij"), -1)
    checker = ((ij[..., 0] // cell + ij[..., 1] // cell) % 2).ravel()
    color = palette[checker]
    color = np.clip(color + rng.normal(scale=0.03, size=color.shape), 0.02, 0.98)

    n = len(mu)
    scale = np.full((n, 3), sigma)
    scale[:, 2] = sigma / 8.0  # thin along the (local z) normal
    opacity = rng.uniform(0.90, 0.97, size=n)
    from .gaussians import SH_C0
    n_coeff = 4
    sh = np.zeros((n, n_coeff, 3))
    sh[:, 0, :] = (color - 0.5) / SH_C0
    sh[:, 1:, :] = rng.normal(scale=0.04, size=(n, n_coeff - 1, 3))
    return Gaussians(mu, quat, scale, opacity, sh)


def gen_scene(spec: SceneSpec) -> Gaussians:
    """Deterministic unit-diameter scene for a spec; same seed, same splats."""
    rng = np.random.default_rng(spec.seed)
    half = 0.28 * spec.diameter
    if spec.layout == "box-room":
        grid_n = max(2, int(np.sqrt(spec.n_gaussians / 5)))
        sigma = 1.35 * (2.0 * half) / grid_n
        walls = []
        # back (z+), floor (y+), ceiling (y-), left (x-), right (x+); front open
        for k, (axis, sign) in enumerate(((2, 1), (1, 1), (1, -1), (0, -1), (0, 1))):
            pal = _PALETTE[(k + spec.color_scheme) % len(_PALETTE)]
            walls.append(_wall(rng, grid_n, half, axis, sign, pal, sigma))
        return concat_gaussians(walls)
    if spec.layout == "textured-planes":
        grid_n = max(2, int(np.sqrt(spec.n_gaussians / 3)))
        sigma = 1.3 * (2.0 * half) / grid_n
        parts = []
        for k in range(3):
            pal = _PALETTE[(k + spec.color_scheme) % len(_PALETTE)]
            wall = _wall(rng, grid_n, half * 0.9, 2, 0.0, pal, sigma)
            from .geometry import so3_exp
            R = so3_exp(rng.normal(scale=0.6, size=3))
            off = rng.uniform(-0.3, 0.3, size=3) * half
            parts.append(wall.transformed(PoseSE3(R, off, check=False)))
        return concat_gaussians(parts)
    # random-cloud
    n = spec.n_gaussians
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radii = 0.5 * spec.diameter * rng.uniform(0.0, 1.0, size=n) ** (1 / 3)
    mu = d * radii[:, None]
    quat = rng.normal(size=(n, 4))
    sigma = 0.9 * spec.diameter / max(4.0, n ** (1 / 3) * 2.0)
    scale = np.exp(rng.uniform(np.log(sigma * 0.5), np.log(sigma * 1.5), size=(n, 3)))
    opacity = rng.uniform(0.6, 0.95, size=n)
    from .gaussians import SH_C0
    sh = np.zeros((n, 4, 3))
    sh[:, 0, :] = (rng.uniform(0.1, 0.9, size=(n, 3)) - 0.5) / SH_C0
    sh[:, 1:, :] = rng.normal(scale=0.05, size=(n, 3, 3))
    return Gaussians(mu, quat, scale, opacity, sh)


# -- cameras and samples -------------------------------------------------------------

def default_intrinsics(height: int, width: int) -> Intrinsics:
    return Intrinsics(fx=1.1 * width, fy=1.1 * width,
                      cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)


def _arc_camera(rng, theta_deg: float, radius: float, diameter: float) -> PoseSE3:
    th = np.radians(theta_deg)
    eye = np.array([radius * np.sin(th),
                    rng.uniform(-0.03, 0.03) * diameter,
                    -radius * np.cos(th)])
    center = rng.uniform(-0.02, 0.02, size=3) * diameter
    up = UP_HINT + np.array([rng.uniform(-0.05, 0.05), 0.0, rng.uniform(-0.05, 0.05)])
    return look_at(eye, center, up)


def gen_sample(scene: Gaussians, n_context: int, n_target: int,
               separation_deg: float, seed: int,
               image_hw: tuple[int, int] = (64, 64),
               diameter: float = 1.0,
               bg=(0.0, 0.0, 0.0),
               render_cfg: RenderConfig | None = None,
               angle_jitter_deg: float = 1.0) -> MultiViewSample:
    """Cameras on a jittered arc looking at the scene center.

    Adjacent context cameras are separated by ~separation_deg on the arc;
    target cameras interleave between the extreme context angles. Ground-truth
    poses are re-normalized so view 1 is exactly the identity, and the scene
    is stored in that canonical frame.
    """
    if n_context < 1:
        raise ValueError("need at least one context view")
    rng = np.random.default_rng(seed)
    H, W = image_hw
    K = default_intrinsics(H, W)
    render_cfg = render_cfg or RenderConfig()
    bg = np.asarray(bg, dtype=np.float64)

    span = separation_deg * (n_context - 1)
    ctx_angles = [(-span / 2.0 + i * separation_deg)
                  + rng.uniform(-angle_jitter_deg, angle_jitter_deg)
                  for i in range(n_context)]
    if n_context == 1:
        lo, hi = -separation_deg / 2.0, separation_deg / 2.0
    else:
        lo, hi = min(ctx_angles), max(ctx_angles)
    tgt_angles = [lo + (hi - lo) * (j + 1) / (n_target + 1)
                  + rng.uniform(-angle_jitter_deg, angle_jitter_deg) * 0.5
                  for j in range(n_target)]

    radius = diameter * rng.uniform(0.52, 0.60)
    cam2world = []
    for ang in ctx_angles + tgt_angles:
        for _ in range(32):  # rejection on degenerate look-at
            try:
                cam2world.append(_arc_camera(rng, ang, radius, diameter))
                break
            except ValueError:
                continue
        else:
            raise RuntimeError("could not place a valid camera")

    gt_poses = normalize_to_canonical(cam2world)
    scene_canon = scene.transformed(cam2world[0].inverse())

    images = [render(scene_canon, K, p, bg, render_cfg).color for p in gt_poses]
    return MultiViewSample(
        context_images=np.stack(images[:n_context]),
        target_images=(np.stack(images[n_context:])
                       if n_target else np.zeros((0, H, W, 3))),
        intrinsics=[K] * (n_context + n_target),
        gt_poses=gt_poses,
        scene=scene_canon,
        bg=bg,
        seed=seed,
        separation_deg=separation_deg,
    )


def unproject_oracle(sample: MultiViewSample, view: int,
                     render_cfg: RenderConfig | None = None):
    """Per-pixel canonical-frame points from ground-truth depth.

    Re-renders view ``view`` of the ground-truth scene to obtain the depth of
    the front-most contributing splat, then unprojects every covered pixel
    through the view's intrinsics and ground-truth pose. Returns (mu_grid
    [H,W,3], valid [H,W]).
    """
    K = sample.intrinsics[view]
    pose = sample.gt_poses[view]
    out = render(sample.scene, K, pose, sample.bg, render_cfg or RenderConfig())
    depth = out.aux["front_depth"]
    valid = out.aux["front_valid"]
    H, W = depth.shape
    xs, ys = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    uv = np.stack([xs, ys], axis=-1)
    mu = unproject(K, pose, uv, np.where(valid, depth, 1.0))
    return mu, valid


# -- sample bundles on disk -------------------------------------------------------------

def save_sample_bundle(directory: str, sample: MultiViewSample) -> None:
    os.makedirs(directory, exist_ok=True)
    views = []
    for i in range(sample.n_views):
        role = "context" if i < sample.n_context else "target"
        k = i if i < sample.n_context else i - sample.n_context
        stem = f"{role}_{k:02d}"
        img = sample.view_image(i)
        save_image_png(os.path.join(directory, stem + ".png"), img)
        save_image_raw(os.path.join(directory, stem + ".raw"), img)
        views.append({"role": role, "stem": stem,
                      "intrinsics": sample.intrinsics[i].to_json(),
                      "pose": sample.gt_poses[i].to_json()})
    with open(os.path.join(directory, "cameras.json"), "w") as f:
        json.dump({"views": views, "bg": sample.bg.tolist(),
                   "seed": sample.seed,
                   "separation_deg": sample.separation_deg}, f, indent=1)
    with open(os.path.join(directory, "scene.ply"), "wb") as f:
        f.write(export_ply(sample.scene))


def load_sample_bundle(directory: str) -> MultiViewSample:
    with open(os.path.join(directory, "cameras.json")) as f:
        meta = json.load(f)
    ctx_imgs, tgt_imgs, intr, poses = [], [], [], []
    for v in meta["views"]:
        img = load_image_raw(os.path.join(directory, v["stem"] + ".raw"))
        (ctx_imgs if v["role"] == "context" else tgt_imgs).append(img)
        intr.append(Intrinsics.from_json(v["intrinsics"]))
        poses.append(PoseSE3.from_json(v["pose"]))
    with open(os.path.join(directory, "scene.ply"), "rb") as f:
        scene = import_ply(f.read())
    H, W = ctx_imgs[0].shape[:2]
    return MultiViewSample(
        context_images=np.stack(ctx_imgs),
        target_images=np.stack(tgt_imgs) if tgt_imgs else np.zeros((0, H, W, 3)),
        intrinsics=intr, gt_poses=poses, scene=scene,
        bg=np.asarray(meta["bg"]), seed=meta["seed"],
        separation_deg=meta["separation_deg"],
    )
