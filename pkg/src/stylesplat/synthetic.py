"""Procedural test scenes (textured tube or sphere shell) and recolored style pools."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .dataio import save_checkpoint, save_depth, save_image, write_manifest
from .rasterizer import DepthBuffer, depth_from_state, rasterize
from .scene import Camera, GaussianCloud, logit
from .sh import num_coeffs, rgb_to_dc

TUBE_RADIUS = 1.0
TUBE_LENGTH = 4.0
SPHERE_RADIUS = 1.2

COLOR_SCHEMES = {
    # base rgb, stripe tint, ring tint
    "virtual": ((0.78, 0.52, 0.48), (0.14, 0.10, 0.06), (0.06, 0.08, 0.10)),
    "warm": ((0.85, 0.55, 0.30), (0.10, 0.12, 0.05), (0.05, 0.05, 0.10)),
    "cool": ((0.35, 0.55, 0.80), (0.05, 0.10, 0.12), (0.10, 0.06, 0.05)),
}

COLOR_MAPS = {
    "identity": (np.eye(3), np.zeros(3)),
    # darker, redder, lower-contrast "real tissue" look
    "tissue": (np.array([[0.95, 0.20, 0.00],
                         [0.05, 0.60, 0.05],
                         [0.00, 0.10, 0.55]]), np.array([0.05, 0.02, 0.04])),
    "cool": (np.array([[0.60, 0.05, 0.10],
                       [0.05, 0.80, 0.10],
                       [0.10, 0.15, 0.90]]), np.array([0.02, 0.05, 0.10])),
}


@dataclass
class SyntheticSceneSpec:
    layout: str = "tube"
    n_points: int = 200
    color_scheme: str = "virtual"
    trajectory: str = "auto"
    width: int = 128
    height: int = 128
    focal: float = 80.0
    n_train: int = 20
    n_test: int = 5
    seed: int = 0
    sh_degree: int = 0

    def __post_init__(self):
        if self.layout not in ("tube", "sphere"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.color_scheme not in COLOR_SCHEMES:
            raise ValueError(f"unknown color scheme {self.color_scheme!r}")
        if self.n_train + self.n_test < 2:
            raise ValueError("a scene needs at least two camera poses")


@dataclass
class SyntheticScene:
    cloud: GaussianCloud
    cameras: list
    images: list
    depths: list
    splits: list
    spec: SyntheticSceneSpec

    def indices(self, split):
        return [i for i, s in enumerate(self.splits) if s == split]


def _frames_to_quats(frames):
    """(N, 3, 3) local frames (columns) to (w, x, y, z) quaternions."""
    xyzw = Rotation.from_matrix(frames).as_quat()
    return np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)


def _texture(scheme, theta, z):
    base, stripe, ring = (np.asarray(v) for v in COLOR_SCHEMES[scheme])
    col = (base[None] + np.sin(3.0 * theta)[:, None] * stripe[None]
           + np.cos(2.0 * np.pi * z / 1.3)[:, None] * ring[None])
    return np.clip(col, 0.05, 0.95)


def _sunflower_disc(n, radius):
    k = np.arange(n) + 0.5
    r = radius * np.sqrt(k / n)
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    return r * np.cos(phi), r * np.sin(phi)


def _tube_cloud(spec: SyntheticSceneSpec, rng):
    n_cap = max(4, int(round(0.15 * spec.n_points)))
    n_wall = spec.n_points - n_cap
    n_z = max(2, int(round(np.sqrt(n_wall * TUBE_LENGTH / (2 * np.pi * TUBE_RADIUS)))))
    n_theta = max(3, n_wall // n_z)
    n_cap = spec.n_points - n_theta * n_z
    theta = (np.arange(n_theta) + 0.5) * 2 * np.pi / n_theta
    zs = (np.arange(n_z) + 0.5) * TUBE_LENGTH / n_z
    th, zz = np.meshgrid(theta, zs, indexing="ij")
    th, zz = th.ravel(), zz.ravel()
    th = th + rng.uniform(-0.15, 0.15, th.shape) * 2 * np.pi / n_theta
    zz = zz + rng.uniform(-0.15, 0.15, zz.shape) * TUBE_LENGTH / n_z
    wall = np.stack([TUBE_RADIUS * np.cos(th), TUBE_RADIUS * np.sin(th), zz], axis=1)
    tangent = np.stack([-np.sin(th), np.cos(th), np.zeros_like(th)], axis=1)
    axial = np.tile([0.0, 0.0, 1.0], (th.size, 1))
    normal = np.cross(tangent, axial)
    wall_frames = np.stack([tangent, axial, normal], axis=2)
    wall_scale = np.tile([0.6 * 2 * np.pi * TUBE_RADIUS / n_theta, 0.6 * TUBE_LENGTH / n_z, 0.02],
                         (th.size, 1))

    cx, cy = _sunflower_disc(n_cap, 0.95 * TUBE_RADIUS)
    cap = np.stack([cx, cy, np.full(n_cap, TUBE_LENGTH)], axis=1)
    cap_frames = np.tile(np.eye(3), (n_cap, 1, 1))
    spacing = np.sqrt(np.pi * TUBE_RADIUS ** 2 / n_cap)
    cap_scale = np.tile([0.6 * spacing, 0.6 * spacing, 0.02], (n_cap, 1))
    cap_theta = np.arctan2(cy, cx)

    positions = np.concatenate([wall, cap])
    frames = np.concatenate([wall_frames, cap_frames])
    scales = np.concatenate([wall_scale, cap_scale])
    colors = np.concatenate([
        _texture(spec.color_scheme, th, zz),
        _texture(spec.color_scheme, 2.0 * cap_theta, TUBE_LENGTH + np.hypot(cx, cy)),
    ])
    return positions, frames, scales, colors


def _sphere_cloud(spec: SyntheticSceneSpec, rng):
    n = spec.n_points
    k = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n)
    azim = k * np.pi * (3.0 - np.sqrt(5.0))
    normal = np.stack([np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)], axis=1)
    normal += rng.normal(0.0, 0.01, normal.shape)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    helper = np.where(np.abs(normal[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(helper, normal)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normal, t1)
    frames = np.stack([t1, t2, normal], axis=2)
    spacing = np.sqrt(4 * np.pi * SPHERE_RADIUS ** 2 / n)
    scales = np.tile([0.6 * spacing, 0.6 * spacing, 0.02], (n, 1))
    colors = _texture(spec.color_scheme, 2.0 * azim, 2.0 * polar)
    return SPHERE_RADIUS * normal, frames, scales, colors


def synthetic_cloud(spec: SyntheticSceneSpec) -> GaussianCloud:
    rng = np.random.default_rng(spec.seed)
    build = _tube_cloud if spec.layout == "tube" else _sphere_cloud
    positions, frames, scales, colors = build(spec, rng)
    n = positions.shape[0]
    sh = np.zeros((n, num_coeffs(spec.sh_degree), 3))
    sh[:, 0] = rgb_to_dc(colors)
    return GaussianCloud(positions, np.log(scales), _frames_to_quats(frames),
                         np.full(n, float(logit(0.95))), sh, spec.sh_degree)


def synthetic_cameras(spec: SyntheticSceneSpec):
    """Camera poses plus their train/test tags (every fifth pose is held out)."""
    rng = np.random.default_rng(spec.seed + 1)
    n = spec.n_train + spec.n_test
    trajectory = spec.trajectory
    if trajectory == "auto":
        trajectory = "flythrough" if spec.layout == "tube" else "orbit"
    intr = (spec.focal, spec.focal, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0,
            spec.width, spec.height)
    cams = []
    for i in range(n):
        u = i / max(n - 1, 1)
        if trajectory == "flythrough":
            jitter = rng.uniform(-0.25, 0.25, 2)
            eye = np.array([jitter[0], jitter[1], -0.5 + 2.0 * u])
            look = np.array([-0.6 * jitter[0] + rng.uniform(-0.2, 0.2),
                             -0.6 * jitter[1] + rng.uniform(-0.2, 0.2), TUBE_LENGTH])
            up = np.array([0.0, -1.0, 0.0])
        elif trajectory == "orbit":
            angle = 2 * np.pi * u + rng.uniform(-0.05, 0.05)
            elev = 0.35 * np.sin(3 * np.pi * u)
            dist = 3.5
            eye = dist * np.array([np.cos(angle) * np.cos(elev), np.sin(elev), np.sin(angle) * np.cos(elev)])
            look = rng.uniform(-0.05, 0.05, 3)
            up = np.array([0.0, -1.0, 0.0])
        else:
            raise ValueError(f"unknown trajectory {trajectory!r}")
        cams.append(Camera.look_at(eye, look, up, *intr))
    # spread held-out poses evenly through the trajectory
    test_idx = set(np.linspace(2, n - 3, spec.n_test).round().astype(int).tolist()) if spec.n_test else set()
    while len(test_idx) < spec.n_test:
        test_idx.add(max(set(range(n)) - test_idx))
    splits = ["test" if i in test_idx else "train" for i in range(n)]
    return cams, splits


def render_synthetic(spec: SyntheticSceneSpec) -> SyntheticScene:
    """Build the ground-truth cloud and render every pose in memory."""
    cloud = synthetic_cloud(spec)
    cams, splits = synthetic_cameras(spec)
    images, depths = [], []
    for cam in cams:
        state = rasterize(cloud, cam)
        images.append(np.clip(state.image, 0.0, 1.0))
        depths.append(depth_from_state(state))
    return SyntheticScene(cloud, cams, images, depths, splits, spec)


def generate_synthetic(spec: SyntheticSceneSpec, out_dir):
    """Render a synthetic scene to ``out_dir``; returns (ground-truth cloud, manifest path).

    Output is a pure function of ``spec``: PNG views, f32d depth maps,
    ``manifest.json`` and ``gt_cloud.ssgc``.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "depth").mkdir(exist_ok=True)
    scene = render_synthetic(spec)
    image_names, depth_names = [], []
    for i, (img, dep) in enumerate(zip(scene.images, scene.depths)):
        image_names.append(f"images/{i:04d}.png")
        depth_names.append(f"depth/{i:04d}.f32d")
        save_image(out_dir / image_names[-1], img)
        save_depth(out_dir / depth_names[-1], dep)
    save_checkpoint(scene.cloud, out_dir / "gt_cloud.ssgc",
                    {"phase": "ground-truth", "seed": spec.seed, "spec": asdict(spec)})
    manifest = write_manifest(out_dir, scene.cameras, scene.splits, image_names, depth_names)
    return scene.cloud, manifest


def tube_far_wall_distance(camera: Camera):
    """Analytic distance along the optical axis from ``camera`` to the tube's end cap."""
    forward = camera.rotation[:, 2]
    return (TUBE_LENGTH - camera.center[2]) / forward[2]


def apply_color_map(image, matrix, offset):
    image = np.asarray(image, dtype=np.float64)
    return np.clip(image @ np.asarray(matrix).T + np.asarray(offset), 0.0, 1.0)


@dataclass
class RecolorPool:
    pool: list
    heldout: list
    matrix: np.ndarray
    offset: np.ndarray


def recolor_pool(sources, map_id="tissue", heldout=(), size=10) -> RecolorPool:
    """Pseudo real-domain pool: a fixed global color transform applied to renders.

    The pool always has ``size`` images (sources are reused cyclically when
    fewer are given); ``heldout`` renders are mapped the same way to serve as
    ground truth.
    """
    if map_id not in COLOR_MAPS:
        raise ValueError(f"unknown color map {map_id!r}")
    matrix, offset = COLOR_MAPS[map_id]
    sources = list(sources)
    picked = [sources[i % len(sources)] for i in range(size)]
    return RecolorPool(
        [apply_color_map(s, matrix, offset) for s in picked],
        [apply_color_map(h, matrix, offset) for h in heldout],
        matrix.copy(), offset.copy(),
    )
