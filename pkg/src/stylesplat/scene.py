"""Gaussian point cloud, camera model and the closed-form geometry kernels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sh import MAX_DEGREE, eval_sh_color, num_coeffs, rgb_to_dc

STRUCTURE_FIELDS = ("positions", "log_scales", "rotations", "opacity_logits")
APPEARANCE_FIELDS = ("sh",)
# per-point widths of the structure fields, in STRUCTURE_FIELDS order
_STRUCTURE_WIDTHS = (3, 3, 4, 1)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def quaternion_to_rotmat(q):
    """Rotation matrices from (w, x, y, z) quaternions; input is normalized first.

    Accepts shape (4,) or (N, 4) and returns (3, 3) or (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3))
    rot[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    rot[:, 0, 1] = 2.0 * (x * y - w * z)
    rot[:, 0, 2] = 2.0 * (x * z + w * y)
    rot[:, 1, 0] = 2.0 * (x * y + w * z)
    rot[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    rot[:, 1, 2] = 2.0 * (y * z - w * x)
    rot[:, 2, 0] = 2.0 * (x * z - w * y)
    rot[:, 2, 1] = 2.0 * (y * z + w * x)
    rot[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return rot[0] if single else rot


def axis_angle_quaternion(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def build_covariance(scales, q):
    """Covariance ``R S S^T R^T`` from activated scales and a quaternion.

    Works on a single point ((3,), (4,)) or batched ((N, 3), (N, 4)).
    """
    scales = np.asarray(scales, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _require_finite(scales, q)
    if np.any(scales <= 0):
        raise ValueError("scales must be positive")
    rot = quaternion_to_rotmat(q)
    m = rot * scales[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def gaussian_density(cov, offset):
    """Unnormalized density ``exp(-0.5 x^T cov^-1 x)``; raises on singular ``cov``."""
    cov = np.asarray(cov, dtype=np.float64)
    offset = np.asarray(offset, dtype=np.float64)
    _require_finite(cov, offset)
    try:
        sol = np.linalg.solve(cov, offset)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is singular") from exc
    return float(np.exp(-0.5 * offset @ sol))


@dataclass
class GaussianPoint:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))


@dataclass
class GaussianCloud:
    """Struct-of-arrays Gaussian scene.

    Stored (pre-activation) parameters: ``positions`` (N, 3), ``log_scales``
    (N, 3), ``rotations`` (N, 4) as (w, x, y, z), ``opacity_logits`` (N,),
    ``sh`` (N, (L+1)^2, 3).
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    sh_degree: int = 2
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).reshape(n)
        if not 0 <= self.sh_degree <= MAX_DEGREE:
            raise ValueError(f"sh_degree must be in [0, {MAX_DEGREE}]")
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64)
        if self.sh.shape != (n, num_coeffs(self.sh_degree), 3):
            raise ValueError(
                f"sh must have shape {(n, num_coeffs(self.sh_degree), 3)}, got {self.sh.shape}"
            )
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3).copy()

    @classmethod
    def empty(cls, sh_degree=2, background=(0.0, 0.0, 0.0)):
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
            np.zeros((0, num_coeffs(sh_degree), 3)), sh_degree, np.asarray(background, float),
        )

    @classmethod
    def from_points(cls, positions, colors=None, scale=0.05, opacity=0.5, sh_degree=2,
                    background=(0.0, 0.0, 0.0), rotations=None):
        """Isotropic cloud seeded at ``positions`` with DC color ``colors``."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (n, 3)) if np.ndim(scale) < 2 \
            else np.asarray(scale, dtype=np.float64)
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        sh = np.zeros((n, num_coeffs(sh_degree), 3))
        if colors is not None:
            sh[:, 0, :] = rgb_to_dc(np.broadcast_to(colors, (n, 3)))
        return cls(
            positions, np.log(scale), rotations,
            np.broadcast_to(logit(opacity), (n,)).copy(), sh, sh_degree,
            np.asarray(background, dtype=np.float64),
        )

    def __len__(self):
        return self.positions.shape[0]

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    def covariances(self):
        return build_covariance(self.scales, self.rotations)

    def point(self, i):
        return GaussianPoint(
            self.positions[i].copy(), self.log_scales[i].copy(), self.rotations[i].copy(),
            float(self.opacity_logits[i]), self.sh[i].reshape(-1).copy(),
        )

    @property
    def points(self):
        return [self.point(i) for i in range(len(self))]

    def colors(self, camera_center):
        dirs = self.positions - np.asarray(camera_center, dtype=np.float64)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return eval_sh_color(self.sh, dirs, self.sh_degree)

    def copy(self):
        return GaussianCloud(
            self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
            self.opacity_logits.copy(), self.sh.copy(), self.sh_degree, self.background.copy(),
        )

    def subset(self, keep):
        keep = np.asarray(keep)
        return GaussianCloud(
            self.positions[keep], self.log_scales[keep], self.rotations[keep],
            self.opacity_logits[keep], self.sh[keep], self.sh_degree, self.background.copy(),
        )

    def structure_bytes(self):
        """Canonical byte serialization of the frozen (structure) parameters."""
        return b"".join(
            np.ascontiguousarray(getattr(self, name), dtype="<f8").tobytes()
            for name in STRUCTURE_FIELDS
        )

    def validate(self):
        arrays = [getattr(self, f) for f in STRUCTURE_FIELDS + APPEARANCE_FIELDS]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise FloatingPointError("non-finite Gaussian parameters")


@dataclass
class ParameterPartition:
    """Disjoint structure / appearance views over a cloud.

    ``appearance`` aliases ``cloud.sh`` directly, so in-place writes reach the
    cloud and can never touch a structure field.  ``structure`` is a flat copy;
    write it back with :meth:`scatter_structure`.
    """

    cloud: GaussianCloud
    structure: np.ndarray
    appearance: np.ndarray
    structure_index: dict
    appearance_index: dict

    def scatter_structure(self, flat=None):
        flat = self.structure if flat is None else np.asarray(flat, dtype=np.float64)
        if flat.shape != (11 * len(self.cloud),):
            raise ValueError("structure vector has wrong length")
        for name, sl in self.structure_index.items():
            target = getattr(self.cloud, name)
            target[...] = flat[sl].reshape(target.shape)

    def scatter_appearance(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.appearance.shape:
            raise ValueError("appearance vector has wrong length")
        self.appearance[...] = flat


def partition_views(cloud: GaussianCloud) -> ParameterPartition:
    """Split the cloud's optimizable parameters into structure and appearance vectors.

    The structure layout is field-major: all positions, then log-scales,
    rotations, opacity logits.
    """
    n = len(cloud)
    index, parts, offset = {}, [], 0
    for name, width in zip(STRUCTURE_FIELDS, _STRUCTURE_WIDTHS):
        index[name] = slice(offset, offset + n * width)
        parts.append(getattr(cloud, name).reshape(-1))
        offset += n * width
    structure = np.concatenate(parts) if parts else np.zeros(0)
    appearance = cloud.sh.reshape(-1)
    if not np.shares_memory(appearance, cloud.sh) and appearance.size:
        raise RuntimeError("appearance view must alias the SH array")
    return ParameterPartition(cloud, structure, appearance, index, {"sh": slice(0, appearance.size)})


@dataclass
class Camera:
    """Pinhole camera; pose is camera-to-world with +z forward and +y down."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        check_rotation(self.rotation)

    @classmethod
    def from_c2w(cls, c2w, fx, fy, cx, cy, width, height):
        c2w = np.asarray(c2w, dtype=np.float64).reshape(4, 4)
        return cls(fx, fy, cx, cy, width, height, c2w[:3, :3], c2w[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, cx, cy, width, height):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        # image +y points down, so the camera's y axis is -up projected
        down = -np.asarray(up, dtype=np.float64)
        right = np.cross(down, forward)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward], axis=1)
        return cls(fx, fy, cx, cy, width, height, rot, eye)

    @property
    def center(self):
        return self.translation

    def c2w(self):
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def world_to_camera(self):
        """(W, t) such that ``p_cam = W @ p_world + t``."""
        w = self.rotation.T
        return w, -w @ self.translation

    def scaled(self, factor):
        """Same pose with resolution and intrinsics multiplied by ``factor``.

        Pixel centers sit at integer coordinates, so the principal point maps as
        ``(c + 0.5) * factor - 0.5`` (a 2x box downsample lines up exactly).
        """
        return Camera(
            self.fx * factor, self.fy * factor,
            (self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)), int(round(self.height * factor)),
            self.rotation, self.translation,
        )


def check_rotation(rot, tol=1e-6):
    rot = np.asarray(rot, dtype=np.float64)
    if not np.all(np.isfinite(rot)):
        raise ValueError("pose rotation is not finite")
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > tol:
        raise ValueError("pose rotation is not orthonormal")
    if np.linalg.det(rot) < 0:
        raise ValueError("pose rotation has determinant -1 (reflection)")
