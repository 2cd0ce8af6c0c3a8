"""Perspective projection of 3D Gaussians to pixel-space splats (local affine / EWA).

The forward pass keeps the intermediates the backward pass needs, so
:func:`project_backward` is a pure function of a :class:`Projection` and the
per-splat gradients produced by the compositing kernels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Camera, GaussianCloud, quaternion_to_rotmat, sigmoid
from .sh import COLOR_OFFSET, num_coeffs, sh_basis, sh_basis_jacobian

NEAR_PLANE = 0.2
COV2D_REGULARIZER = 0.3
SIGMA_CUTOFF = 3.0
# the affine Jacobian is evaluated with x/z, y/z clamped to this multiple of the half-FOV
JACOBIAN_FOV_CLAMP = 1.3


@dataclass
class Projection:
    """Visible splats of one view, in cloud order (not yet depth sorted).

    ``index`` maps each splat back to its cloud point.
    """

    index: np.ndarray
    means2d: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray
    depths: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    radii: np.ndarray
    # saved for the backward pass
    t_cam: np.ndarray
    jw: np.ndarray
    cov3d: np.ndarray
    rotmats: np.ndarray
    scales: np.ndarray
    dirs: np.ndarray
    dir_norms: np.ndarray
    basis: np.ndarray
    color_active: np.ndarray
    world_to_cam: np.ndarray

    def __len__(self):
        return self.index.shape[0]


def project(cloud: GaussianCloud, camera: Camera, near=NEAR_PLANE) -> Projection:
    """Project every point of ``cloud`` into ``camera``, culling invisible ones.

    A point is culled when its camera-space depth is at or below ``near``,
    when its center lies outside the guard band (``JACOBIAN_FOV_CLAMP`` times
    the half field of view) or when the 3-sigma bounding box of its 2D
    footprint misses the image.
    """
    w2c, t_w2c = camera.world_to_camera()
    pos = cloud.positions
    t_all = pos @ w2c.T + t_w2c
    keep = t_all[:, 2] > near
    idx = np.nonzero(keep)[0]
    t = t_all[idx]
    scales = np.exp(cloud.log_scales[idx])
    rot = quaternion_to_rotmat(cloud.rotations[idx]) if idx.size else np.zeros((0, 3, 3))
    m = rot * scales[:, None, :]
    cov3d = m @ np.swapaxes(m, 1, 2)

    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    inv_z = 1.0 / tz
    ux, uy, free_x, free_y = _clamped_slopes(camera, tx, ty, inv_z)
    jac = np.zeros((idx.size, 2, 3))
    jac[:, 0, 0] = camera.fx * inv_z
    jac[:, 0, 2] = -camera.fx * ux * inv_z
    jac[:, 1, 1] = camera.fy * inv_z
    jac[:, 1, 2] = -camera.fy * uy * inv_z
    jw = jac @ w2c
    cov2d = jw @ cov3d @ np.swapaxes(jw, 1, 2)
    cov2d[:, 0, 0] += COV2D_REGULARIZER
    cov2d[:, 1, 1] += COV2D_REGULARIZER

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = SIGMA_CUTOFF * np.sqrt(lam_max)
    means2d = np.stack([camera.fx * tx * inv_z + camera.cx, camera.fy * ty * inv_z + camera.cy], axis=1)

    on_screen = (
        (means2d[:, 0] + radii >= 0.0) & (means2d[:, 0] - radii <= camera.width - 1)
        & (means2d[:, 1] + radii >= 0.0) & (means2d[:, 1] - radii <= camera.height - 1)
        & (det > 0) & free_x & free_y
    )
    sel = np.nonzero(on_screen)[0]

    idx = idx[sel]
    dirs = pos[idx] - camera.center
    dir_norms = np.linalg.norm(dirs, axis=1)
    dirs = dirs / dir_norms[:, None]
    basis = sh_basis(dirs, cloud.sh_degree)
    raw = np.einsum("nk,nkc->nc", basis, cloud.sh[idx]) + COLOR_OFFSET
    colors = np.maximum(raw, 0.0)

    return Projection(
        index=idx,
        means2d=np.ascontiguousarray(means2d[sel]),
        cov2d=cov2d[sel],
        conics=np.ascontiguousarray(conics[sel]),
        depths=np.ascontiguousarray(tz[sel]),
        colors=np.ascontiguousarray(colors),
        opacities=np.ascontiguousarray(sigmoid(cloud.opacity_logits[idx])),
        radii=radii[sel],
        t_cam=t[sel],
        jw=jw[sel],
        cov3d=cov3d[sel],
        rotmats=rot[sel],
        scales=scales[sel],
        dirs=dirs,
        dir_norms=dir_norms,
        basis=basis,
        color_active=raw > 0.0,
        world_to_cam=w2c,
    )


def _clamped_slopes(camera, tx, ty, inv_z):
    lim_x = JACOBIAN_FOV_CLAMP * 0.5 * camera.width / camera.fx
    lim_y = JACOBIAN_FOV_CLAMP * 0.5 * camera.height / camera.fy
    ux, uy = tx * inv_z, ty * inv_z
    free_x = np.abs(ux) <= lim_x
    free_y = np.abs(uy) <= lim_y
    return np.clip(ux, -lim_x, lim_x), np.clip(uy, -lim_y, lim_y), free_x, free_y


def _quat_normalized_grad(q, d_rot):
    """Gradient w.r.t. raw quaternions given dL/dR, through the normalization."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = d_rot
    dw = 2.0 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2]
                - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2.0 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2.0 * x * g[:, 1, 1]
                - w * g[:, 1, 2] + z * g[:, 2, 0] + w * g[:, 2, 1] - 2.0 * x * g[:, 2, 2])
    dy = 2.0 * (-2.0 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0]
                + z * g[:, 1, 2] - w * g[:, 2, 0] + z * g[:, 2, 1] - 2.0 * y * g[:, 2, 2])
    dz = 2.0 * (-2.0 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0]
                - 2.0 * z * g[:, 1, 1] + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    dqn = np.stack([dw, dx, dy, dz], axis=1)
    return (dqn - qn * np.sum(qn * dqn, axis=1, keepdims=True)) / norm


def project_backward(cloud: GaussianCloud, camera: Camera, proj: Projection,
                     d_means2d, d_conics, d_colors, d_opacities):
    """Chain per-splat gradients back to the stored cloud parameters.

    Returns a dict of arrays shaped like the cloud fields; culled points get
    exact zeros.
    """
    n = len(cloud)
    out = {
        "positions": np.zeros((n, 3)),
        "log_scales": np.zeros((n, 3)),
        "rotations": np.zeros((n, 4)),
        "opacity_logits": np.zeros(n),
        "sh": np.zeros((n, num_coeffs(cloud.sh_degree), 3)),
    }
    if len(proj) == 0:
        return out
    idx = proj.index
    w2c = proj.world_to_cam

    # color -> SH coefficients and view direction
    d_col = np.where(proj.color_active, d_colors, 0.0)
    out["sh"][idx] = proj.basis[:, :, None] * d_col[:, None, :]
    jac = sh_basis_jacobian(proj.dirs, cloud.sh_degree)
    coeff_col = np.einsum("nkc,nc->nk", cloud.sh[idx], d_col)
    d_dir = np.einsum("nk,nkj->nj", coeff_col, jac)
    d_dir -= proj.dirs * np.sum(proj.dirs * d_dir, axis=1, keepdims=True)
    d_pos = d_dir / proj.dir_norms[:, None]

    # opacity activation
    op = proj.opacities
    out["opacity_logits"][idx] = d_opacities * op * (1.0 - op)

    # conic -> 2D covariance
    conic_mat = np.empty((len(proj), 2, 2))
    conic_mat[:, 0, 0] = proj.conics[:, 0]
    conic_mat[:, 0, 1] = conic_mat[:, 1, 0] = proj.conics[:, 1]
    conic_mat[:, 1, 1] = proj.conics[:, 2]
    g_conic = np.empty_like(conic_mat)
    g_conic[:, 0, 0] = d_conics[:, 0]
    g_conic[:, 0, 1] = g_conic[:, 1, 0] = 0.5 * d_conics[:, 1]
    g_conic[:, 1, 1] = d_conics[:, 2]
    d_cov2d = -conic_mat @ g_conic @ conic_mat

    # 2D covariance -> 3D covariance and the projection Jacobian
    jw = proj.jw
    d_cov3d = np.swapaxes(jw, 1, 2) @ d_cov2d @ jw
    d_jw = 2.0 * d_cov2d @ jw @ proj.cov3d
    d_jac = d_jw @ w2c.T

    tx, ty, tz = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    fx, fy = camera.fx, camera.fy
    iz = 1.0 / tz
    iz2 = iz * iz
    ux, uy, free_x, free_y = _clamped_slopes(camera, tx, ty, iz)
    # J02 = -fx * ux / tz with ux = tx / tz unless clamped (then constant)
    dux = d_jac[:, 0, 2] * (-fx * iz)
    duy = d_jac[:, 1, 2] * (-fy * iz)
    d_t = np.zeros((len(proj), 3))
    d_t[:, 0] = np.where(free_x, dux * iz, 0.0) + d_means2d[:, 0] * fx * iz
    d_t[:, 1] = np.where(free_y, duy * iz, 0.0) + d_means2d[:, 1] * fy * iz
    d_t[:, 2] = (
        d_jac[:, 0, 0] * (-fx * iz2) + d_jac[:, 0, 2] * (fx * ux * iz2)
        + d_jac[:, 1, 1] * (-fy * iz2) + d_jac[:, 1, 2] * (fy * uy * iz2)
        - np.where(free_x, dux * tx * iz2, 0.0) - np.where(free_y, duy * ty * iz2, 0.0)
        - d_means2d[:, 0] * fx * tx * iz2 - d_means2d[:, 1] * fy * ty * iz2
    )
    d_pos += d_t @ w2c
    out["positions"][idx] = d_pos

    # 3D covariance -> scale and rotation
    m = proj.rotmats * proj.scales[:, None, :]
    d_m = 2.0 * d_cov3d @ m
    d_scales = np.sum(d_m * proj.rotmats, axis=1)
    out["log_scales"][idx] = d_scales * proj.scales
    d_rot = d_m * proj.scales[:, None, :]
    out["rotations"][idx] = _quat_normalized_grad(cloud.rotations[idx], d_rot)
    return out
