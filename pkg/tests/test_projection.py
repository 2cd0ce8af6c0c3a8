"""EWA projection: means, 2D covariances, conics, culling."""
import numpy as np
import pytest

from oracles import cofactor_inverse_2x2, covariance_scipy
from stylesplat.projection import COV2D_REGULARIZER, JACOBIAN_FOV_CLAMP, NEAR_PLANE, project
from stylesplat.scene import Camera, GaussianCloud


def _cloud(rng, n=10, zmin=2.0, zmax=6.0, spread=0.8):
    pos = np.column_stack([rng.uniform(-spread, spread, (n, 2)), rng.uniform(zmin, zmax, n)])
    cloud = GaussianCloud.from_points(pos, sh_degree=1)
    cloud.log_scales[:] = np.log(rng.uniform(0.05, 0.3, (n, 3)))
    cloud.rotations[:] = rng.normal(size=(n, 4))
    return cloud


CAM = Camera(40.0, 44.0, 15.5, 16.0, 32, 32)


def _pinhole(cam, p):
    return np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])


def test_means_and_depths(rng):
    cloud = _cloud(rng)
    proj = project(cloud, CAM)
    for k, i in enumerate(proj.index):
        np.testing.assert_allclose(proj.means2d[k], _pinhole(CAM, cloud.positions[i]), atol=1e-12)
        assert proj.depths[k] == cloud.positions[i, 2]


def test_cov2d_is_linearization_of_pinhole_map(rng):
    """J from central differences of the projection, then J W S W^T J^T + reg."""
    cloud = _cloud(rng, spread=0.5)
    proj = project(cloud, CAM)
    h = 1e-6
    for k, i in enumerate(proj.index):
        p = cloud.positions[i]
        jac = np.column_stack([(_pinhole(CAM, p + h * e) - _pinhole(CAM, p - h * e)) / (2 * h)
                               for e in np.eye(3)])
        cov3 = covariance_scipy(np.exp(cloud.log_scales[i]), cloud.rotations[i] / np.linalg.norm(cloud.rotations[i]))
        expect = jac @ cov3 @ jac.T + COV2D_REGULARIZER * np.eye(2)
        np.testing.assert_allclose(proj.cov2d[k], expect, rtol=1e-6, atol=1e-8)


def test_conic_is_cofactor_inverse(rng):
    proj = project(_cloud(rng), CAM)
    for k in range(len(proj)):
        inv = cofactor_inverse_2x2(proj.cov2d[k])
        np.testing.assert_allclose(proj.conics[k], [inv[0, 0], inv[0, 1], inv[1, 1]], rtol=1e-12)


def test_radius_is_three_sigma(rng):
    proj = project(_cloud(rng), CAM)
    lam = np.linalg.eigvalsh(proj.cov2d)[:, -1]
    np.testing.assert_allclose(proj.radii, 3.0 * np.sqrt(lam), rtol=1e-12)


def test_near_plane_and_behind_camera_are_culled():
    cloud = GaussianCloud.from_points(np.array([[0, 0, -1.0], [0, 0, NEAR_PLANE], [0, 0, 0.5], [0, 0, 3.0]]))
    proj = project(cloud, CAM)
    assert proj.index.tolist() == [2, 3]


def test_guard_band_culls_far_off_axis_points():
    lim = JACOBIAN_FOV_CLAMP * 0.5 * CAM.width / CAM.fx
    z = 2.0
    cloud = GaussianCloud.from_points(np.array([[0.99 * lim * z, 0, z], [1.01 * lim * z, 0, z]]), scale=1.0)
    assert project(cloud, CAM).index.tolist() == [0]


def test_offscreen_footprint_is_culled():
    cloud = GaussianCloud.from_points(np.array([[0.0, 0.0, 3.0], [0.5 * 3.0 * 0.99 * 32 / 40 * 1.3, 0, 3.0]]),
                                      scale=0.001)
    proj = project(cloud, CAM)
    assert proj.index.tolist() == [0]


def test_empty_cloud():
    proj = project(GaussianCloud.empty(), CAM)
    assert len(proj) == 0


def test_camera_pose_is_applied(rng):
    cloud = _cloud(rng)
    yaw = np.array([[0, 0, 1.0], [0, 1, 0], [-1.0, 0, 0]])  # camera looks along world +x
    cam = Camera(40.0, 44.0, 15.5, 16.0, 32, 32, yaw, np.array([-3.0, 0.0, 4.0]))
    proj = project(cloud, cam)
    for k, i in enumerate(proj.index):
        p_cam = yaw.T @ (cloud.positions[i] - cam.translation)
        np.testing.assert_allclose(proj.means2d[k], _pinhole(cam, p_cam), atol=1e-12)


def test_isotropic_footprint_is_diagonal():
    sigma, depth = 0.05, 4.0
    cloud = GaussianCloud.from_points(np.array([[0.0, 0.0, depth]]), sh_degree=0)
    cloud.log_scales[:] = np.log(sigma)
    proj = project(cloud, CAM)
    expect = np.diag([(CAM.fx * sigma / depth) ** 2, (CAM.fy * sigma / depth) ** 2]) + COV2D_REGULARIZER * np.eye(2)
    np.testing.assert_allclose(proj.cov2d[0], expect, atol=1e-12)
