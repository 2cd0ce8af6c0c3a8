"""Gaussian cloud container, covariance construction, cameras and the parameter partition."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import covariance_scipy
from stylesplat.scene import (Camera, GaussianCloud, axis_angle_quaternion, build_covariance,
                              check_rotation, gaussian_density, partition_views, quaternion_to_rotmat,
                              sigmoid)

quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.2)
scales = st.lists(st.floats(0.01, 3.0), min_size=3, max_size=3)


@given(scales, quats)
def test_covariance_matches_scipy_rotation(s, q):
    q = np.asarray(q)
    np.testing.assert_allclose(build_covariance(np.asarray(s), q),
                               covariance_scipy(s, q / np.linalg.norm(q)), atol=1e-10)


@given(scales, quats)
def test_covariance_is_symmetric_positive_definite(s, q):
    cov = build_covariance(np.asarray(s), np.asarray(q))
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_identity_rotation_gives_diagonal():
    cov = build_covariance(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0, 0, 0]))
    np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 9.0]))


def test_quaternion_scale_invariance(rng):
    q = rng.normal(size=4)
    np.testing.assert_allclose(quaternion_to_rotmat(q), quaternion_to_rotmat(7.5 * q), atol=1e-14)


def test_axis_angle_quaternion_rotates_x_to_y():
    rot = quaternion_to_rotmat(axis_angle_quaternion([0, 0, 1], np.pi / 2))
    np.testing.assert_allclose(rot @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("bad", [np.array([0.0, 1.0, 1.0]), np.array([-1.0, 1.0, 1.0]),
                                 np.array([np.nan, 1.0, 1.0])])
def test_covariance_rejects_invalid_scales(bad):
    with pytest.raises(ValueError):
        build_covariance(bad, np.array([1.0, 0, 0, 0]))


def test_density_peak_and_singular():
    cov = np.diag([1.0, 2.0, 3.0])
    assert gaussian_density(cov, np.zeros(3)) == 1.0
    assert np.isclose(gaussian_density(cov, np.array([1.0, 0, 0])), np.exp(-0.5))
    with pytest.raises(ValueError):
        gaussian_density(np.zeros((3, 3)), np.ones(3))


def test_activations_are_in_range(rng):
    cloud = GaussianCloud.from_points(rng.normal(size=(20, 3)), opacity=0.3)
    cloud.opacity_logits[:] = rng.normal(0, 30, 20)
    cloud.log_scales[:] = rng.normal(0, 5, (20, 3))
    assert np.all((cloud.opacities >= 0) & (cloud.opacities <= 1))
    assert np.all(cloud.scales > 0)
    assert sigmoid(0.0) == 0.5


def test_from_points_sets_colors():
    cloud = GaussianCloud.from_points(np.zeros((2, 3)), colors=[0.3, 0.6, 0.9], sh_degree=1)
    np.testing.assert_allclose(cloud.colors(np.array([0.0, 0.0, -1.0])), [[0.3, 0.6, 0.9]] * 2)


def test_partition_is_disjoint_and_aliases_sh(rng):
    cloud = GaussianCloud.from_points(rng.normal(size=(6, 3)), sh_degree=2)
    before = cloud.structure_bytes()
    part = partition_views(cloud)
    assert part.structure.size == 11 * 6
    assert part.appearance.size == 6 * 9 * 3
    part.appearance[:] = 1.0
    assert np.all(cloud.sh == 1.0)
    assert cloud.structure_bytes() == before
    part.structure[:] = 0.0
    assert cloud.structure_bytes() == before  # a copy until scattered back
    part.scatter_structure()
    assert np.all(cloud.positions == 0.0)
    with pytest.raises(ValueError):
        part.scatter_structure(np.zeros(5))
    with pytest.raises(ValueError):
        part.scatter_appearance(np.zeros(3))


def test_subset_and_copy_are_independent(rng):
    cloud = GaussianCloud.from_points(rng.normal(size=(5, 3)))
    dup = cloud.copy()
    dup.positions[0] = 99.0
    assert cloud.positions[0, 0] != 99.0
    sub = cloud.subset(np.array([True, False, True, False, False]))
    assert len(sub) == 2
    assert len(GaussianCloud.empty()) == 0


def test_validate_flags_nan(rng):
    cloud = GaussianCloud.from_points(rng.normal(size=(3, 3)))
    cloud.validate()
    cloud.sh[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        cloud.validate()


def test_look_at_points_forward_axis_at_target():
    cam = Camera.look_at([1.0, 2.0, 3.0], [1.0, 2.0, 10.0], [0, -1, 0], 50, 50, 15.5, 15.5, 32, 32)
    np.testing.assert_allclose(cam.rotation[:, 2], [0, 0, 1], atol=1e-15)
    w, t = cam.world_to_camera()
    p = w @ np.array([1.0, 2.0, 10.0]) + t
    np.testing.assert_allclose(p, [0, 0, 7], atol=1e-12)
    check_rotation(cam.rotation)


def test_check_rotation_rejects_reflection_and_skew():
    with pytest.raises(ValueError, match="determinant"):
        check_rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        check_rotation(np.array([[1.0, 0.1, 0], [0, 1, 0], [0, 0, 1]]))


def test_scaled_camera_matches_box_downsample_centers():
    cam = Camera(80, 80, 63.5, 63.5, 128, 128)
    half = cam.scaled(0.5)
    assert (half.width, half.height, half.fx) == (64, 64, 40)
    # pixel 0 of the half-res image covers full-res pixels 0 and 1
    assert half.cx == 31.5
