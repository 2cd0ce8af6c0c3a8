"""Spherical-harmonic basis, color evaluation and derivatives."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import fibonacci_sphere, sh_basis_scipy, sh_color_scipy
from stylesplat.sh import COLOR_OFFSET, eval_sh_color, num_coeffs, rgb_to_dc, sh_basis, sh_basis_jacobian


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_basis_matches_scipy_real_harmonics(degree):
    dirs = fibonacci_sphere(200)
    np.testing.assert_allclose(sh_basis(dirs, degree), sh_basis_scipy(dirs, degree), atol=1e-12)


def test_basis_is_orthonormal_on_the_sphere():
    dirs = fibonacci_sphere(20000)
    b = sh_basis(dirs, 3)
    gram = 4.0 * np.pi * b.T @ b / dirs.shape[0]
    np.testing.assert_allclose(gram, np.eye(16), atol=2e-3)


def test_num_coeffs():
    assert [num_coeffs(d) for d in range(4)] == [1, 4, 9, 16]


def test_degree_out_of_range():
    with pytest.raises(ValueError):
        sh_basis(np.array([[0.0, 0.0, 1.0]]), 4)


def test_dc_only_color_is_view_independent():
    coeffs = np.zeros((9, 3))
    coeffs[0] = rgb_to_dc(np.array([0.2, 0.4, 0.9]))
    for d in fibonacci_sphere(10):
        np.testing.assert_allclose(eval_sh_color(coeffs, d, 2), [0.2, 0.4, 0.9], atol=1e-12)


def test_color_is_clamped_at_zero():
    coeffs = np.zeros((1, 3))
    coeffs[0] = -10.0
    assert np.all(eval_sh_color(coeffs, np.array([0.0, 0.0, 1.0]), 0) == 0.0)


def test_flat_and_batched_forms_agree(rng):
    coeffs = rng.normal(size=(5, 16, 3))
    dirs = fibonacci_sphere(5)
    batched = eval_sh_color(coeffs, dirs, 3)
    for i in range(5):
        np.testing.assert_allclose(eval_sh_color(coeffs[i].reshape(-1), dirs[i], 3), batched[i], atol=1e-14)
        np.testing.assert_allclose(sh_color_scipy(coeffs[i], dirs[i], 3), batched[i], atol=1e-12)


def test_degree_mismatch_raises():
    with pytest.raises(ValueError):
        eval_sh_color(np.zeros((4, 3)), np.array([0.0, 0.0, 1.0]), 2)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_jacobian_matches_central_differences(v):
    d = np.asarray(v) / np.linalg.norm(v)
    jac = sh_basis_jacobian(d[None], 3)[0]
    h = 1e-6
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd = (sh_basis(d[None] + e, 3)[0] - sh_basis(d[None] - e, 3)[0]) / (2 * h)
        np.testing.assert_allclose(jac[:, axis], fd, atol=1e-7)


def test_rgb_to_dc_roundtrip():
    rgb = np.array([0.1, 0.5, 0.8])
    assert np.allclose(rgb_to_dc(rgb) * 0.28209479177387814 + COLOR_OFFSET, rgb)


def test_antipodal_degree_one_difference():
    c1 = 0.4886025119029199
    coeffs = np.array([[0.3, 0.1, -0.2], [0.05, -0.1, 0.2], [0.1, 0.02, -0.05], [-0.07, 0.12, 0.03]])
    d = np.array([0.36, -0.48, 0.8])
    # direct polynomial: Y1,-1 = -c1 y, Y1,0 = c1 z, Y1,1 = -c1 x
    band1 = -c1 * d[1] * coeffs[1] + c1 * d[2] * coeffs[2] - c1 * d[0] * coeffs[3]
    diff = eval_sh_color(coeffs, d, 1) - eval_sh_color(coeffs, -d, 1)
    np.testing.assert_allclose(diff, 2.0 * band1, atol=1e-15)
