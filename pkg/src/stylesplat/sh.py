"""Real spherical harmonics up to degree 3, with analytic direction derivatives.

Sign convention follows the Gaussian-splatting lineage (``-C1*y, C1*z, -C1*x``
for degree one), so coefficients are interchangeable with that ecosystem.
"""
import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
MAX_DEGREE = 3
COLOR_OFFSET = 0.5


def num_coeffs(degree):
    return (degree + 1) ** 2


def sh_basis(dirs, degree):
    """Evaluate the basis at unit directions.

    Args:
        dirs: (N, 3) unit vectors.
        degree: 0..3.

    Returns:
        (N, (degree+1)**2) array of basis values.
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}], got {degree}")
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out = np.empty((dirs.shape[0], num_coeffs(degree)))
    out[:, 0] = SH_C0
    if degree >= 1:
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = SH_C2[0] * x * y
        out[:, 5] = SH_C2[1] * y * z
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * x * z
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = SH_C3[1] * x * y * z
        out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_jacobian(dirs, degree):
    """Partial derivatives of each basis polynomial w.r.t. (x, y, z).

    The polynomials are differentiated as functions on R^3; callers project
    onto the tangent plane of the sphere.

    Returns:
        (N, (degree+1)**2, 3) array.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = dirs.shape[0]
    jac = np.zeros((n, num_coeffs(degree), 3))
    if degree >= 1:
        jac[:, 1, 1] = -SH_C1
        jac[:, 2, 2] = SH_C1
        jac[:, 3, 0] = -SH_C1
    if degree >= 2:
        jac[:, 4] = SH_C2[0] * np.stack([y, x, np.zeros(n)], axis=1)
        jac[:, 5] = SH_C2[1] * np.stack([np.zeros(n), z, y], axis=1)
        jac[:, 6] = SH_C2[2] * np.stack([-2.0 * x, -2.0 * y, 4.0 * z], axis=1)
        jac[:, 7] = SH_C2[3] * np.stack([z, np.zeros(n), x], axis=1)
        jac[:, 8] = SH_C2[4] * np.stack([2.0 * x, -2.0 * y, np.zeros(n)], axis=1)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        jac[:, 9] = SH_C3[0] * np.stack([6.0 * x * y, 3.0 * xx - 3.0 * yy, np.zeros(n)], axis=1)
        jac[:, 10] = SH_C3[1] * np.stack([y * z, x * z, x * y], axis=1)
        jac[:, 11] = SH_C3[2] * np.stack([-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z], axis=1)
        jac[:, 12] = SH_C3[3] * np.stack([-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy], axis=1)
        jac[:, 13] = SH_C3[4] * np.stack([4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z], axis=1)
        jac[:, 14] = SH_C3[5] * np.stack([2.0 * x * z, -2.0 * y * z, xx - yy], axis=1)
        jac[:, 15] = SH_C3[6] * np.stack([3.0 * xx - 3.0 * yy, -6.0 * x * y, np.zeros(n)], axis=1)
    return jac


def eval_sh_color(coeffs, view_dir, degree):
    """View-dependent RGB of one or many points.

    ``coeffs`` is (K, 3) or flat (3K,) for a single point, or (N, K, 3) for
    many, where K = (degree+1)**2.  The result is ``sum_k c_k Y_k(dir) + 0.5`` clamped at 0.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        if coeffs.size % 3:
            raise ValueError("flat coefficient vector length must be a multiple of 3")
        coeffs = coeffs.reshape(-1, 3)
    single = coeffs.ndim == 2
    if single:
        coeffs = coeffs[None]
    if coeffs.shape[1] != num_coeffs(degree) or coeffs.shape[2] != 3:
        raise ValueError(
            f"expected {num_coeffs(degree)} coefficients per channel for degree {degree}, "
            f"got shape {coeffs.shape[1:]}"
        )
    dirs = np.atleast_2d(np.asarray(view_dir, dtype=np.float64))
    basis = sh_basis(dirs, degree)
    rgb = np.einsum("nk,nkc->nc", basis, coeffs) + COLOR_OFFSET
    rgb = np.maximum(rgb, 0.0)
    return rgb[0] if single else rgb


def rgb_to_dc(rgb):
    """DC coefficient that reproduces ``rgb`` when higher bands are zero."""
    return (np.asarray(rgb, dtype=np.float64) - COLOR_OFFSET) / SH_C0
