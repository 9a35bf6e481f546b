"""Quaternion / SO(3) helper sanity checks (Hamilton convention, w >= 0)."""

import numpy as np

from linevio.rotations import (
    quat_boxminus,
    quat_boxplus,
    quat_conj,
    quat_from_rotvec,
    quat_left,
    quat_mul,
    quat_normalize,
    quat_right,
    quat_rotate,
    quat_to_matrix,
    quat_to_rotvec,
    matrix_to_quat,
    right_jacobian_so3,
    rotvec_to_matrix,
    skew,
)


def _random_quat(rng):
    return quat_normalize(rng.normal(size=4))


def test_mul_identity_and_associativity():
    rng = np.random.default_rng(0)
    e = np.array([1.0, 0, 0, 0])
    for _ in range(50):
        a, b, c = (_random_quat(rng) for _ in range(3))
        np.testing.assert_allclose(quat_mul(a, e), a, atol=1e-15)
        np.testing.assert_allclose(quat_mul(e, a), a, atol=1e-15)
        np.testing.assert_allclose(
            quat_mul(quat_mul(a, b), c), quat_mul(a, quat_mul(b, c)), atol=1e-14
        )


def test_to_matrix_is_rotation_and_homomorphism():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = _random_quat(rng), _random_quat(rng)
        Ra, Rb = quat_to_matrix(a), quat_to_matrix(b)
        np.testing.assert_allclose(Ra.T @ Ra, np.eye(3), atol=1e-13)
        assert np.linalg.det(Ra) > 0
        np.testing.assert_allclose(quat_to_matrix(quat_mul(a, b)), Ra @ Rb, atol=1e-13)


def test_matrix_quat_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(200):
        q = _random_quat(rng)
        q2 = matrix_to_quat(quat_to_matrix(q))
        # same rotation up to the w >= 0 canonical sign
        np.testing.assert_allclose(np.abs(np.dot(q, q2)), 1.0, atol=1e-12)
        assert q2[0] >= 0


def test_rotvec_round_trip_and_small_angles():
    rng = np.random.default_rng(3)
    for _ in range(100):
        v = rng.normal(size=3)
        v *= rng.uniform(0, 3.0) / max(np.linalg.norm(v), 1e-12)
        q = quat_from_rotvec(v)
        np.testing.assert_allclose(quat_to_rotvec(q), v, atol=1e-10)
        np.testing.assert_allclose(rotvec_to_matrix(v), quat_to_matrix(q), atol=1e-12)
    # tiny-angle branch
    v = np.array([1e-12, -2e-12, 5e-13])
    np.testing.assert_allclose(quat_to_rotvec(quat_from_rotvec(v)), v, atol=1e-20)


def test_rotate_matches_matrix_action():
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = _random_quat(rng)
        p = rng.normal(size=3)
        np.testing.assert_allclose(quat_rotate(q, p), quat_to_matrix(q) @ p, atol=1e-12)


def test_left_right_multiplication_matrices():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = _random_quat(rng), _random_quat(rng)
        ab = quat_mul(a, b)
        np.testing.assert_allclose(quat_left(a) @ b, ab, atol=1e-14)
        np.testing.assert_allclose(quat_right(b) @ a, ab, atol=1e-14)


def test_conj_inverts():
    rng = np.random.default_rng(6)
    for _ in range(20):
        q = _random_quat(rng)
        np.testing.assert_allclose(
            quat_mul(q, quat_conj(q)), [1, 0, 0, 0], atol=1e-14
        )


def test_boxplus_boxminus_inverse_pair():
    rng = np.random.default_rng(7)
    for _ in range(100):
        q = _random_quat(rng)
        d = 0.5 * rng.normal(size=3)
        np.testing.assert_allclose(quat_boxminus(quat_boxplus(q, d), q), d, atol=1e-10)


def test_skew_is_cross_product():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-14)
    np.testing.assert_allclose(skew(a).T, -skew(a), atol=0)


def test_right_jacobian_matches_finite_difference():
    # Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)
    rng = np.random.default_rng(9)
    for _ in range(50):
        phi = rng.normal(size=3) * rng.uniform(0, 2.0)
        Jr = right_jacobian_so3(phi)
        num = np.empty((3, 3))
        h = 1e-7
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = h
            dq = quat_mul(quat_conj(quat_from_rotvec(phi)), quat_from_rotvec(phi + dp))
            num[:, k] = quat_to_rotvec(dq) / h
        np.testing.assert_allclose(Jr, num, atol=1e-6)
    # small-angle branch agrees with the closed form near the switch point
    for theta in (1e-8, 2e-7):
        phi = np.array([theta, 0, 0])
        np.testing.assert_allclose(
            right_jacobian_so3(phi), np.eye(3) - 0.5 * skew(phi), atol=1e-12
        )
