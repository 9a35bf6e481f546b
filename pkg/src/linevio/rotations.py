"""Quaternion and SO(3) helpers shared by the whole package.

Conventions (used everywhere, asserted in tests):
  * Quaternions are Hamilton, stored as ``[w, x, y, z]`` with unit norm.
  * ``quat_to_matrix(q)`` returns the passive rotation R such that
    ``R @ v_body = v_world`` when q is a world-from-body attitude.
  * Local (right) perturbations: ``q_new = q * quat_from_small(dtheta)``
    with dtheta a small rotation vector in the body frame.
"""

import numpy as np


def skew(v):
    """3x3 cross-product matrix: skew(a) @ b == cross(a, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_identity():
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_mul(a, b):
    """Hamilton product a*b."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    # keep w >= 0 so log/residual maps stay in the principal branch
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
            q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                          (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2
            q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                          0.25 * s, (R[1, 2] + R[2, 1]) / s])
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2
            q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                          (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


def quat_from_rotvec(phi):
    """Exponential map: rotation vector (rad) -> unit quaternion."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        q = np.concatenate([[1.0], 0.5 * phi])
        return q / np.linalg.norm(q)
    axis = phi / angle
    return np.concatenate([[np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis])


def quat_to_rotvec(q):
    """Logarithm map: unit quaternion -> rotation vector (rad)."""
    q = quat_normalize(q)
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * v / s


def rotvec_to_matrix(phi):
    return quat_to_matrix(quat_from_rotvec(phi))


def quat_rotate(q, v):
    """Rotate vector v by quaternion q (same as quat_to_matrix(q) @ v)."""
    return quat_to_matrix(q) @ v


def quat_left(q):
    """4x4 matrix L such that L @ p == q * p."""
    w, x, y, z = q
    v = np.array([x, y, z])
    L = np.empty((4, 4))
    L[0, 0] = w
    L[0, 1:] = -v
    L[1:, 0] = v
    L[1:, 1:] = w * np.eye(3) + skew(v)
    return L


def quat_right(q):
    """4x4 matrix R such that R @ p == p * q."""
    w, x, y, z = q
    v = np.array([x, y, z])
    R = np.empty((4, 4))
    R[0, 0] = w
    R[0, 1:] = -v
    R[1:, 0] = v
    R[1:, 1:] = w * np.eye(3) - skew(v)
    return R


def right_jacobian_so3(phi):
    """Right Jacobian Jr of SO(3): Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    W = skew(phi)
    if theta < 1e-4:
        # series: closed form below loses digits to 1 - cos(theta)
        return np.eye(3) - 0.5 * W + W @ W / 6.0
    return (np.eye(3)
            - (1 - np.cos(theta)) / theta**2 * W
            + (theta - np.sin(theta)) / theta**3 * (W @ W))


def quat_small(dtheta):
    """First-order perturbation quaternion (1, dtheta/2), normalized."""
    q = np.concatenate([[1.0], 0.5 * np.asarray(dtheta, dtype=float)])
    return q / np.linalg.norm(q)


def quat_boxplus(q, dtheta):
    """Right-perturbed quaternion q * Exp(dtheta)."""
    return quat_normalize(quat_mul(q, quat_from_rotvec(dtheta)))


def quat_boxminus(q, q0):
    """Local difference: rotation vector d with q == q0 * Exp(d)."""
    return quat_to_rotvec(quat_mul(quat_conj(q0), q))
