"""Spatial types plus the point/line projection, parameterization, and
triangulation math behind all visual residuals.

Frame conventions (fixed repo-wide):
  * ``Pose`` is world-from-body: ``p_w = R_wb @ p_b + t_wb``.
  * The camera extrinsic ``T_bc`` is body-from-camera.
  * Residuals live in normalized image coordinates (pixels divided by
    focal length), so the projection of a camera-frame Plucker line is
    simply its moment vector.

An infinite 3D line is carried either as Plucker coordinates ``(n, d)``
with the constraint ``n . d = 0`` (n is the moment, d the direction), or
in the minimal 4-DoF orthonormal form ``(U, phi)`` where U is a rotation
matrix whose columns are (n_hat, d_hat, n_hat x d_hat) and phi encodes
the relative magnitudes ``(cos phi, sin phi) = (|n|, |d|) / sqrt(|n|^2 + |d|^2)``.
"""

from dataclasses import dataclass

import numpy as np

from .rotations import (
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    skew,
)


class GeometryError(ValueError):
    """Degenerate geometric configuration (zero-length segment, line through
    the optical center, ...)."""


class TriangulationError(GeometryError):
    """Two-view triangulation failed (no parallax / parallel planes)."""


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------

@dataclass
class Pose:
    """World-from-body rigid transform: quaternion [w,x,y,z] + translation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = quat_normalize(np.asarray(self.q, dtype=float))
        self.t = np.asarray(self.t, dtype=float).reshape(3).copy()

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def compose(self, other):
        """self * other (apply other first, then self)."""
        return Pose(quat_mul(self.q, other.q), self.R @ other.t + self.t)

    def inverse(self):
        Rt = self.R.T
        return Pose(quat_conj(self.q), -Rt @ self.t)

    def transform(self, p):
        return self.R @ np.asarray(p, dtype=float) + self.t

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))


@dataclass
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    T_bc: Pose

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def pixel_to_normalized(self, px):
        px = np.asarray(px, dtype=float)
        return np.stack([(px[..., 0] - self.cx) / self.fx,
                         (px[..., 1] - self.cy) / self.fy], axis=-1)

    def normalized_to_pixel(self, xn):
        xn = np.asarray(xn, dtype=float)
        return np.stack([xn[..., 0] * self.fx + self.cx,
                         xn[..., 1] * self.fy + self.cy], axis=-1)


@dataclass
class PluckerLine:
    """Infinite 3D line: moment n = p x d for any point p on the line,
    direction d. Plain container; constructors enforce n . d = 0."""

    n: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float).reshape(3).copy()
        self.d = np.asarray(self.d, dtype=float).reshape(3).copy()

    def constraint_error(self):
        """|n.d| relative to |n||d| (0 for a valid line)."""
        scale = np.linalg.norm(self.n) * np.linalg.norm(self.d)
        if scale == 0.0:
            return 0.0
        return abs(float(np.dot(self.n, self.d))) / scale

    def is_finite_line(self, tol=1e-12):
        return np.linalg.norm(self.d) > tol


@dataclass
class OrthonormalLine:
    """Minimal 4-DoF line: U in SO(3), phi scalar angle."""

    U: np.ndarray
    phi: float

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float).reshape(3, 3).copy()
        self.phi = float(self.phi)

    def orthogonality_error(self):
        return float(np.max(np.abs(self.U.T @ self.U - np.eye(3))))


@dataclass
class Segment2D:
    """2D segment endpoints; unit depends on context (pixels or normalized)."""

    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self):
        self.e1 = np.asarray(self.e1, dtype=float).reshape(2).copy()
        self.e2 = np.asarray(self.e2, dtype=float).reshape(2).copy()

    def length(self):
        return float(np.linalg.norm(self.e2 - self.e1))

    def center(self):
        return 0.5 * (self.e1 + self.e2)

    def direction(self):
        d = self.e2 - self.e1
        n = np.linalg.norm(d)
        if n == 0.0:
            raise GeometryError("degenerate segment")
        return d / n

    def angle(self):
        d = self.e2 - self.e1
        return float(np.arctan2(d[1], d[0]))


@dataclass
class ImageLine:
    """Homogeneous line coefficients in the normalized image plane."""

    l: np.ndarray

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=float).reshape(3).copy()

    def norm2d(self):
        return float(np.hypot(self.l[0], self.l[1]))


# --------------------------------------------------------------------------
# Plucker / orthonormal conversions
# --------------------------------------------------------------------------

def plucker_from_endpoints(p1, p2):
    """Line through two 3D points: d = p2 - p1, n = p1 x p2."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p2 - p1
    if np.linalg.norm(d) <= 1e-9:
        raise GeometryError("endpoints are (nearly) coincident")
    return PluckerLine(np.cross(p1, p2), d)


def _fallback_moment_axis(d_hat):
    # deterministic axis for lines through the origin: take the coordinate
    # axis least aligned with d and orthogonalize
    k = int(np.argmin(np.abs(d_hat)))
    e = np.zeros(3)
    e[k] = 1.0
    u = np.cross(e, d_hat)
    return u / np.linalg.norm(u)


def orthonormal_from_plucker(line):
    """Convert (n, d) to the minimal (U, phi) form.

    |n| = 0 (line through the origin) gets a deterministic fallback basis;
    phi is then exactly pi/2 and the Plucker line is recovered regardless
    of the choice of first column.
    """
    n, d = line.n, line.d
    nn, nd = np.linalg.norm(n), np.linalg.norm(d)
    if nd <= 1e-12:
        raise GeometryError("line has zero direction")
    d_hat = d / nd
    if nn <= 1e-12 * max(nd, 1.0):
        u1 = _fallback_moment_axis(d_hat)
    else:
        u1 = n / nn
    u2 = d_hat
    u3 = np.cross(u1, u2)
    U = np.column_stack([u1, u2, u3])
    phi = float(np.arctan2(nd, nn))
    return OrthonormalLine(U, phi)


def plucker_from_orthonormal(o):
    """Inverse map: n = cos(phi) u1, d = sin(phi) u2 (unit overall scale)."""
    c, s = np.cos(o.phi), np.sin(o.phi)
    return PluckerLine(c * o.U[:, 0], s * o.U[:, 1])


def update_orthonormal(o, dpsi, dphi):
    """Right-multiplicative update U <- U Exp(dpsi), phi <- phi + dphi."""
    R = quat_to_matrix(quat_from_rotvec(np.asarray(dpsi, dtype=float)))
    U = o.U @ R
    # re-orthonormalize if accumulated drift got measurable
    err = np.max(np.abs(U.T @ U - np.eye(3)))
    if err > 1e-10:
        u, _, vt = np.linalg.svd(U)
        U = u @ vt
    return OrthonormalLine(U, o.phi + float(dphi))


# --------------------------------------------------------------------------
# Transforms and projection
# --------------------------------------------------------------------------

def transform_plucker(line, T):
    """Map a Plucker line with rigid transform T (p_dst = R p_src + t):
    d' = R d, n' = R n + t x (R d)."""
    R, t = T.R, T.t
    d2 = R @ line.d
    n2 = R @ line.n + np.cross(t, d2)
    return PluckerLine(n2, d2)


def camera_from_world(pose_wb, T_bc):
    """T_cw from a body pose and the body-from-camera extrinsic."""
    return (pose_wb.compose(T_bc)).inverse()


def project_line(line_c):
    """Camera-frame Plucker line -> normalized-plane homogeneous line.

    The moment vector is the line: a normalized image point (x, y, 1) on
    the projected line satisfies (x, y, 1) . n_c = 0.
    """
    l = ImageLine(line_c.n)
    if l.norm2d() < 1e-12:
        raise GeometryError("line passes through the optical center")
    return l


def point_line_distance(p, l):
    """Signed point-to-line distance in the normalized plane."""
    s = l.norm2d()
    if s < 1e-12:
        raise GeometryError("degenerate image line")
    return float(l.l[0] * p[0] + l.l[1] * p[1] + l.l[2]) / s


# --------------------------------------------------------------------------
# Residuals (scalar reference implementations; the estimator has batched
# equivalents that are cross-checked against these in the tests)
# --------------------------------------------------------------------------

def line_reprojection_residual(o_w, pose_wb, cam, obs, with_jacobians=False):
    """Two-endpoint perpendicular-distance residual of a world line.

    obs: Segment2D in normalized image coordinates.
    Returns r (2,) or (r, J_pose (2,6), J_line (2,4)) with pose columns
    ordered [dp_world, dtheta_local] and line columns [dpsi, dphi].
    """
    line_w = plucker_from_orthonormal(o_w)
    T_cw = camera_from_world(pose_wb, cam.T_bc)
    line_c = transform_plucker(line_w, T_cw)
    l = project_line(line_c)  # raises if degenerate
    r = np.array([point_line_distance(obs.e1, l), point_line_distance(obs.e2, l)])
    if not with_jacobians:
        return r

    # d(dist)/dl for both endpoints
    lv = l.l
    s = np.hypot(lv[0], lv[1])
    D = np.empty((2, 3))
    for i, e in enumerate((obs.e1, obs.e2)):
        val = lv[0] * e[0] + lv[1] * e[1] + lv[2]
        D[i, 0] = e[0] / s - lv[0] * val / s**3
        D[i, 1] = e[1] / s - lv[1] * val / s**3
        D[i, 2] = 1.0 / s
    # l = R_cb n_b + t_cb x (R_cb d_b), with n_b = R_wb^T (n_w - p x d_w)
    R = pose_wb.R
    p = pose_wb.t
    R_cb = cam.T_bc.R.T
    t_cb = -R_cb @ cam.T_bc.t
    tcb_x = skew(t_cb)
    n_w, d_w = line_w.n, line_w.d
    n_b = R.T @ (n_w - np.cross(p, d_w))
    d_b = R.T @ d_w

    dl_dp = R_cb @ R.T @ skew(d_w)
    dl_dth = R_cb @ skew(n_b) + tcb_x @ R_cb @ skew(d_b)
    J_pose = np.hstack([D @ dl_dp, D @ dl_dth])

    U, phi = o_w.U, o_w.phi
    c, sphi = np.cos(phi), np.sin(phi)
    u1, u2, u3 = U[:, 0], U[:, 1], U[:, 2]
    # dn_w/dpsi = -c U [e1]x = c [0, -u3, u2];  dd_w/dpsi = -s U [e2]x = s [u3, 0, -u1]
    dn_dpsi = c * np.column_stack([np.zeros(3), -u3, u2])
    dd_dpsi = sphi * np.column_stack([u3, np.zeros(3), -u1])
    dn_dphi = (-sphi * u1).reshape(3, 1)
    dd_dphi = (c * u2).reshape(3, 1)
    dn_dline = np.hstack([dn_dpsi, dn_dphi])
    dd_dline = np.hstack([dd_dpsi, dd_dphi])
    M = R_cb @ R.T
    dl_dline = M @ (dn_dline - skew(p) @ dd_dline) + tcb_x @ M @ dd_dline
    J_line = D @ dl_dline
    return r, J_pose, J_line


def point_reprojection_residual(inv_depth, host_pose, target_pose, cam,
                                obs_host, obs_target, with_jacobians=False):
    """Inverse-depth point reprojection residual between two frames.

    Back-projects obs_host at depth 1/inv_depth, maps it through the host
    and target body poses, and compares the projection with obs_target in
    normalized coordinates. Raises GeometryError if the point lands behind
    the target camera.
    Jacobian columns: host pose (2,6), target pose (2,6), inv_depth (2,1).
    """
    if inv_depth <= 0:
        raise GeometryError("inverse depth must be positive")
    R_bc, t_bc = cam.T_bc.R, cam.T_bc.t
    Ri, pi = host_pose.R, host_pose.t
    Rj, pj = target_pose.R, target_pose.t

    pc_i = np.array([obs_host[0], obs_host[1], 1.0]) / inv_depth
    pb_i = R_bc @ pc_i + t_bc
    p_w = Ri @ pb_i + pi
    pb_j = Rj.T @ (p_w - pj)
    pc_j = R_bc.T @ (pb_j - t_bc)
    if pc_j[2] <= 1e-9:
        raise GeometryError("point behind target camera")
    r = pc_j[:2] / pc_j[2] - np.asarray(obs_target, dtype=float)
    if not with_jacobians:
        return r

    x, y, z = pc_j
    dproj = np.array([[1 / z, 0, -x / z**2], [0, 1 / z, -y / z**2]])
    dpcj_dpw = R_bc.T @ Rj.T
    J_hp = dproj @ dpcj_dpw                      # d r / d p_i
    J_hth = dproj @ (dpcj_dpw @ (-Ri @ skew(pb_i)))
    J_tp = dproj @ (-R_bc.T @ Rj.T)
    J_tth = dproj @ (R_bc.T @ skew(pb_j))
    dpci_dlam = -pc_i / inv_depth
    J_lam = (dproj @ (dpcj_dpw @ Ri @ R_bc @ dpci_dlam)).reshape(2, 1)
    return r, np.hstack([J_hp, J_hth]), np.hstack([J_tp, J_tth]), J_lam


# --------------------------------------------------------------------------
# Two-view triangulation
# --------------------------------------------------------------------------

def _backprojected_plane(obs, pose_wb, cam):
    """World plane through the camera center and an observed segment."""
    T_wc = pose_wb.compose(cam.T_bc)
    e1h = np.array([obs.e1[0], obs.e1[1], 1.0])
    e2h = np.array([obs.e2[0], obs.e2[1], 1.0])
    m_c = np.cross(e1h, e2h)
    norm = np.linalg.norm(m_c)
    if norm < 1e-12:
        raise GeometryError("observed segment is degenerate")
    m_c /= norm
    m_w = T_wc.R @ m_c
    c_w = T_wc.t
    return np.concatenate([m_w, [-float(np.dot(m_w, c_w))]])


def triangulate_line_two_views(obs_i, pose_i, obs_j, pose_j, cam,
                               min_plane_angle_rad=np.deg2rad(0.5)):
    """Intersect the two back-projected planes via the dual Plucker matrix.

    Raises TriangulationError when the planes are (nearly) parallel, which
    covers both zero baseline and a segment lying on the epipolar plane.
    """
    pi_i = _backprojected_plane(obs_i, pose_i, cam)
    pi_j = _backprojected_plane(obs_j, pose_j, cam)
    m_i, e_i = pi_i[:3], pi_i[3]
    m_j, e_j = pi_j[:3], pi_j[3]
    cross = np.cross(m_i, m_j)
    sin_angle = np.linalg.norm(cross)
    if sin_angle < np.sin(min_plane_angle_rad):
        raise TriangulationError("back-projected planes nearly parallel")
    # dual matrix pi_i pi_j^T - pi_j pi_i^T carries d in the top-left block
    # and n in the last column
    d = np.cross(m_j, m_i)
    n = e_j * m_i - e_i * m_j
    return PluckerLine(n, d)


def triangulate_point_two_views(obs_i, pose_i, obs_j, pose_j, cam,
                                min_parallax_rad=np.deg2rad(1.0)):
    """Linear two-view point triangulation; returns inverse depth in frame i.

    Raises TriangulationError below the parallax threshold or when the
    depth comes out non-positive.
    """
    T_wci = pose_i.compose(cam.T_bc)
    T_wcj = pose_j.compose(cam.T_bc)
    T_ji = T_wcj.inverse().compose(T_wci)  # camera j from camera i
    u_i = np.array([obs_i[0], obs_i[1], 1.0])
    u_j = np.array([obs_j[0], obs_j[1], 1.0])
    r1 = T_ji.R @ u_i
    r1 = r1 / np.linalg.norm(r1)
    r2 = u_j / np.linalg.norm(u_j)
    cosang = np.clip(np.dot(r1, r2), -1.0, 1.0)
    if np.arccos(cosang) < min_parallax_rad:
        raise TriangulationError("insufficient parallax")
    # u_j x (R u_i * z + t) = 0, least squares in z
    A = np.cross(u_j, T_ji.R @ u_i)
    b = -np.cross(u_j, T_ji.t)
    denom = float(np.dot(A, A))
    if denom < 1e-18:
        raise TriangulationError("rays nearly parallel")
    z = float(np.dot(A, b)) / denom
    if z <= 1e-6:
        raise TriangulationError("triangulated depth not positive")
    return 1.0 / z
