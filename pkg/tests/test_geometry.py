"""Line/point geometry: Plucker algebra, orthonormal parameterization,
projection, residuals (analytic Jacobians vs central finite differences),
and two-view triangulation.
"""

import numpy as np
import pytest

from linevio.geometry import (
    GeometryError,
    ImageLine,
    OrthonormalLine,
    PinholeCamera,
    PluckerLine,
    Pose,
    Segment2D,
    TriangulationError,
    camera_from_world,
    line_reprojection_residual,
    orthonormal_from_plucker,
    plucker_from_endpoints,
    plucker_from_orthonormal,
    point_line_distance,
    point_reprojection_residual,
    project_line,
    transform_plucker,
    triangulate_line_two_views,
    triangulate_point_two_views,
    update_orthonormal,
)
from linevio.rotations import (
    matrix_to_quat,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
)

# camera with a deliberately non-trivial extrinsic (optical axis = body x)
R_BC = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
T_BC = Pose(matrix_to_quat(R_BC), np.array([0.1, 0.0, 0.05]))
CAM = PinholeCamera(460.0, 460.0, 320.0, 240.0, 640, 480, T_BC)
CAM_IDENT = PinholeCamera(460.0, 460.0, 320.0, 240.0, 640, 480, Pose.identity())


def _random_pose(rng, tscale=2.0):
    return Pose(quat_normalize(rng.normal(size=4)), tscale * rng.normal(size=3))


def _perturb_pose(pose, dx):
    dx = np.asarray(dx, dtype=float)
    return Pose(quat_mul(pose.q, quat_from_rotvec(dx[3:6])), pose.t + dx[:3])


def _project_point(pose_wb, cam, p_w):
    """Normalized-plane projection of a world point (test-local oracle)."""
    p_c = camera_from_world(pose_wb, cam.T_bc).transform(p_w)
    if p_c[2] <= 0:
        raise GeometryError("behind camera")
    return p_c[:2] / p_c[2]


def _fd_matches(J, J_num, tol=1e-5):
    scale = max(1.0, float(np.abs(J).max()))
    return float(np.abs(J - J_num).max()) <= tol * scale


# --------------------------------------------------------------------------
# Plucker construction / conversions
# --------------------------------------------------------------------------


def test_plucker_from_endpoints_examples():
    L = plucker_from_endpoints([1, 0, 5], [-1, 0, 5])
    np.testing.assert_allclose(L.d, [-2, 0, 0], atol=0)
    np.testing.assert_allclose(L.n, [0, -10, 0], atol=0)

    L0 = plucker_from_endpoints([0, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(L0.n, 0, atol=0)
    np.testing.assert_allclose(L0.d, [0, 0, 1], atol=0)

    with pytest.raises(GeometryError):
        plucker_from_endpoints([1, 2, 3], [1, 2, 3 + 1e-11])


def test_plucker_constraint_random():
    rng = np.random.default_rng(10)
    for _ in range(200):
        L = plucker_from_endpoints(rng.normal(size=3) * 4, rng.normal(size=3) * 4)
        assert L.constraint_error() < 1e-12


def test_orthonormal_from_plucker_example():
    # |n| = 10, |d| = 2 -> cos phi = 10/sqrt(104), sin phi = 2/sqrt(104)
    o = orthonormal_from_plucker(PluckerLine([0, -10, 0], [-2, 0, 0]))
    np.testing.assert_allclose(np.cos(o.phi), 10 / np.sqrt(104), rtol=1e-14)
    np.testing.assert_allclose(np.sin(o.phi), 2 / np.sqrt(104), rtol=1e-14)
    np.testing.assert_allclose(o.U[:, 0], [0, -1, 0], atol=1e-15)
    np.testing.assert_allclose(o.U[:, 1], [-1, 0, 0], atol=1e-15)
    assert o.orthogonality_error() < 1e-14


def test_plucker_from_orthonormal_identity_example():
    o = OrthonormalLine(np.eye(3), np.pi / 4)
    L = plucker_from_orthonormal(o)
    s = np.sqrt(2) / 2
    np.testing.assert_allclose(L.n, [s, 0, 0], rtol=1e-15)
    np.testing.assert_allclose(L.d, [0, s, 0], rtol=1e-15)
    assert L.constraint_error() < 1e-12

    # phi = 0 means zero direction: flagged as not a finite line
    degenerate = plucker_from_orthonormal(OrthonormalLine(np.eye(3), 0.0))
    assert not degenerate.is_finite_line()


def test_orthonormal_round_trip_random():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        L = plucker_from_endpoints(rng.normal(size=3) * 3, rng.normal(size=3) * 3)
        L2 = plucker_from_orthonormal(orthonormal_from_plucker(L))
        assert L2.constraint_error() < 1e-12
        # same line up to positive scale: unit n and d agree (sine-based
        # angle; arccos of a dot product can't resolve 1e-9)
        for a, b in ((L.n, L2.n), (L.d, L2.d)):
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            assert np.dot(a, b) > 0
            assert np.linalg.norm(np.cross(a, b)) / (na * nb) < 1e-9
        # relative magnitude of n vs d is preserved too
        r1 = np.linalg.norm(L.n) / np.linalg.norm(L.d)
        r2 = np.linalg.norm(L2.n) / np.linalg.norm(L2.d)
        np.testing.assert_allclose(r1, r2, rtol=1e-9, atol=1e-12)


def test_orthonormal_fallback_for_line_through_origin():
    L = PluckerLine([0, 0, 0], [0, 0, 1])
    o = orthonormal_from_plucker(L)
    assert abs(o.phi - np.pi / 2) < 1e-15
    assert o.orthogonality_error() < 1e-14
    # oracle: viewing the z-axis from the side, projected endpoints of the
    # true line must land on the projected Plucker line
    pose = Pose(quat_from_rotvec([0, -np.pi / 2, 0]), [2.0, 0, 0])
    l = project_line(
        transform_plucker(plucker_from_orthonormal(o), camera_from_world(pose, Pose.identity()))
    )
    for s in (-1.0, 0.5, 2.0):
        u = _project_point(pose, CAM_IDENT, np.array([0, 0, s]))
        assert abs(point_line_distance(u, l)) < 1e-10


def test_update_orthonormal_group_action():
    rng = np.random.default_rng(12)
    L = plucker_from_endpoints([1, 2, 3], [-2, 0.5, 4])
    o = orthonormal_from_plucker(L)

    same = update_orthonormal(o, np.zeros(3), 0.0)
    np.testing.assert_allclose(same.U, o.U, atol=0)
    assert same.phi == o.phi

    twice = update_orthonormal(update_orthonormal(o, [0, 0, 0.01], 0.0), [0, 0, 0.01], 0.0)
    once = update_orthonormal(o, [0, 0, 0.02], 0.0)
    np.testing.assert_allclose(twice.U, once.U, atol=1e-9)

    for _ in range(50):
        dpsi = 0.3 * rng.normal(size=3)
        dphi = 0.3 * rng.normal()
        back = update_orthonormal(update_orthonormal(o, dpsi, dphi), -dpsi, -dphi)
        # one-parameter subgroup: Exp(a) Exp(-a) = I exactly
        np.testing.assert_allclose(back.U, o.U, atol=1e-9)
        np.testing.assert_allclose(back.phi, o.phi, atol=1e-12)
        assert update_orthonormal(o, dpsi, dphi).orthogonality_error() < 1e-10


# --------------------------------------------------------------------------
# Transforms / projection
# --------------------------------------------------------------------------


def test_transform_plucker_properties():
    rng = np.random.default_rng(13)
    L = plucker_from_endpoints([1, 0, 5], [-1, 0, 5])

    same = transform_plucker(L, Pose.identity())
    np.testing.assert_allclose(same.n, L.n, atol=0)
    np.testing.assert_allclose(same.d, L.d, atol=0)

    # translation parallel to d leaves the moment unchanged
    Lz = plucker_from_endpoints([1, 1, 0], [1, 1, 1])
    moved = transform_plucker(Lz, Pose(np.array([1.0, 0, 0, 0]), [0, 0, 1.0]))
    np.testing.assert_allclose(moved.n, Lz.n, atol=1e-15)

    for _ in range(100):
        T = _random_pose(rng)
        L1 = plucker_from_endpoints(rng.normal(size=3) * 3, rng.normal(size=3) * 3)
        L2 = transform_plucker(L1, T)
        assert L2.constraint_error() < 1e-9
        L3 = transform_plucker(L2, T.inverse())
        np.testing.assert_allclose(L3.n, L1.n, atol=1e-10)
        np.testing.assert_allclose(L3.d, L1.d, atol=1e-10)


def test_project_line_example_and_incidence():
    L = plucker_from_endpoints([1, 0, 5], [-1, 0, 5])
    l = project_line(L)
    # y = 0 in the normalized plane
    assert abs(point_line_distance([0.7, 0.0], l)) < 1e-15
    np.testing.assert_allclose(np.cross(l.l, [0, -10, 0]), 0, atol=1e-12)

    with pytest.raises(GeometryError):
        project_line(plucker_from_endpoints([0, 0, 1], [0, 0, 5]))

    rng = np.random.default_rng(14)
    count = 0
    while count < 100:
        p1 = rng.uniform([-3, -3, 2], [3, 3, 8])
        p2 = rng.uniform([-3, -3, 2], [3, 3, 8])
        if np.linalg.norm(p2 - p1) < 0.5:
            continue
        L = plucker_from_endpoints(p1, p2)
        try:
            l = project_line(L)
        except GeometryError:
            continue
        for p in (p1, p2):
            assert abs(point_line_distance(p[:2] / p[2], l)) < 1e-10
        count += 1


def test_point_line_distance_examples():
    assert point_line_distance([0.3, 0.0], ImageLine([0, 1, 0])) == 0.0
    assert abs(point_line_distance([0.0, 0.5], ImageLine([0, 1, 0])) - 0.5) < 1e-15
    assert abs(point_line_distance([1.0, 1.0], ImageLine([1, 1, -1])) - 1 / np.sqrt(2)) < 1e-15
    with pytest.raises(GeometryError):
        point_line_distance([0.0, 0.0], ImageLine([0, 0, 1]))


# --------------------------------------------------------------------------
# Residuals
# --------------------------------------------------------------------------


def _visible_line_setup(rng, cam):
    """Random world line + pose with a comfortably non-degenerate projection."""
    while True:
        p1 = rng.uniform(-4, 4, size=3)
        p2 = p1 + rng.normal(size=3) * rng.uniform(0.5, 2.0)
        if np.linalg.norm(p2 - p1) < 0.3:
            continue
        pose = _random_pose(rng, tscale=3.0)
        try:
            L_c = transform_plucker(
                plucker_from_endpoints(p1, p2), camera_from_world(pose, cam.T_bc)
            )
            l = project_line(L_c)
        except GeometryError:
            continue
        if l.norm2d() < 1e-2 * np.linalg.norm(l.l):
            continue
        if l.norm2d() < 1e-3:
            continue
        o = orthonormal_from_plucker(plucker_from_endpoints(p1, p2))
        return o, pose


def test_line_residual_zero_at_exact_observation():
    rng = np.random.default_rng(15)
    for _ in range(50):
        o, pose = _visible_line_setup(rng, CAM)
        l = project_line(
            transform_plucker(plucker_from_orthonormal(o), camera_from_world(pose, CAM.T_bc))
        )
        # any two points on the projected line constitute an exact observation
        a, b, c = l.l
        t = np.array([-b, a]) / np.hypot(a, b)
        p0 = -c / (a * a + b * b) * np.array([a, b])
        obs = Segment2D(p0 + 0.3 * t, p0 - 0.4 * t)
        r = line_reprojection_residual(o, pose, CAM, obs)
        np.testing.assert_allclose(r, 0, atol=1e-12)

        # displacing one endpoint perpendicular to the line moves exactly
        # that residual component by the displacement
        normal = np.array([a, b]) / np.hypot(a, b)
        obs2 = Segment2D(obs.e1 + 0.01 * normal, obs.e2)
        r2 = line_reprojection_residual(o, pose, CAM, obs2)
        assert abs(abs(r2[0]) - 0.01) < 1e-12
        assert abs(r2[1]) < 1e-12


def test_line_residual_jacobians_match_finite_differences():
    rng = np.random.default_rng(16)
    h = 1e-6
    checked = 0
    while checked < 120:
        o, pose = _visible_line_setup(rng, CAM)
        obs = Segment2D(rng.uniform(-0.8, 0.8, size=2), rng.uniform(-0.8, 0.8, size=2))
        if obs.length() < 0.05:
            continue
        try:
            r, J_pose, J_line = line_reprojection_residual(o, pose, CAM, obs, with_jacobians=True)
        except GeometryError:
            continue

        J_pose_num = np.empty((2, 6))
        for k in range(6):
            dx = np.zeros(6)
            dx[k] = h
            rp = line_reprojection_residual(o, _perturb_pose(pose, dx), CAM, obs)
            rm = line_reprojection_residual(o, _perturb_pose(pose, -dx), CAM, obs)
            J_pose_num[:, k] = (rp - rm) / (2 * h)
        assert _fd_matches(J_pose, J_pose_num)

        J_line_num = np.empty((2, 4))
        for k in range(4):
            dx = np.zeros(4)
            dx[k] = h
            rp = line_reprojection_residual(update_orthonormal(o, dx[:3], dx[3]), pose, CAM, obs)
            rm = line_reprojection_residual(update_orthonormal(o, -dx[:3], -dx[3]), pose, CAM, obs)
            J_line_num[:, k] = (rp - rm) / (2 * h)
        assert _fd_matches(J_line, J_line_num)
        checked += 1


def _point_pair_setup(rng, cam):
    """Host/target poses plus a consistent observation pair with depth margin."""
    while True:
        host = _random_pose(rng, tscale=1.5)
        target = _perturb_pose(host, np.concatenate([rng.normal(size=3) * 0.8,
                                                     rng.normal(size=3) * 0.3]))
        obs_host = rng.uniform(-0.5, 0.5, size=2)
        lam = rng.uniform(0.15, 1.5)
        p_c = np.array([obs_host[0], obs_host[1], 1.0]) / lam
        p_w = host.compose(cam.T_bc).transform(p_c)
        p_ct = camera_from_world(target, cam.T_bc).transform(p_w)
        if p_ct[2] < 0.3:
            continue
        obs_target = p_ct[:2] / p_ct[2] + rng.normal(size=2) * 0.05
        return lam, host, target, obs_host, obs_target


def test_point_residual_zero_cases():
    rng = np.random.default_rng(17)
    # identical poses, identical observations
    pose = _random_pose(rng)
    r = point_reprojection_residual(0.5, pose, pose, CAM, [0.1, -0.2], [0.1, -0.2])
    np.testing.assert_allclose(r, 0, atol=1e-12)

    # exact two-view pair
    for _ in range(50):
        lam, host, target, u0, _ = _point_pair_setup(rng, CAM)
        p_c = np.array([u0[0], u0[1], 1.0]) / lam
        p_w = host.compose(CAM.T_bc).transform(p_c)
        u1 = _project_point(target, CAM, p_w)
        r = point_reprojection_residual(lam, host, target, CAM, u0, u1)
        np.testing.assert_allclose(r, 0, atol=1e-12)

    with pytest.raises(GeometryError):
        point_reprojection_residual(-0.1, pose, pose, CAM, [0, 0], [0, 0])


def test_point_residual_jacobians_match_finite_differences():
    rng = np.random.default_rng(18)
    h = 1e-6
    for _ in range(120):
        lam, host, target, u0, u1 = _point_pair_setup(rng, CAM)
        r, J_h, J_t, J_lam = point_reprojection_residual(
            lam, host, target, CAM, u0, u1, with_jacobians=True
        )

        for J, which in ((J_h, "host"), (J_t, "target")):
            J_num = np.empty((2, 6))
            for k in range(6):
                dx = np.zeros(6)
                dx[k] = h
                if which == "host":
                    rp = point_reprojection_residual(lam, _perturb_pose(host, dx), target, CAM, u0, u1)
                    rm = point_reprojection_residual(lam, _perturb_pose(host, -dx), target, CAM, u0, u1)
                else:
                    rp = point_reprojection_residual(lam, host, _perturb_pose(target, dx), CAM, u0, u1)
                    rm = point_reprojection_residual(lam, host, _perturb_pose(target, -dx), CAM, u0, u1)
                J_num[:, k] = (rp - rm) / (2 * h)
            assert _fd_matches(J, J_num)

        rp = point_reprojection_residual(lam + h, host, target, CAM, u0, u1)
        rm = point_reprojection_residual(lam - h, host, target, CAM, u0, u1)
        assert _fd_matches(J_lam, ((rp - rm) / (2 * h)).reshape(2, 1))


# --------------------------------------------------------------------------
# Triangulation
# --------------------------------------------------------------------------


def test_triangulate_point_analytic_example():
    # point (0,0,5) seen from the origin and from (1,0,0): depth 5, lambda 0.2
    pose_i = Pose.identity()
    pose_j = Pose(np.array([1.0, 0, 0, 0]), [1.0, 0, 0])
    lam = triangulate_point_two_views([0.0, 0.0], pose_i, [-0.2, 0.0], pose_j, CAM_IDENT)
    assert abs(lam - 0.2) < 1e-9

    with pytest.raises(TriangulationError):
        triangulate_point_two_views([0.0, 0.0], pose_i, [0.0, 0.0], pose_i, CAM_IDENT)


def test_triangulate_point_random_batch():
    rng = np.random.default_rng(19)
    done = 0
    while done < 100:
        pose_i = _random_pose(rng)
        pose_j = _perturb_pose(pose_i, np.concatenate([rng.normal(size=3),
                                                       rng.normal(size=3) * 0.2]))
        p_w = rng.uniform(-5, 5, size=3)
        ci = pose_i.compose(CAM.T_bc)
        z_true = ci.inverse().transform(p_w)[2]
        if z_true < 0.5:
            continue
        try:
            u_i = _project_point(pose_i, CAM, p_w)
            u_j = _project_point(pose_j, CAM, p_w)
            lam = triangulate_point_two_views(u_i, pose_i, u_j, pose_j, CAM)
        except GeometryError:
            continue
        assert abs(lam - 1.0 / z_true) < 1e-9 * max(1.0, 1.0 / z_true)
        done += 1


def test_triangulate_line_two_views():
    rng = np.random.default_rng(20)
    done = 0
    while done < 100:
        p1 = rng.uniform(-4, 4, size=3)
        p2 = p1 + rng.normal(size=3)
        if np.linalg.norm(p2 - p1) < 0.5:
            continue
        pose_i = _random_pose(rng, tscale=3.0)
        pose_j = _perturb_pose(pose_i, np.concatenate([rng.normal(size=3),
                                                       rng.normal(size=3) * 0.2]))
        try:
            obs_i = Segment2D(_project_point(pose_i, CAM, p1), _project_point(pose_i, CAM, p2))
            obs_j = Segment2D(_project_point(pose_j, CAM, p1), _project_point(pose_j, CAM, p2))
            est = triangulate_line_two_views(obs_i, pose_i, obs_j, pose_j, CAM)
        except GeometryError:
            continue
        true = plucker_from_endpoints(p1, p2)
        cosang = abs(np.dot(est.d, true.d)) / (np.linalg.norm(est.d) * np.linalg.norm(true.d))
        assert np.arccos(np.clip(cosang, -1, 1)) < 1e-6
        # both observations are consistent with the estimate
        o_est = orthonormal_from_plucker(est)
        for obs, pose in ((obs_i, pose_i), (obs_j, pose_j)):
            r = line_reprojection_residual(o_est, pose, CAM, obs)
            np.testing.assert_allclose(r, 0, atol=1e-9)
        done += 1


def test_triangulate_line_degenerate_cases():
    pose = Pose.identity()
    obs = Segment2D([0.1, 0.0], [0.3, 0.1])
    with pytest.raises(TriangulationError):
        triangulate_line_two_views(obs, pose, obs, pose, CAM_IDENT)

    # baseline along the observed 3D line: the two back-projected planes
    # coincide, so the intersection is undefined
    p1, p2 = np.array([0.0, 1.0, 5.0]), np.array([2.0, 1.0, 5.0])
    pose_i = Pose.identity()
    pose_j = Pose(np.array([1.0, 0, 0, 0]), p2 - p1)
    obs_i = Segment2D(_project_point(pose_i, CAM_IDENT, p1), _project_point(pose_i, CAM_IDENT, p2))
    obs_j = Segment2D(_project_point(pose_j, CAM_IDENT, p1), _project_point(pose_j, CAM_IDENT, p2))
    with pytest.raises(TriangulationError):
        triangulate_line_two_views(obs_i, pose_i, obs_j, pose_j, CAM_IDENT)
