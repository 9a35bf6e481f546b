"""Deterministic synthetic world for end-to-end experiments.

Analytic trajectories (exact derivatives everywhere), IMU synthesis with
white noise + bias random walk, per-frame point/segment detections with
border clipping, random splits, illumination-coupled dropout, and a flow
oracle that stands in for pixel-level optical flow.

Everything is a pure function of (spec, seed): same inputs, same bytes.
Detections are emitted in normalized image coordinates; the flow oracle
speaks pixels (the tracker's native space).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import PinholeCamera, Pose, Segment2D, camera_from_world
from .imu import ImuSample
from .rotations import matrix_to_quat


def default_camera():
    """Forward-looking VGA pinhole rig used across the synthetic scenarios.

    The optical axis points along body +x (camera z forward), mounted
    10 cm ahead of and 5 cm above the IMU.
    """
    R_bc = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    return PinholeCamera(460.0, 460.0, 320.0, 240.0, 640, 480,
                         Pose(matrix_to_quat(R_bc), np.array([0.1, 0.0, 0.05])))


# --------------------------------------------------------------------------
# World
# --------------------------------------------------------------------------

@dataclass
class World:
    """Static boxy indoor scene: 3D points and 3D line segments."""

    points: np.ndarray           # (N, 3)
    segments: list               # of (P1, P2) 3-vector pairs
    seed: int = 0

    @classmethod
    def box_room(cls, seed=0, n_points=300, n_segments=40,
                 size=(12.0, 12.0, 4.0)):
        """Structured room: box edges, railings, studs, wall points.

        Lines are deliberately plentiful and axis-dominated, the way indoor
        scenes with artificial structure are.
        """
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 77)))
        hx, hy, hz = size[0] / 2.0, size[1] / 2.0, float(size[2])

        segs = []
        # the 12 box edges
        for sx in (-hx, hx):
            for sy in (-hy, hy):
                segs.append((np.array([sx, sy, 0.0]), np.array([sx, sy, hz])))
        for z in (0.0, hz):
            segs.append((np.array([-hx, -hy, z]), np.array([hx, -hy, z])))
            segs.append((np.array([-hx, hy, z]), np.array([hx, hy, z])))
            segs.append((np.array([-hx, -hy, z]), np.array([-hx, hy, z])))
            segs.append((np.array([hx, -hy, z]), np.array([hx, hy, z])))

        # walls: (point on wall, in-plane u axis, in-plane v axis, extent)
        walls = [
            (np.array([0.0, -hy, 0.0]), np.array([1.0, 0, 0]), hx),
            (np.array([0.0, hy, 0.0]), np.array([1.0, 0, 0]), hx),
            (np.array([-hx, 0.0, 0.0]), np.array([0, 1.0, 0]), hy),
            (np.array([hx, 0.0, 0.0]), np.array([0, 1.0, 0]), hy),
        ]
        up = np.array([0.0, 0.0, 1.0])
        # horizontal railings at two heights per wall
        for base, u, ext in walls:
            for z in (1.0, 2.2):
                a = rng.uniform(-0.9, -0.3) * ext
                b = rng.uniform(0.3, 0.9) * ext
                segs.append((base + a * u + z * up, base + b * u + z * up))
        # vertical studs
        for base, u, ext in walls:
            for x in rng.uniform(-0.85, 0.85, size=4) * ext:
                z0 = rng.uniform(0.0, 0.6)
                z1 = rng.uniform(2.8, hz)
                segs.append((base + x * u + z0 * up, base + x * u + z1 * up))
        # a few diagonal braces
        for base, u, ext in walls:
            x0, x1 = np.sort(rng.uniform(-0.8, 0.8, size=2) * ext)
            if x1 - x0 < 0.8:
                x1 = x0 + 0.8
            segs.append((base + x0 * u + 0.5 * up, base + x1 * u + 2.8 * up))

        if len(segs) > n_segments:
            segs = segs[:n_segments]
        while len(segs) < n_segments:
            base, u, ext = walls[len(segs) % 4]
            x0, x1 = np.sort(rng.uniform(-0.9, 0.9, size=2) * ext)
            z0, z1 = rng.uniform(0.3, hz - 0.3, size=2)
            p1, p2 = base + x0 * u + z0 * up, base + x1 * u + z1 * up
            if np.linalg.norm(p2 - p1) > 0.5:
                segs.append((p1, p2))

        # points on the four walls plus floor/ceiling sprinkle
        pts = []
        per_wall = n_points * 4 // 5 // 4
        for base, u, ext in walls:
            x = rng.uniform(-0.95, 0.95, size=per_wall) * ext
            z = rng.uniform(0.2, hz - 0.2, size=per_wall)
            pts.append(base[None, :] + x[:, None] * u[None, :] + z[:, None] * up[None, :])
        remaining = n_points - per_wall * 4
        fx = rng.uniform(-0.9 * hx, 0.9 * hx, size=remaining)
        fy = rng.uniform(-0.9 * hy, 0.9 * hy, size=remaining)
        fz = np.where(rng.random(remaining) < 0.5, 0.0, hz)
        pts.append(np.column_stack([fx, fy, fz]))
        points = np.vstack(pts)[:n_points]
        return cls(points=points, segments=segs, seed=int(seed))


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------

@dataclass
class TrajectorySpec:
    kind: str = "circle"                 # circle | lissajous | waypoints
    duration: float = 10.0
    cam_rate: float = 20.0
    # 500 Hz keeps the midpoint-integration floor of the default (fairly
    # aggressive) trajectory below 1e-8 per frame pair
    imu_rate: float = 500.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.imu_rate < 5 * self.cam_rate:
            raise ValueError("imu rate must be at least 5x the camera rate")

    def frame_times(self):
        n = int(round(self.duration * self.cam_rate))
        return np.arange(n + 1) / self.cam_rate

    def imu_times(self):
        n = int(round(self.duration * self.imu_rate))
        return np.arange(n + 1) / self.imu_rate


def _euler_zyx(psi, theta, phi):
    """R = Rz(psi) Ry(theta) Rx(phi)."""
    cps, sps = math.cos(psi), math.sin(psi)
    cth, sth = math.cos(theta), math.sin(theta)
    cph, sph = math.cos(phi), math.sin(phi)
    return np.array([
        [cps * cth, cps * sth * sph - sps * cph, cps * sth * cph + sps * sph],
        [sps * cth, sps * sth * sph + cps * cph, sps * sth * cph - cps * sph],
        [-sth, cth * sph, cth * cph],
    ])


def _body_rates_zyx(psi, theta, phi, dpsi, dtheta, dphi):
    """Body angular velocity from ZYX Euler angles and their rates."""
    cth, sth = math.cos(theta), math.sin(theta)
    cph, sph = math.cos(phi), math.sin(phi)
    return np.array([
        dphi - dpsi * sth,
        dtheta * cph + dpsi * cth * sph,
        -dtheta * sph + dpsi * cth * cph,
    ])


def _circle_kinematics(par, t):
    r = par.get("radius", 2.0)
    w = par.get("omega", 0.6)
    cx, cy, cz = par.get("center", (0.0, 0.0, 1.2))
    ha = par.get("height_amp", 0.15)
    hw = par.get("height_omega", 0.8)
    p = np.array([cx + r * math.cos(w * t),
                  cy + r * math.sin(w * t),
                  cz + ha * math.sin(hw * t)])
    v = np.array([-r * w * math.sin(w * t),
                  r * w * math.cos(w * t),
                  ha * hw * math.cos(hw * t)])
    a = np.array([-r * w * w * math.cos(w * t),
                  -r * w * w * math.sin(w * t),
                  -ha * hw * hw * math.sin(hw * t)])
    # heading follows the tangent; gentle pitch/roll to excite all axes
    psi = w * t + math.pi / 2.0
    dpsi = w
    th_a, th_w = par.get("pitch_amp", 0.05), par.get("pitch_omega", 0.9)
    ph_a, ph_w = par.get("roll_amp", 0.04), par.get("roll_omega", 0.7)
    theta, dtheta = th_a * math.sin(th_w * t), th_a * th_w * math.cos(th_w * t)
    phi, dphi = ph_a * math.sin(ph_w * t), ph_a * ph_w * math.cos(ph_w * t)
    return p, v, a, (psi, theta, phi), (dpsi, dtheta, dphi)


def _lissajous_kinematics(par, t):
    ax, ay, az = par.get("amp", (2.5, 1.5, 0.4))
    wx, wy, wz = par.get("freq", (0.4, 0.8, 0.6))
    cx, cy, cz = par.get("center", (0.0, 0.0, 1.5))
    dx = par.get("phase", 0.5)
    p = np.array([cx + ax * math.sin(wx * t + dx),
                  cy + ay * math.sin(wy * t),
                  cz + az * math.sin(wz * t)])
    v = np.array([ax * wx * math.cos(wx * t + dx),
                  ay * wy * math.cos(wy * t),
                  az * wz * math.cos(wz * t)])
    a = np.array([-ax * wx * wx * math.sin(wx * t + dx),
                  -ay * wy * wy * math.sin(wy * t),
                  -az * wz * wz * math.sin(wz * t)])
    ya, yw = par.get("yaw_amp", 0.8), par.get("yaw_omega", 0.5)
    th_a, th_w = par.get("pitch_amp", 0.06), par.get("pitch_omega", 0.8)
    ph_a, ph_w = par.get("roll_amp", 0.05), par.get("roll_omega", 1.1)
    psi, dpsi = ya * math.sin(yw * t), ya * yw * math.cos(yw * t)
    theta, dtheta = th_a * math.sin(th_w * t), th_a * th_w * math.cos(th_w * t)
    phi, dphi = ph_a * math.sin(ph_w * t), ph_a * ph_w * math.cos(ph_w * t)
    return p, v, a, (psi, theta, phi), (dpsi, dtheta, dphi)


def _waypoint_splines(spec):
    par = spec.params
    wps = np.asarray(par["waypoints"], dtype=float)
    if wps.ndim != 2 or wps.shape[1] != 3 or len(wps) < 3:
        raise ValueError("waypoints must be an (n>=3, 3) array")
    times = par.get("times")
    if times is None:
        times = np.linspace(0.0, spec.duration, len(wps))
    times = np.asarray(times, dtype=float)
    pos = CubicSpline(times, wps, bc_type="clamped")
    yaws = par.get("yaws")
    if yaws is None:
        # headings from chord directions, unwrapped
        chords = np.diff(wps[:, :2], axis=0)
        head = np.arctan2(chords[:, 1], chords[:, 0])
        head = np.unwrap(np.concatenate([[head[0]], head]))
        yaws = head
    yaw = CubicSpline(times, np.asarray(yaws, dtype=float), bc_type="clamped")
    return pos, yaw


def _waypoint_kinematics(spec, t):
    if not hasattr(spec, "_splines"):
        spec._splines = _waypoint_splines(spec)
    pos, yaw = spec._splines
    p = pos(t)
    v = pos(t, 1)
    a = pos(t, 2)
    psi, dpsi = float(yaw(t)), float(yaw(t, 1))
    par = spec.params
    th_a, th_w = par.get("pitch_amp", 0.04), par.get("pitch_omega", 0.7)
    theta, dtheta = th_a * math.sin(th_w * t), th_a * th_w * math.cos(th_w * t)
    return p, v, a, (psi, theta, 0.0), (dpsi, dtheta, 0.0)


def generate_trajectory(spec, t):
    """Ground-truth kinematics at time t.

    Returns (pose, velocity, acceleration, omega_body): the world-from-body
    pose, world-frame velocity and acceleration, and the body-frame angular
    velocity. All quantities are exact derivatives of the analytic path.
    """
    if t < -1e-12 or t > spec.duration + 1e-9:
        raise ValueError("t outside [0, duration]")
    if spec.kind == "circle":
        p, v, a, ang, dang = _circle_kinematics(spec.params, t)
    elif spec.kind == "lissajous":
        p, v, a, ang, dang = _lissajous_kinematics(spec.params, t)
    elif spec.kind == "waypoints":
        p, v, a, ang, dang = _waypoint_kinematics(spec, t)
    else:
        raise ValueError("unknown trajectory kind %r" % spec.kind)
    R = _euler_zyx(*ang)
    omega_b = _body_rates_zyx(*ang, *dang)
    return Pose(matrix_to_quat(R), p), v, a, omega_b


def trajectory_states(spec, times):
    """(p, q, v) ground truth stacked over an array of times."""
    ps, qs, vs = [], [], []
    for t in np.atleast_1d(times):
        pose, v, _, _ = generate_trajectory(spec, float(t))
        ps.append(pose.t)
        qs.append(pose.q)
        vs.append(v)
    return np.array(ps), np.array(qs), np.array(vs)


# --------------------------------------------------------------------------
# IMU synthesis
# --------------------------------------------------------------------------

def synthesize_imu(spec, noise, seed, with_bias_truth=False):
    """IMU samples along the trajectory.

    accel = R^T (a_world - g) + b_a + white;  gyro = omega_body + b_g + white.
    White noise uses sigma/sqrt(dt); biases follow a random walk with
    sigma*sqrt(dt) increments starting at zero. Deterministic in seed.
    """
    ts = spec.imu_times()
    dt = 1.0 / spec.imu_rate
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 11)))
    g = np.asarray(noise.gravity, dtype=float)

    n = len(ts)
    wn_a = noise.sigma_a / math.sqrt(dt) * rng.standard_normal((n, 3))
    wn_g = noise.sigma_g / math.sqrt(dt) * rng.standard_normal((n, 3))
    ba = np.cumsum(np.vstack([np.zeros(3),
                              noise.sigma_ba * math.sqrt(dt) * rng.standard_normal((n - 1, 3))]),
                   axis=0)
    bg = np.cumsum(np.vstack([np.zeros(3),
                              noise.sigma_bg * math.sqrt(dt) * rng.standard_normal((n - 1, 3))]),
                   axis=0)

    samples = []
    for k, t in enumerate(ts):
        pose, _, a_w, omega_b = generate_trajectory(spec, float(t))
        accel = pose.R.T @ (a_w - g) + ba[k] + wn_a[k]
        gyro = omega_b + bg[k] + wn_g[k]
        samples.append(ImuSample(float(t), gyro, accel))
    if with_bias_truth:
        return samples, ba, bg
    return samples


# --------------------------------------------------------------------------
# Illumination
# --------------------------------------------------------------------------

@dataclass
class IlluminationSpec:
    """Scalar scene-brightness proxy: base level with smooth dips.

    Each dip is (t0, t1, level): the profile ramps down over the first 20%
    of the interval, holds the level, and ramps back over the last 20%.
    """

    base: float = 1.0
    dips: tuple = ()

    def value(self, t):
        v = self.base
        for t0, t1, level in self.dips:
            if not (t0 <= t <= t1):
                continue
            ramp = 0.2 * (t1 - t0)
            if t < t0 + ramp:
                f = (t - t0) / ramp
            elif t > t1 - ramp:
                f = (t1 - t) / ramp
            else:
                f = 1.0
            v = min(v, self.base + f * (level - self.base))
        return float(min(max(v, 0.0), 1.0))


def illumination_profile(illum, t):
    return illum.value(t)


# --------------------------------------------------------------------------
# Frame synthesis
# --------------------------------------------------------------------------

@dataclass
class DetectionConfig:
    sigma_line_px: float = 0.6    # endpoint detection noise
    sigma_point_px: float = 0.5
    p_split: float = 0.15
    min_length_px: float = 15.0
    z_near: float = 0.2
    drop_point_coef: float = 0.85  # dropout = coef * (1 - I)^exponent
    drop_line_coef: float = 0.45
    drop_exponent: float = 1.5


@dataclass
class LineObservation:
    line_id: int
    seg: Segment2D                # normalized coordinates
    split_part: int = -1          # -1: whole; 0/1: which half of a split
    truncated: bool = False       # clipped by image border or near plane


@dataclass
class FrameObservations:
    t: float
    index: int
    point_obs: list               # of (point_id, 2-vector normalized)
    segment_obs: list             # of LineObservation
    illumination: float = 1.0


def _clip_segment_px(p1, p2, width, height):
    """Liang-Barsky clip to [0, width-1] x [0, height-1].

    Returns (q1, q2, truncated) or None when fully outside.
    """
    d = p2 - p1
    t0, t1 = 0.0, 1.0
    for coord, lo, hi in ((0, 0.0, width - 1.0), (1, 0.0, height - 1.0)):
        p, q = -d[coord], p1[coord] - lo
        for pp, qq in ((p, q), (-p, hi - p1[coord])):
            if pp == 0.0:
                if qq < 0.0:
                    return None
                continue
            r = qq / pp
            if pp < 0.0:
                if r > t1:
                    return None
                t0 = max(t0, r)
            else:
                if r < t0:
                    return None
                t1 = min(t1, r)
    if t0 > t1:
        return None
    return p1 + t0 * d, p1 + t1 * d, (t0 > 0.0 or t1 < 1.0)


def synthesize_frame(world, spec, cam, t, det_cfg, illum=None, seed=0):
    """Observations of the world at time t.

    Projects visible points/segments, clips segments at the near plane and
    the image border (border events get flagged truncated), randomly splits
    segments into two collinear parts, drops features as illumination
    falls (points degrade faster than lines), and adds pixel noise.
    """
    frame_idx = int(round(t * spec.cam_rate))
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 13, frame_idx)))
    pose, _, _, _ = generate_trajectory(spec, t)
    T_cw = camera_from_world(pose, cam.T_bc)
    I_t = illum.value(t) if illum is not None else 1.0
    p_drop_pt = min(1.0, det_cfg.drop_point_coef * (1.0 - I_t) ** det_cfg.drop_exponent)
    p_drop_ln = min(1.0, det_cfg.drop_line_coef * (1.0 - I_t) ** det_cfg.drop_exponent)

    point_obs = []
    pc = (T_cw.R @ world.points.T).T + T_cw.t
    for pid in range(len(world.points)):
        x, y, z = pc[pid]
        if z < det_cfg.z_near:
            continue
        px = cam.normalized_to_pixel(np.array([x / z, y / z]))
        if not (0 <= px[0] <= cam.width - 1 and 0 <= px[1] <= cam.height - 1):
            continue
        if rng.random() < p_drop_pt:
            continue
        if det_cfg.sigma_point_px > 0:
            px = px + det_cfg.sigma_point_px * rng.standard_normal(2)
            px = np.clip(px, [0, 0], [cam.width - 1, cam.height - 1])
        point_obs.append((pid, cam.pixel_to_normalized(px)))

    segment_obs = []
    for lid, (P1, P2) in enumerate(world.segments):
        c1, c2 = T_cw.transform(P1), T_cw.transform(P2)
        truncated = False
        if c1[2] < det_cfg.z_near and c2[2] < det_cfg.z_near:
            continue
        if c1[2] < det_cfg.z_near or c2[2] < det_cfg.z_near:
            s = (det_cfg.z_near - c1[2]) / (c2[2] - c1[2])
            cut = c1 + s * (c2 - c1)
            if c1[2] < det_cfg.z_near:
                c1 = cut
            else:
                c2 = cut
            truncated = True
        px1 = cam.normalized_to_pixel(c1[:2] / c1[2])
        px2 = cam.normalized_to_pixel(c2[:2] / c2[2])
        clipped = _clip_segment_px(px1, px2, cam.width, cam.height)
        if clipped is None:
            continue
        q1, q2, border = clipped
        truncated = truncated or border
        if np.linalg.norm(q2 - q1) < det_cfg.min_length_px:
            continue
        if rng.random() < p_drop_ln:
            continue

        parts = [(q1, q2, -1)]
        if rng.random() < det_cfg.p_split:
            length = np.linalg.norm(q2 - q1)
            gap = rng.uniform(0.05, 0.30)
            center = rng.uniform(0.35, 0.65)
            lo, hi = center - gap / 2.0, center + gap / 2.0
            parts = []
            for part_idx, (a, b) in enumerate(((0.0, lo), (hi, 1.0))):
                e1 = q1 + a * (q2 - q1)
                e2 = q1 + b * (q2 - q1)
                if np.linalg.norm(e2 - e1) >= det_cfg.min_length_px:
                    parts.append((e1, e2, part_idx))
            if not parts:
                parts = [(q1, q2, -1)]

        for e1, e2, part_idx in parts:
            if det_cfg.sigma_line_px > 0:
                e1 = e1 + det_cfg.sigma_line_px * rng.standard_normal(2)
                e2 = e2 + det_cfg.sigma_line_px * rng.standard_normal(2)
                e1 = np.clip(e1, [0, 0], [cam.width - 1, cam.height - 1])
                e2 = np.clip(e2, [0, 0], [cam.width - 1, cam.height - 1])
            seg = Segment2D(cam.pixel_to_normalized(e1), cam.pixel_to_normalized(e2))
            segment_obs.append(LineObservation(lid, seg, part_idx, truncated))

    return FrameObservations(t=float(t), index=frame_idx, point_obs=point_obs,
                             segment_obs=segment_obs, illumination=I_t)


# --------------------------------------------------------------------------
# Flow oracle
# --------------------------------------------------------------------------

class FlowOracle:
    """Per-frame endpoint/pixel motion prediction without raster images.

    Answers "where did this feature's pixel move" with the true reprojection
    plus Gaussian pixel noise. Noise draws are keyed by (seed, frame, kind,
    feature id, endpoint) so predictions are independent of query order.
    Lower illumination inflates the noise, the way real flow degrades.
    """

    _KIND = {"point": 0, "line": 1}

    def __init__(self, world, spec, cam, sigma_flow_px=0.4, seed=0,
                 illum=None, illum_gain=2.0):
        self.world = world
        self.spec = spec
        self.cam = cam
        self.sigma = float(sigma_flow_px)
        self.seed = int(seed)
        self.illum = illum
        self.illum_gain = float(illum_gain)
        self._pose_cache = {}

    def _T_cw(self, frame_idx):
        if frame_idx not in self._pose_cache:
            t = frame_idx / self.spec.cam_rate
            pose, _, _, _ = generate_trajectory(self.spec, t)
            self._pose_cache[frame_idx] = camera_from_world(pose, self.cam.T_bc)
        return self._pose_cache[frame_idx]

    def _noise(self, frame_to, kind, fid, endpoint):
        if self.sigma == 0.0:
            return np.zeros(2)
        ss = np.random.SeedSequence(
            (self.seed, 17, int(frame_to), self._KIND[kind], int(fid), int(endpoint)))
        sigma = self.sigma
        if self.illum is not None:
            I_t = self.illum.value(frame_to / self.spec.cam_rate)
            sigma *= 1.0 + self.illum_gain * (1.0 - I_t)
        return sigma * np.random.default_rng(ss).standard_normal(2)

    def _project(self, frame_idx, p_w):
        pc = self._T_cw(frame_idx).transform(p_w)
        if pc[2] <= 1e-6:
            return None
        return self.cam.normalized_to_pixel(pc[:2] / pc[2])

    def predict_point(self, frame_from, frame_to, point_id, px_prev):
        """Predicted pixel of a world point in frame_to (or None)."""
        px = self._project(frame_to, self.world.points[point_id])
        if px is None:
            return None
        return px + self._noise(frame_to, "point", point_id, 0)

    def predict_line_endpoint(self, frame_from, frame_to, line_id, endpoint_idx,
                              px_prev):
        """Predicted pixel of the 3D point currently under a line endpoint.

        The observed endpoint is usually not a 3D segment endpoint (clips,
        splits), so the anchor is recovered as the point on the infinite 3D
        line closest to the endpoint's back-projected ray, then reprojected
        into frame_to. May land outside the image; the tracker clamps.
        """
        P1, P2 = self.world.segments[line_id]
        T_cw = self._T_cw(frame_from)
        T_wc = T_cw.inverse()
        xn = self.cam.pixel_to_normalized(np.asarray(px_prev, dtype=float))
        ray = T_wc.R @ np.array([xn[0], xn[1], 1.0])
        ray = ray / np.linalg.norm(ray)
        c = T_wc.t
        d = P2 - P1
        d = d / np.linalg.norm(d)
        # closest point on line(P1, d) to ray(c, ray)
        w0 = P1 - c
        a = 1.0
        b = float(np.dot(d, ray))
        denom = a - b * b
        if abs(denom) < 1e-12:
            s = 0.0
        else:
            e = float(np.dot(d, w0))
            f = float(np.dot(ray, w0))
            s = (b * f - e) / denom
        anchor = P1 + s * d
        px = self._project(frame_to, anchor)
        if px is None:
            return None
        return px + self._noise(frame_to, "line", line_id, endpoint_idx)


# --------------------------------------------------------------------------
# TUM trajectory export
# --------------------------------------------------------------------------

def write_tum(path, times, poses):
    """One `t tx ty tz qx qy qz qw` line per pose, %.9g fields."""
    with open(path, "w") as f:
        for t, pose in zip(times, poses):
            q = pose.q
            row = (t, pose.t[0], pose.t[1], pose.t[2], q[1], q[2], q[3], q[0])
            f.write(" ".join("%.9g" % x for x in row) + "\n")


def read_tum(path):
    """Inverse of write_tum: (times, positions (N,3), quaternions (N,4) wxyz)."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 8:
        raise ValueError("TUM file must have 8 columns")
    times = data[:, 0]
    pos = data[:, 1:4]
    q_xyzw = data[:, 4:8]
    q_wxyz = np.column_stack([q_xyzw[:, 3], q_xyzw[:, 0], q_xyzw[:, 1], q_xyzw[:, 2]])
    return times, pos, q_wxyz
