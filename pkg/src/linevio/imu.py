"""IMU preintegration between consecutive window frames.

Midpoint integration of bias-corrected gyro/accel samples into relative
increments (alpha, beta, gamma) expressed in the first frame's body frame,
with first-order bias Jacobians and 15x15 covariance propagation; plus the
15-dimensional inertial residual and its analytic state Jacobians.

Error-state ordering everywhere: [dp, dtheta, dv, dba, dbg].
"""

from dataclasses import dataclass, field

import numpy as np

from .rotations import (
    quat_conj,
    quat_from_rotvec,
    quat_left,
    quat_mul,
    quat_normalize,
    quat_right,
    quat_to_matrix,
    right_jacobian_so3,
    rotvec_to_matrix,
    skew,
)

O_P, O_R, O_V, O_BA, O_BG = 0, 3, 6, 9, 12


@dataclass
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(3)


@dataclass
class ImuNoiseParams:
    """Continuous-time noise densities plus the (fixed, known) gravity vector."""

    sigma_g: float = 0.004
    sigma_a: float = 0.08
    sigma_bg: float = 2.0e-6
    sigma_ba: float = 4.0e-5
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        if min(self.sigma_g, self.sigma_a, self.sigma_bg, self.sigma_ba) < 0:
            raise ValueError("noise densities must be non-negative")


@dataclass
class PreintegratedImu:
    dt: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray          # unit quaternion [w,x,y,z]
    covariance: np.ndarray     # 15x15, [dp, dtheta, dv, dba, dbg]
    J_bias: np.ndarray         # 15x15 full state transition product
    ba_lin: np.ndarray
    bg_lin: np.ndarray

    @property
    def dp_dba(self):
        return self.J_bias[O_P:O_P + 3, O_BA:O_BA + 3]

    @property
    def dp_dbg(self):
        return self.J_bias[O_P:O_P + 3, O_BG:O_BG + 3]

    @property
    def dq_dbg(self):
        return self.J_bias[O_R:O_R + 3, O_BG:O_BG + 3]

    @property
    def dv_dba(self):
        return self.J_bias[O_V:O_V + 3, O_BA:O_BA + 3]

    @property
    def dv_dbg(self):
        return self.J_bias[O_V:O_V + 3, O_BG:O_BG + 3]


def preintegrate(samples, ba, bg, noise):
    """Midpoint-rule preintegration of an IMU batch.

    samples must have strictly increasing timestamps and at least two
    entries; the batch spans [samples[0].t, samples[-1].t].
    """
    if len(samples) < 2:
        raise ValueError("need at least two IMU samples")
    ts = np.array([s.t for s in samples])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    ba = np.asarray(ba, dtype=float).reshape(3)
    bg = np.asarray(bg, dtype=float).reshape(3)

    alpha = np.zeros(3)
    beta = np.zeros(3)
    gamma = np.array([1.0, 0, 0, 0])
    P = np.zeros((15, 15))
    J = np.eye(15)

    # discrete variances from continuous densities (sigma^2 / dt).  The
    # white terms carry a factor 2: the midpoint rule reuses each interior
    # sample in two adjacent steps, so the per-step half-weight endpoint
    # model below under-counts the integrated white noise by exactly that
    # factor (checked against Monte-Carlo whitened residuals at truth).
    # The floors keep the whitener usable in deliberately noise-free
    # scenarios without blowing the normal-equation conditioning: gains
    # beyond ~1e5 swamp the visual curvature in float64 and stall the
    # optimizer.
    def q_diag(dt):
        sa = 2.0 * max(noise.sigma_a, 1e-3) ** 2 / dt
        sg = 2.0 * max(noise.sigma_g, 1e-4) ** 2 / dt
        sba = max(noise.sigma_ba, 1e-6) ** 2 / dt
        sbg = max(noise.sigma_bg, 1e-7) ** 2 / dt
        return np.repeat([sa, sg, sa, sg, sba, sbg], 3)

    I3 = np.eye(3)
    for k in range(len(samples) - 1):
        s0, s1 = samples[k], samples[k + 1]
        dt = s1.t - s0.t
        w_mid = 0.5 * (s0.gyro + s1.gyro) - bg
        R0 = quat_to_matrix(gamma)
        gamma_new = quat_normalize(quat_mul(gamma, quat_from_rotvec(w_mid * dt)))
        R1 = quat_to_matrix(gamma_new)
        a0 = s0.accel - ba
        a1 = s1.accel - ba
        a_mid = 0.5 * (R0 @ a0 + R1 @ a1)

        alpha_new = alpha + beta * dt + 0.5 * a_mid * dt * dt
        beta_new = beta + a_mid * dt

        # error-state transition of this exact discrete step.  Rstep/Jr keep
        # the rotation rows exact (not just first order in dt) so that J is
        # the true chain-rule derivative of the integrator; bias_correct then
        # matches re-preintegration to second order in the bias shift.
        Ra0 = skew(a0)
        Ra1 = skew(a1)
        Rstep_T = rotvec_to_matrix(w_mid * dt).T
        Jr = right_jacobian_so3(w_mid * dt)
        dth_row = -0.5 * (R0 @ Ra0 + R1 @ Ra1 @ Rstep_T)
        dbg_row = 0.5 * R1 @ Ra1 @ Jr * dt
        F = np.eye(15)
        F[O_P:O_P+3, O_R:O_R+3] = 0.5 * dth_row * dt**2
        F[O_P:O_P+3, O_V:O_V+3] = I3 * dt
        F[O_P:O_P+3, O_BA:O_BA+3] = -0.25 * (R0 + R1) * dt**2
        F[O_P:O_P+3, O_BG:O_BG+3] = 0.5 * dbg_row * dt**2
        F[O_R:O_R+3, O_R:O_R+3] = Rstep_T
        F[O_R:O_R+3, O_BG:O_BG+3] = -Jr * dt
        F[O_V:O_V+3, O_R:O_R+3] = dth_row * dt
        F[O_V:O_V+3, O_BA:O_BA+3] = -0.5 * (R0 + R1) * dt
        F[O_V:O_V+3, O_BG:O_BG+3] = dbg_row * dt

        V = np.zeros((15, 18))
        V[O_P:O_P+3, 0:3] = 0.25 * R0 * dt**2
        V[O_P:O_P+3, 3:6] = -0.25 * dbg_row * dt**2
        V[O_P:O_P+3, 6:9] = 0.25 * R1 * dt**2
        V[O_P:O_P+3, 9:12] = V[O_P:O_P+3, 3:6]
        V[O_R:O_R+3, 3:6] = 0.5 * Jr * dt
        V[O_R:O_R+3, 9:12] = 0.5 * Jr * dt
        V[O_V:O_V+3, 0:3] = 0.5 * R0 * dt
        V[O_V:O_V+3, 3:6] = -0.5 * dbg_row * dt
        V[O_V:O_V+3, 6:9] = 0.5 * R1 * dt
        V[O_V:O_V+3, 9:12] = V[O_V:O_V+3, 3:6]
        V[O_BA:O_BA+3, 12:15] = I3 * dt
        V[O_BG:O_BG+3, 15:18] = I3 * dt

        Q = np.diag(q_diag(dt))
        P = F @ P @ F.T + V @ Q @ V.T
        P = 0.5 * (P + P.T)
        J = F @ J

        alpha, beta, gamma = alpha_new, beta_new, gamma_new

    return PreintegratedImu(
        dt=float(ts[-1] - ts[0]),
        alpha=alpha, beta=beta, gamma=gamma,
        covariance=P, J_bias=J, ba_lin=ba.copy(), bg_lin=bg.copy(),
    )


BIAS_CORRECTION_RADIUS = 0.1


def bias_correct(pre, dba, dbg):
    """First-order corrected (alpha, beta, gamma) for shifted biases.

    Valid for small |dba|, |dbg| (the correction is linear in the shift);
    beyond ~0.1 the quadratic remainder becomes noticeable and the caller
    should re-preintegrate instead.
    """
    dba = np.asarray(dba, dtype=float).reshape(3)
    dbg = np.asarray(dbg, dtype=float).reshape(3)
    alpha = pre.alpha + pre.dp_dba @ dba + pre.dp_dbg @ dbg
    beta = pre.beta + pre.dv_dba @ dba + pre.dv_dbg @ dbg
    gamma = quat_normalize(quat_mul(pre.gamma, quat_from_rotvec(pre.dq_dbg @ dbg)))
    return alpha, beta, gamma


def propagate_state(p, q, v, pre, gravity):
    """Predict the frame-j state from frame i using the preintegrated batch."""
    R = quat_to_matrix(q)
    dt = pre.dt
    p_j = p + v * dt + 0.5 * gravity * dt**2 + R @ pre.alpha
    v_j = v + gravity * dt + R @ pre.beta
    q_j = quat_normalize(quat_mul(q, pre.gamma))
    return p_j, q_j, v_j


def imu_residual(pre, state_i, state_j, gravity, with_jacobians=False):
    """15-vector inertial residual between two frame states.

    state_{i,j} expose p, q, v, ba, bg (FrameState satisfies this).
    Jacobians (15x15 each, same error ordering as the covariance) are with
    respect to local perturbations of state_i and state_j.
    """
    gravity = np.asarray(gravity, dtype=float).reshape(3)
    dt = pre.dt
    Ri = quat_to_matrix(state_i.q)
    RiT = Ri.T

    dba = state_i.ba - pre.ba_lin
    dbg = state_i.bg - pre.bg_lin
    alpha, beta, gamma = bias_correct(pre, dba, dbg)

    r = np.empty(15)
    rp_pred = RiT @ (state_j.p - state_i.p - state_i.v * dt - 0.5 * gravity * dt**2)
    rv_pred = RiT @ (state_j.v - state_i.v - gravity * dt)
    q_err = quat_mul(quat_conj(gamma), quat_mul(quat_conj(state_i.q), state_j.q))
    r[O_P:O_P+3] = rp_pred - alpha
    r[O_R:O_R+3] = 2.0 * q_err[1:]
    r[O_V:O_V+3] = rv_pred - beta
    r[O_BA:O_BA+3] = state_j.ba - state_i.ba
    r[O_BG:O_BG+3] = state_j.bg - state_i.bg
    if not with_jacobians:
        return r

    gamma_inv = quat_conj(gamma)
    qi_inv_qj = quat_mul(quat_conj(state_i.q), state_j.q)

    Ji = np.zeros((15, 15))
    Ji[O_P:O_P+3, O_P:O_P+3] = -RiT
    Ji[O_P:O_P+3, O_R:O_R+3] = skew(rp_pred)
    Ji[O_P:O_P+3, O_V:O_V+3] = -RiT * dt
    Ji[O_P:O_P+3, O_BA:O_BA+3] = -pre.dp_dba
    Ji[O_P:O_P+3, O_BG:O_BG+3] = -pre.dp_dbg
    Ji[O_R:O_R+3, O_R:O_R+3] = -(quat_left(gamma_inv) @ quat_right(qi_inv_qj))[1:, 1:]
    # gamma depends on bg_i through bias_correct: gamma = gamma0 * Exp(J dbg).
    # Differentiating the exponential exactly (not just at dbg = 0) needs the
    # right Jacobian of SO(3) evaluated at J dbg.
    Jr = right_jacobian_so3(pre.dq_dbg @ dbg)
    Ji[O_R:O_R+3, O_BG:O_BG+3] = -quat_right(q_err)[1:, 1:] @ Jr @ pre.dq_dbg
    Ji[O_V:O_V+3, O_R:O_R+3] = skew(rv_pred)
    Ji[O_V:O_V+3, O_V:O_V+3] = -RiT
    Ji[O_V:O_V+3, O_BA:O_BA+3] = -pre.dv_dba
    Ji[O_V:O_V+3, O_BG:O_BG+3] = -pre.dv_dbg
    Ji[O_BA:O_BA+3, O_BA:O_BA+3] = -np.eye(3)
    Ji[O_BG:O_BG+3, O_BG:O_BG+3] = -np.eye(3)

    Jj = np.zeros((15, 15))
    Jj[O_P:O_P+3, O_P:O_P+3] = RiT
    Jj[O_R:O_R+3, O_R:O_R+3] = (quat_left(quat_mul(gamma_inv, qi_inv_qj)))[1:, 1:]
    Jj[O_V:O_V+3, O_V:O_V+3] = RiT
    Jj[O_BA:O_BA+3, O_BA:O_BA+3] = np.eye(3)
    Jj[O_BG:O_BG+3, O_BG:O_BG+3] = np.eye(3)
    return r, Ji, Jj
