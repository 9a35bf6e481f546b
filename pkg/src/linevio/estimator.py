"""Sliding-window visual-inertial estimator over point and line landmarks.

Each frame carries [p, q, v, b_a, b_g] (15 error-state dimensions, world
position / right-perturbed attitude / world velocity / accel and gyro bias).
Point landmarks are a single inverse depth anchored in the first frame that
observed them; line landmarks are the four orthonormal parameters of a world
line.  A window of at most ``k_max`` frames is optimized with
Levenberg-Marquardt on the manifold; landmark blocks are eliminated with a
Schur complement and the oldest frame is folded into a dense linearized
prior when the window is full.

Gauge freedom (global position + yaw) is pinned with heavily weighted
synthetic residual rows on the first frame whenever no marginalization
prior exists yet; once a prior is present it carries the gauge instead.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .geometry import (GeometryError, OrthonormalLine, Pose, TriangulationError,
                       line_reprojection_residual, orthonormal_from_plucker,
                       point_reprojection_residual, triangulate_line_two_views,
                       triangulate_point_two_views, update_orthonormal)
from .imu import ImuNoiseParams, imu_residual, preintegrate, propagate_state
from .rotations import quat_boxminus, quat_boxplus, quat_normalize, quat_to_matrix
from .selection import (FitError, SelectionConfig, SensitivityRecord,
                        adaptive_weights, fit_location_surface, select_features)


# --------------------------------------------------------------------------
# State containers
# --------------------------------------------------------------------------

@dataclass
class FrameState:
    """One keyframe of the window: timestamped pose, velocity and biases."""

    frame_id: int
    t: float
    p: np.ndarray
    q: np.ndarray                 # unit quaternion [w,x,y,z], w >= 0
    v: np.ndarray
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3).copy()
        self.q = quat_normalize(np.asarray(self.q, dtype=float))
        self.v = np.asarray(self.v, dtype=float).reshape(3).copy()
        self.ba = np.asarray(self.ba, dtype=float).reshape(3).copy()
        self.bg = np.asarray(self.bg, dtype=float).reshape(3).copy()

    @property
    def pose(self):
        return Pose(self.q, self.p)

    def copy(self):
        return FrameState(self.frame_id, self.t, self.p, self.q, self.v,
                          self.ba, self.bg)


@dataclass
class PointLandmark:
    """Inverse-depth point anchored at its host frame.

    obs maps frame id -> (normalized 2-vector, pixel 2-vector); the pixel
    copy feeds the location-score bookkeeping, the normalized one the
    residuals.  inv_depth is None while the track is still pending
    triangulation.
    """

    key: int
    host: int
    inv_depth: float = None
    obs: dict = field(default_factory=dict)


@dataclass
class LineLandmark:
    """Orthonormal world line; obs maps frame id -> (Segment2D normalized,
    pixel midpoint).  oline is None while pending triangulation."""

    key: int
    host: int
    oline: OrthonormalLine = None
    obs: dict = field(default_factory=dict)


@dataclass
class SolverConfig:
    # steady-state window solves exit on step_tol after 2-3 iterations;
    # the budget matters during initialization transients, which must be
    # fully drained before the first marginalization freezes their
    # linearization into the prior
    max_iterations: int = 20
    init_damping: float = 1e-6
    damping_up: float = 10.0
    damping_down: float = 10.0
    # Marquardt scaling multiplies lam by diagonal entries that the stiff
    # inertial rows push to ~1e10, so lam must be allowed far below the
    # classical 1e-10 floor or weakly observable directions (monocular
    # scale on low-excitation arcs) never drain.
    min_damping: float = 1e-15
    max_damping: float = 1e10
    step_tol: float = 1e-10
    # relative cost decrease below which an accepted step counts as
    # converged.  On noisy data the robustified cost bottoms out on a
    # shallow plateau where steps keep being accepted for ~1e-5 relative
    # gains; without this exit every steady-state solve runs to the
    # iteration cap.  Noise-free solves are unaffected: their relative
    # decrease stays near one until the cost hits its floating-point floor.
    ftol: float = 1e-6
    max_retries: int = 12


@dataclass
class EstimatorConfig:
    k_max: int = 10
    sigma_point_px: float = 0.5   # 1-sigma of a point observation, pixels
    sigma_line_px: float = 0.6    # 1-sigma of a line endpoint offset, pixels
    huber_point_px: float = 1.0
    huber_line_px: float = 1.5
    gauge_weight: float = 1e4
    # 1-sigma priors tying the very first frame's velocity and biases to
    # their construction-time values.  Short low-excitation spans leave the
    # velocity<->scale exchange nearly free, so without an anchor the first
    # noisy windows can settle on a rescaled trajectory and the first
    # marginalization freezes it in; any real initialization procedure
    # hands over exactly this kind of covariance.
    init_sigma_v: float = 0.1
    init_sigma_ba: float = 0.05
    init_sigma_bg: float = 0.01
    min_inv_depth: float = 1e-4
    min_rehost_depth: float = 1e-2
    noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    use_selection: bool = True
    # per-kind switches under the master flag, for culling only one family
    select_points: bool = True
    select_lines: bool = True
    selection_min_records: int = 64
    max_records: int = 4000

    @property
    def gravity(self):
        return self.noise.gravity


@dataclass
class MarginalizationPrior:
    """Dense linearized prior || r + J * (x [-] x_lin) ||^2 over the retained
    frames, in window order.  J has 15 columns per frame id."""

    J: np.ndarray
    r: np.ndarray
    frame_ids: list
    lin: dict                     # frame id -> FrameState snapshot

    def delta(self, frames_by_id):
        parts = []
        for fid in self.frame_ids:
            f = frames_by_id[fid]
            f0 = self.lin[fid]
            parts.append(np.concatenate([
                f.p - f0.p,
                quat_boxminus(f.q, f0.q),
                f.v - f0.v,
                f.ba - f0.ba,
                f.bg - f0.bg,
            ]))
        return np.concatenate(parts) if parts else np.zeros(0)

    def residual(self, frames_by_id):
        return self.r + self.J @ self.delta(frames_by_id)

    def info(self):
        return self.J.T @ self.J


@dataclass
class SlidingWindow:
    k_max: int = 10
    frames: list = field(default_factory=list)
    preints: list = field(default_factory=list)   # preints[i]: frames[i] -> frames[i+1]
    points: dict = field(default_factory=dict)    # track id -> PointLandmark
    lines: dict = field(default_factory=dict)     # track id -> LineLandmark
    prior: MarginalizationPrior = None

    def frames_by_id(self):
        return {f.frame_id: f for f in self.frames}

    @property
    def full(self):
        return len(self.frames) > self.k_max


# --------------------------------------------------------------------------
# Problem assembly
# --------------------------------------------------------------------------

def _huber_factor(s, delta):
    """sqrt(rho(s))/s for the Huber loss, applied as a row scale."""
    if s <= delta or s == 0.0:
        return 1.0
    return np.sqrt(2.0 * delta * s - delta * delta) / s


def _gauge_rows(f0, p0, q0, bz, cfg, anchor, with_jacobians):
    """Whitened gauge rows for the first frame, 4 or 13 of them.

    Rows 0-3 pin position and yaw (the directions no measurement sees).
    When `anchor` = (v0, ba0, bg0) is given, nine more rows add the initial
    velocity / bias priors at the configured sigmas.
    """
    n = 4 if anchor is None else 13
    w = cfg.gauge_weight
    r = np.zeros(n)
    r[:3] = w * (f0.p - p0)
    r[3] = w * (bz @ quat_boxminus(f0.q, q0))
    J = None
    if with_jacobians:
        J = np.zeros((n, 15))
        J[:3, :3] = w * np.eye(3)
        J[3, 3:6] = w * bz
    if anchor is not None:
        v0, ba0, bg0 = anchor
        sv, sba, sbg = cfg.init_sigma_v, cfg.init_sigma_ba, cfg.init_sigma_bg
        r[4:7] = (f0.v - v0) / sv
        r[7:10] = (f0.ba - ba0) / sba
        r[10:13] = (f0.bg - bg0) / sbg
        if with_jacobians:
            J[4:7, 6:9] = np.eye(3) / sv
            J[7:10, 9:12] = np.eye(3) / sba
            J[10:13, 12:15] = np.eye(3) / sbg
    return r, J


class Problem:
    """One window's nonlinear least squares, frozen at build time.

    Column layout: [15 per frame | one per selected point | four per
    selected line].  Rows: marginalization prior (or gauge-fixing rows),
    one 15-block per consecutive frame pair, two rows per point observation
    away from its host, two rows per line observation.
    """

    def __init__(self, window, cam, cfg, weights=None,
                 selected_points=None, selected_lines=None,
                 init_anchor=None):
        self.window = window
        self.cam = cam
        self.cfg = cfg
        self.init_anchor = init_anchor
        k = len(window.frames)
        if k < 2:
            raise ValueError("need at least two frames to build a problem")
        self.frame_ids = [f.frame_id for f in window.frames]
        self.slot = {fid: i for i, fid in enumerate(self.frame_ids)}
        self.n_frame_cols = 15 * k

        self.sqrt_wp = np.sqrt(weights.w_p) if weights is not None else 1.0
        self.sqrt_wl = np.sqrt(weights.w_l) if weights is not None else 1.0
        self.inv_sigma_pt = cam.fx / cfg.sigma_point_px
        self.inv_sigma_ln = cam.fx / cfg.sigma_line_px
        self.huber_pt = cfg.huber_point_px / cfg.sigma_point_px
        self.huber_ln = cfg.huber_line_px / cfg.sigma_line_px

        # eligible landmarks: initialized, >= 2 observations, selected
        ids = set(self.frame_ids)
        self.point_items = []     # (key, host slot, [(target slot, xn_h, xn_t)])
        for key, lm in window.points.items():
            if lm.inv_depth is None or len(lm.obs) < 2:
                continue
            if selected_points is not None and key not in selected_points:
                continue
            xn_h = lm.obs[lm.host][0]
            pairs = [(self.slot[fid], xn_h, xn[0])
                     for fid, xn in lm.obs.items()
                     if fid != lm.host and fid in ids]
            if pairs:
                self.point_items.append((key, self.slot[lm.host], pairs))
        self.line_items = []      # (key, [(slot, Segment2D normalized)])
        for key, lm in window.lines.items():
            if lm.oline is None or len(lm.obs) < 2:
                continue
            if selected_lines is not None and key not in selected_lines:
                continue
            items = [(self.slot[fid], ob[0]) for fid, ob in lm.obs.items()
                     if fid in ids]
            if len(items) >= 2:
                self.line_items.append((key, items))

        col = self.n_frame_cols
        self.point_col = {}
        for key, _, _ in self.point_items:
            self.point_col[key] = col
            col += 1
        self.line_col = {}
        for key, _ in self.line_items:
            self.line_col[key] = col
            col += 4
        self.ncols = col
        self.landmark_blocks = ([(self.point_col[k] - self.n_frame_cols, 1)
                                 for k, _, _ in self.point_items] +
                                [(self.line_col[k] - self.n_frame_cols, 4)
                                 for k, _ in self.line_items])

        self.prior = window.prior
        if self.prior is None:
            f0 = window.frames[0]
            self.gauge_p0 = f0.p.copy()
            self.gauge_q0 = f0.q.copy()
            self.gauge_bz = quat_to_matrix(f0.q).T @ np.array([0.0, 0.0, 1.0])

        # per-pair whitening factors from the preintegrated covariances
        self.imu_chol = [np.linalg.cholesky(pre.covariance)
                         for pre in window.preints]

        n_gauge = 0 if self.prior is not None else (
            13 if self.init_anchor is not None else 4)
        self.counts = {
            "prior": self.prior.J.shape[0] if self.prior is not None else 0,
            "gauge": n_gauge,
            "imu": 15 * (k - 1),
            "point": 2 * sum(len(pairs) for _, _, pairs in self.point_items),
            "line": 2 * sum(len(items) for _, items in self.line_items),
        }
        self.n_rows = sum(self.counts.values())
        self.no_visual = self.counts["point"] + self.counts["line"] == 0

    # -- state snapshots ---------------------------------------------------

    def snapshot(self):
        frames = [f.copy() for f in self.window.frames]
        depths = {key: self.window.points[key].inv_depth
                  for key, _, _ in self.point_items}
        olines = {key: self.window.lines[key].oline
                  for key, _ in self.line_items}
        return frames, depths, olines

    def write_back(self, frames, depths, olines):
        self.window.frames[:] = frames
        for key, lam in depths.items():
            self.window.points[key].inv_depth = lam
        for key, o in olines.items():
            self.window.lines[key].oline = o

    def apply_step(self, frames, depths, olines, dx):
        new_frames = []
        for i, f in enumerate(frames):
            d = dx[15 * i:15 * i + 15]
            new_frames.append(FrameState(
                f.frame_id, f.t,
                f.p + d[0:3], quat_boxplus(f.q, d[3:6]), f.v + d[6:9],
                f.ba + d[9:12], f.bg + d[12:15]))
        new_depths = {key: max(lam + dx[self.point_col[key]],
                               self.cfg.min_inv_depth)
                      for key, lam in depths.items()}
        new_olines = {}
        for key, o in olines.items():
            c = self.line_col[key]
            new_olines[key] = update_orthonormal(o, dx[c:c + 3], dx[c + 3])
        return new_frames, new_depths, new_olines

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, frames, depths, olines, with_jacobians):
        """Residual blocks at the given state.

        Returns (blocks, cost, n_invalid) where blocks is a list of
        (r_vec, [(col offset, J_block), ...]) in a fixed deterministic
        order; observations that fall behind a camera contribute zero rows
        so the block layout never changes within a solve.
        """
        cfg = self.cfg
        blocks = []
        cost = 0.0
        n_invalid = 0
        poses = [f.pose for f in frames]
        by_id = {f.frame_id: f for f in frames}

        def add(r, entries):
            nonlocal cost
            cost += float(r @ r)
            blocks.append((r, entries))

        if self.prior is not None:
            pr = self.prior
            r = pr.residual(by_id)
            entries = []
            if with_jacobians:
                for i, fid in enumerate(pr.frame_ids):
                    entries.append((15 * self.slot[fid],
                                    pr.J[:, 15 * i:15 * i + 15]))
            add(r, entries)
        else:
            r, J = _gauge_rows(frames[0], self.gauge_p0, self.gauge_q0,
                               self.gauge_bz, cfg, self.init_anchor,
                               with_jacobians)
            add(r, [(0, J)] if with_jacobians else [])

        for i, pre in enumerate(self.window.preints):
            L = self.imu_chol[i]
            if with_jacobians:
                r, Ji, Jj = imu_residual(pre, frames[i], frames[i + 1],
                                         cfg.gravity, True)
                rw = solve_triangular(L, r, lower=True)
                entries = [(15 * i, solve_triangular(L, Ji, lower=True)),
                           (15 * (i + 1), solve_triangular(L, Jj, lower=True))]
            else:
                r = imu_residual(pre, frames[i], frames[i + 1], cfg.gravity)
                rw = solve_triangular(L, r, lower=True)
                entries = []
            add(rw, entries)

        for key, hslot, pairs in self.point_items:
            lam = depths[key]
            pose_h = poses[hslot]
            pcol = self.point_col[key]
            for tslot, xn_h, xn_t in pairs:
                try:
                    out = point_reprojection_residual(
                        lam, pose_h, poses[tslot], self.cam, xn_h, xn_t,
                        with_jacobians)
                except GeometryError:
                    n_invalid += 1
                    add(np.zeros(2), [])
                    continue
                r = out[0] if with_jacobians else out
                s = float(np.linalg.norm(r)) * self.inv_sigma_pt
                fac = self.inv_sigma_pt * self.sqrt_wp * _huber_factor(
                    s, self.huber_pt)
                entries = []
                if with_jacobians:
                    _, Jh, Jt, Jl = out
                    entries = [(15 * hslot, fac * Jh),
                               (15 * tslot, fac * Jt),
                               (pcol, fac * Jl)]
                add(fac * r, entries)

        for key, items in self.line_items:
            o = olines[key]
            lcol = self.line_col[key]
            for slot, seg in items:
                try:
                    out = line_reprojection_residual(o, poses[slot], self.cam,
                                                     seg, with_jacobians)
                except GeometryError:
                    n_invalid += 1
                    add(np.zeros(2), [])
                    continue
                r = out[0] if with_jacobians else out
                s = float(np.linalg.norm(r)) * self.inv_sigma_ln
                fac = self.inv_sigma_ln * self.sqrt_wl * _huber_factor(
                    s, self.huber_ln)
                entries = []
                if with_jacobians:
                    _, Jp, Jl = out
                    entries = [(15 * slot, fac * Jp), (lcol, fac * Jl)]
                add(fac * r, entries)

        return blocks, cost, n_invalid

    def dense(self, frames=None, depths=None, olines=None):
        """Stacked (r, J) at the given (default: current) state; test hook."""
        if frames is None:
            frames, depths, olines = self.snapshot()
        blocks, _, _ = self.evaluate(frames, depths, olines, True)
        r = np.zeros(self.n_rows)
        J = np.zeros((self.n_rows, self.ncols))
        off = 0
        for rb, entries in blocks:
            m = len(rb)
            r[off:off + m] = rb
            for c, Jb in entries:
                J[off:off + m, c:c + Jb.shape[1]] = Jb
            off += m
        assert off == self.n_rows
        return r, J

    def cost(self, frames=None, depths=None, olines=None):
        if frames is None:
            frames, depths, olines = self.snapshot()
        return self.evaluate(frames, depths, olines, False)[1]


def build_problem(window, cam, cfg, weights=None,
                  selected_points=None, selected_lines=None,
                  init_anchor=None):
    return Problem(window, cam, cfg, weights, selected_points, selected_lines,
                   init_anchor)


# --------------------------------------------------------------------------
# Solving
# --------------------------------------------------------------------------

def _assemble_normal(blocks, ncols):
    H = np.zeros((ncols, ncols))
    g = np.zeros(ncols)
    for r, entries in blocks:
        for c1, J1 in entries:
            w1 = J1.shape[1]
            g[c1:c1 + w1] += J1.T @ r
            for c2, J2 in entries:
                H[c1:c1 + w1, c2:c2 + J2.shape[1]] += J1.T @ J2
    return H, g


def _schur_solve(H, g, lam, n_frame_cols, landmark_blocks):
    """Solve (H + lam diag(H)) dx = -g, eliminating landmark columns.

    The system is Jacobi-equilibrated first: whitened inertial rows put
    ~1e12..1e15 on parts of the diagonal while visual curvature sits around
    1e5, and without rescaling the small directions drown in float64
    roundoff.  On the scaled system Marquardt damping is exactly +lam*I.
    """
    d = H.diagonal().copy()
    if np.any(d < -1e-9 * np.abs(d).max()):
        raise np.linalg.LinAlgError("indefinite diagonal")
    s = 1.0 / np.sqrt(np.maximum(d, 1e-12))
    Hs = H * s[:, None] * s[None, :]
    Hs[np.diag_indices_from(Hs)] += lam
    gs = g * s
    nf = n_frame_cols
    if nf == H.shape[0]:
        y = np.linalg.solve(Hs, -gs)
    else:
        A = Hs[:nf, :nf]
        B = Hs[:nf, nf:]
        C = Hs[nf:, nf:]
        Cinv = np.zeros_like(C)
        for c, w in landmark_blocks:
            if w == 1:
                Cinv[c, c] = 1.0 / C[c, c]
            else:
                Cinv[c:c + w, c:c + w] = np.linalg.inv(C[c:c + w, c:c + w])
        W = B @ Cinv
        Hr = A - W @ B.T
        gr = gs[:nf] - W @ gs[nf:]
        yf = np.linalg.solve(Hr, -gr)
        yl = Cinv @ (-gs[nf:] - B.T @ yf)
        y = np.concatenate([yf, yl])
    dx = s * y
    if not np.all(np.isfinite(dx)):
        raise np.linalg.LinAlgError("non-finite step")
    return dx


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    costs: list
    wall_ms: float
    n_rows: int
    n_invalid: int
    converged: bool


def solve(problem, scfg=None):
    """Levenberg-Marquardt with Marquardt scaling and monotone acceptance.

    Accepted iterates never increase the robustified cost; the final state
    is written back into the problem's window.
    """
    if scfg is None:
        scfg = problem.cfg.solver
    t0 = time.perf_counter()
    frames, depths, olines = problem.snapshot()
    blocks, cost, n_invalid = problem.evaluate(frames, depths, olines, True)
    initial_cost = cost
    costs = [cost]
    lam = scfg.init_damping
    iterations = 0
    converged = False

    for _ in range(scfg.max_iterations):
        iterations += 1
        H, g = _assemble_normal(blocks, problem.ncols)
        accepted = False
        for attempt in range(scfg.max_retries):
            try:
                dx = _schur_solve(H, g, lam, problem.n_frame_cols,
                                  problem.landmark_blocks)
            except np.linalg.LinAlgError:
                lam *= scfg.damping_up
                if lam > scfg.max_damping:
                    break
                continue
            cand = problem.apply_step(frames, depths, olines, dx)
            c2 = problem.evaluate(*cand, False)[1]
            if np.isfinite(c2) and c2 <= cost:
                accepted = True
                break
            lam *= scfg.damping_up
            if lam > scfg.max_damping:
                break
        if not accepted:
            # no step improves the cost at any damping level: the trust
            # region has collapsed, which is convergence in the same sense
            # as a vanishing step
            converged = True
            break
        decrease = cost - c2
        frames, depths, olines = cand
        cost = c2
        costs.append(cost)
        lam = max(lam / scfg.damping_down, scfg.min_damping)
        if float(np.linalg.norm(dx)) < scfg.step_tol:
            converged = True
            break
        # a weak decrease only signals the basin floor when the step was
        # accepted without raising the damping; over-damped steps are
        # always small and say nothing about the landscape
        if attempt == 0 and decrease <= scfg.ftol * max(cost, 1e-300):
            converged = True
            break
        blocks, cost, n_invalid = problem.evaluate(frames, depths, olines, True)
        costs[-1] = cost

    problem.write_back(frames, depths, olines)
    wall_ms = 1e3 * (time.perf_counter() - t0)
    return SolveReport(iterations, initial_cost, cost, costs, wall_ms,
                       problem.n_rows, n_invalid, converged)


# --------------------------------------------------------------------------
# Landmark initialization
# --------------------------------------------------------------------------

def initialize_landmarks(window, cam, cfg):
    """Triangulate pending landmarks that have gathered two observations.

    Points use the first/last observing frames (largest time baseline),
    lines intersect the two back-projected planes.  Failures (low parallax,
    pure rotation, negative depth) leave the landmark pending; calling
    again is a no-op for everything already initialized.
    """
    by_id = window.frames_by_id()
    n_pts = n_lns = 0
    for lm in window.points.values():
        if lm.inv_depth is not None or len(lm.obs) < 2:
            continue
        fids = sorted(lm.obs)
        lm.host = fids[0]
        try:
            lam = triangulate_point_two_views(
                lm.obs[fids[0]][0], by_id[fids[0]].pose,
                lm.obs[fids[-1]][0], by_id[fids[-1]].pose, cam)
        except TriangulationError:
            continue
        lm.inv_depth = max(lam, cfg.min_inv_depth)
        n_pts += 1
    for lm in window.lines.values():
        if lm.oline is not None or len(lm.obs) < 2:
            continue
        fids = sorted(lm.obs)
        lm.host = fids[0]
        try:
            plk = triangulate_line_two_views(
                lm.obs[fids[0]][0], by_id[fids[0]].pose,
                lm.obs[fids[-1]][0], by_id[fids[-1]].pose, cam)
            lm.oline = orthonormal_from_plucker(plk)
        except (TriangulationError, GeometryError):
            continue
        n_lns += 1
    return {"points": n_pts, "lines": n_lns}


# --------------------------------------------------------------------------
# Marginalization
# --------------------------------------------------------------------------

def _acc_normal(H, b, r, entries):
    for c1, J1 in entries:
        w1 = J1.shape[1]
        b[c1:c1 + w1] += J1.T @ r
        for c2, J2 in entries:
            H[c1:c1 + w1, c2:c2 + J2.shape[1]] += J1.T @ J2


def marginalize_oldest(window, cam, cfg, weights=None, init_anchor=None):
    """Fold the oldest frame into a dense linearized prior and slide.

    The marginal problem gathers every residual touching the departing
    frame or an inverse depth hosted there: the existing prior (or the
    gauge rows), the first IMU block, and all observations of points
    anchored at the oldest frame.  Line observations at the departing
    frame are dropped instead of marginalized; lines anchored there are
    reset to pending and re-triangulated from their remaining views.
    Points keep their remaining observations under a new host (their
    inverse depth is re-expressed in the new host camera), which re-uses
    information already absorbed by the prior -- the usual sliding-window
    approximation.
    """
    frames = window.frames
    if len(frames) < 2:
        raise ValueError("cannot marginalize a single-frame window")
    f0 = frames[0]
    fid0 = f0.frame_id
    retained = frames[1:]
    sqrt_wp = np.sqrt(weights.w_p) if weights is not None else 1.0
    inv_sigma_pt = cam.fx / cfg.sigma_point_px
    huber_pt = cfg.huber_point_px / cfg.sigma_point_px

    marg_keys = [key for key, lm in window.points.items()
                 if lm.host == fid0 and lm.inv_depth is not None
                 and len(lm.obs) >= 2]

    # columns: [frame0 | marginalized depths | retained frames]
    m = 15 + len(marg_keys)
    n = m + 15 * len(retained)
    lam_col = {key: 15 + i for i, key in enumerate(marg_keys)}
    keep_col = {f.frame_id: m + 15 * i for i, f in enumerate(retained)}

    def frame_col(fid):
        return 0 if fid == fid0 else keep_col[fid]

    H = np.zeros((n, n))
    b = np.zeros(n)
    by_id = window.frames_by_id()
    poses = {f.frame_id: f.pose for f in frames}

    if window.prior is not None:
        pr = window.prior
        r = pr.residual(by_id)
        entries = [(frame_col(fid), pr.J[:, 15 * i:15 * i + 15])
                   for i, fid in enumerate(pr.frame_ids)]
        _acc_normal(H, b, r, entries)
    else:
        # position/yaw re-anchor at the current state (zero residual, pure
        # gauge); the velocity/bias anchor keeps its original reference so
        # its pull survives into the prior
        bz = quat_to_matrix(f0.q).T @ np.array([0.0, 0.0, 1.0])
        r, J = _gauge_rows(f0, f0.p, f0.q, bz, cfg, init_anchor, True)
        _acc_normal(H, b, r, [(0, J)])

    pre = window.preints[0]
    L = np.linalg.cholesky(pre.covariance)
    r, Ji, Jj = imu_residual(pre, frames[0], frames[1], cfg.gravity, True)
    _acc_normal(H, b, solve_triangular(L, r, lower=True),
                [(0, solve_triangular(L, Ji, lower=True)),
                 (frame_col(frames[1].frame_id),
                  solve_triangular(L, Jj, lower=True))])

    for key in marg_keys:
        lm = window.points[key]
        xn_h = lm.obs[fid0][0]
        for fid, ob in lm.obs.items():
            if fid == fid0:
                continue
            try:
                rr, Jh, Jt, Jl = point_reprojection_residual(
                    lm.inv_depth, poses[fid0], poses[fid], cam, xn_h, ob[0],
                    True)
            except GeometryError:
                continue
            s = float(np.linalg.norm(rr)) * inv_sigma_pt
            fac = inv_sigma_pt * sqrt_wp * _huber_factor(s, huber_pt)
            _acc_normal(H, b, fac * rr,
                        [(0, fac * Jh), (frame_col(fid), fac * Jt),
                         (lam_col[key], fac * Jl)])

    Hmm = H[:m, :m]
    Hkm = H[m:, :m]
    Hkk = H[m:, m:]
    Hmm_inv = np.linalg.pinv(0.5 * (Hmm + Hmm.T), hermitian=True, rcond=1e-10)
    H_star = Hkk - Hkm @ Hmm_inv @ Hkm.T
    b_star = b[m:] - Hkm @ Hmm_inv @ b[:m]
    H_star = 0.5 * (H_star + H_star.T)

    S, V = np.linalg.eigh(H_star)
    keep = S > 1e-8
    S = S[keep]
    V = V[:, keep]
    sqrt_s = np.sqrt(S)
    J0 = (sqrt_s[:, None] * V.T)
    r0 = (V.T @ b_star) / sqrt_s
    prior = MarginalizationPrior(
        J0, r0, [f.frame_id for f in retained],
        {f.frame_id: f.copy() for f in retained})

    # --- slide the window -------------------------------------------------
    window.frames.pop(0)
    window.preints.pop(0)
    T_wc0 = f0.pose.compose(cam.T_bc)

    for key in list(window.points):
        lm = window.points[key]
        ob0 = lm.obs.pop(fid0, None)
        if lm.host != fid0:
            continue
        if not lm.obs:
            del window.points[key]
            continue
        new_host = min(lm.obs)
        if lm.inv_depth is not None:
            xn = ob0[0]
            p_w = T_wc0.transform(np.array([xn[0], xn[1], 1.0]) / lm.inv_depth)
            T_wc = by_id[new_host].pose.compose(cam.T_bc)
            pc = T_wc.inverse().transform(p_w)
            if pc[2] <= cfg.min_rehost_depth:
                del window.points[key]
                continue
            lm.inv_depth = 1.0 / pc[2]
        lm.host = new_host

    for key in list(window.lines):
        lm = window.lines[key]
        lm.obs.pop(fid0, None)
        if lm.host != fid0:
            continue
        if not lm.obs:
            del window.lines[key]
            continue
        lm.host = min(lm.obs)
        lm.oline = None           # re-triangulated from the remaining views

    window.prior = prior
    return prior


# --------------------------------------------------------------------------
# Full pipeline
# --------------------------------------------------------------------------

class Estimator:
    """Tracks-in, trajectory-out odometry front door.

    Feed one frame per call: the tracker output (points with pixel
    positions, lines with pixel segments), the IMU batch spanning the gap
    since the previous frame, and the scene-brightness proxy.  The window
    is optimized after every frame and per-frame metrics are returned.
    """

    def __init__(self, cam, cfg=None, init_state=None):
        self.cam = cam
        self.cfg = cfg if cfg is not None else EstimatorConfig()
        self.window = SlidingWindow(k_max=self.cfg.k_max)
        self.records = []
        self.point_model = None
        self.line_model = None
        self.frame_count = 0
        self.illum = {}
        if init_state is None:
            init_state = (np.zeros(3), np.array([1.0, 0, 0, 0]), np.zeros(3))
        self._init_state = init_state
        rest = init_state[3:]
        self._init_anchor = (
            np.asarray(init_state[2], dtype=float).copy(),
            np.asarray(rest[0], dtype=float).copy() if len(rest) > 0
            else np.zeros(3),
            np.asarray(rest[1], dtype=float).copy() if len(rest) > 1
            else np.zeros(3))

    # -- helpers -------------------------------------------------------------

    def _ingest(self, fid, point_tracks, line_tracks):
        for tp in point_tracks:
            lm = self.window.points.get(tp.id)
            if lm is None:
                lm = PointLandmark(tp.id, fid)
                self.window.points[tp.id] = lm
            px = np.asarray(tp.px, dtype=float)
            lm.obs[fid] = (self.cam.pixel_to_normalized(px), px.copy())
        for tl in line_tracks:
            lm = self.window.lines.get(tl.id)
            if lm is None:
                lm = LineLandmark(tl.id, fid)
                self.window.lines[tl.id] = lm
            seg = tl.seg
            seg_n = type(seg)(self.cam.pixel_to_normalized(seg.e1),
                              self.cam.pixel_to_normalized(seg.e2))
            lm.obs[fid] = (seg_n, seg.center())

    def _window_counts(self):
        first = self.window.frames[0].frame_id
        m_p = sum(1 for lm in self.window.points.values() if first in lm.obs)
        m_l = sum(1 for lm in self.window.lines.values() if first in lm.obs)
        return m_p, m_l

    def _selection_masks(self):
        """Cull low-scoring landmarks by their first in-window location."""
        cfg = self.cfg
        sel_p = sel_l = None
        if not cfg.use_selection:
            return sel_p, sel_l
        if cfg.select_points and self.point_model is not None:
            keys = [k for k, lm in self.window.points.items()
                    if lm.inv_depth is not None and len(lm.obs) >= 2]
            if keys:
                locs = np.array([self.window.points[k].obs[min(
                    self.window.points[k].obs)][1] for k in keys])
                mask = select_features(locs, self.point_model,
                                       cfg.selection.quantile_points,
                                       cfg.selection.min_keep_points)
                sel_p = {k for k, keep in zip(keys, mask) if keep}
        if cfg.select_lines and self.line_model is not None:
            keys = [k for k, lm in self.window.lines.items()
                    if lm.oline is not None and len(lm.obs) >= 2]
            if keys:
                locs = np.array([self.window.lines[k].obs[min(
                    self.window.lines[k].obs)][1] for k in keys])
                mask = select_features(locs, self.line_model,
                                       cfg.selection.quantile_lines,
                                       cfg.selection.min_keep_lines)
                sel_l = {k for k, keep in zip(keys, mask) if keep}
        return sel_p, sel_l

    def _collect_records(self):
        """Harvest (location -> within-window survival) pairs as the oldest
        frame leaves a saturated window."""
        win_ids = {f.frame_id for f in self.window.frames}
        first = self.window.frames[0].frame_id
        for lm in self.window.points.values():
            if first in lm.obs:
                length = sum(1 for fid in lm.obs if fid in win_ids)
                self.records.append(SensitivityRecord(
                    "point", lm.obs[first][1], length))
        for lm in self.window.lines.values():
            if first in lm.obs:
                length = sum(1 for fid in lm.obs if fid in win_ids)
                self.records.append(SensitivityRecord(
                    "line", lm.obs[first][1], length))
        if len(self.records) > self.cfg.max_records:
            self.records = self.records[-self.cfg.max_records:]

    def _refit_models(self):
        cfg = self.cfg
        pts = [r for r in self.records if r.kind == "point"]
        lns = [r for r in self.records if r.kind == "line"]
        if len(pts) >= cfg.selection_min_records:
            try:
                self.point_model = fit_location_surface(pts,
                                                        cfg.selection.degree)
            except (FitError, ValueError):
                pass
        if len(lns) >= cfg.selection_min_records:
            try:
                self.line_model = fit_location_surface(lns,
                                                       cfg.selection.degree)
            except (FitError, ValueError):
                pass

    # -- main entry ----------------------------------------------------------

    def step(self, t, imu_samples, point_tracks, line_tracks, illum=1.0):
        cfg = self.cfg
        fid = self.frame_count
        self.frame_count += 1
        window = self.window

        if fid == 0:
            p0, q0, v0 = self._init_state[:3]
            rest = self._init_state[3:]
            ba0 = rest[0] if len(rest) > 0 else np.zeros(3)
            bg0 = rest[1] if len(rest) > 1 else np.zeros(3)
            window.frames.append(FrameState(fid, t, p0, q0, v0, ba0, bg0))
        else:
            last = window.frames[-1]
            pre = preintegrate(imu_samples, last.ba, last.bg, cfg.noise)
            p, q, v = propagate_state(last.p, last.q, last.v, pre, cfg.gravity)
            window.preints.append(pre)
            window.frames.append(FrameState(fid, t, p, q, v, last.ba, last.bg))

        self._ingest(fid, point_tracks, line_tracks)
        self.illum[fid] = float(illum)
        initialize_landmarks(window, self.cam, cfg)

        metrics = {"frame": fid, "t": t, "n_frames": len(window.frames)}
        if len(window.frames) < 2:
            metrics.update(iterations=0, wall_ms=0.0, initial_cost=0.0,
                           final_cost=0.0, rows_point=0, rows_line=0,
                           rows_total=0, w_p=1.0, w_l=0.0, m_p=0, m_l=0,
                           n_points=0, n_lines=0, marginalized=False)
            return metrics

        m_p, m_l = self._window_counts()
        weights = adaptive_weights(m_p, m_l, cfg.selection)
        sel_p, sel_l = self._selection_masks()
        problem = build_problem(window, self.cam, cfg, weights, sel_p, sel_l,
                                init_anchor=self._init_anchor)
        report = solve(problem, cfg.solver)

        marginalized = False
        if window.full:
            self._collect_records()
            self._refit_models()
            marginalize_oldest(window, self.cam, cfg, weights,
                               init_anchor=self._init_anchor)
            marginalized = True

        metrics.update(
            iterations=report.iterations, wall_ms=report.wall_ms,
            initial_cost=report.initial_cost, final_cost=report.final_cost,
            rows_point=problem.counts["point"],
            rows_line=problem.counts["line"], rows_total=problem.n_rows,
            w_p=weights.w_p, w_l=weights.w_l, m_p=m_p, m_l=m_l,
            n_points=len(problem.point_items),
            n_lines=len(problem.line_items), marginalized=marginalized,
            n_invalid=report.n_invalid, converged=report.converged,
            regime=weights.regime)
        return metrics

    @property
    def current_state(self):
        return self.window.frames[-1]
