"""Scenario runner, trajectory evaluation, and the ablation CLI.

A scenario is a JSON document with sections world / trajectory / sensors /
noise / detection / illumination / tracker / estimator / selection / init.
Every section is optional; the empty document is the default benchmark: a
10 s circle at 20 Hz with zero sensor noise.  Unknown keys anywhere are
rejected with a dotted-path diagnostic before anything runs.

``run_scenario`` executes one scenario end to end and drops its artifacts
into the output directory:

    estimated.tum / groundtruth.tum   trajectories, 9 significant digits
    frames.jsonl                      per-frame solver metrics
    weights.csv                       adaptive point/line weight series
    conditions.csv                    per-window illumination and motion
    records.csv                       (location, track length) samples
    location_surface_points.csv       fitted score surface, when available
    location_surface_lines.csv
    metrics.json                      the RunReport

Subcommands: ``run`` (one scenario), ``ablate`` (2x2 selection grid with a
comparison table), ``sensitivity`` (same run, prints the fit summary),
``evaluate`` (RMSE between two TUM files).  Exit codes: 0 ok, 2 config
problem, 3 estimator/evaluation failure.

Determinism: everything is keyed off the scenario seeds (IMU noise uses
the master seed, detection seed+1, tracker flow seed+2), so reruns
reproduce every artifact byte for byte except wall-clock timings.
"""

import argparse
import copy
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .estimator import Estimator, EstimatorConfig, SolverConfig
from .geometry import PinholeCamera, Pose
from .imu import ImuNoiseParams
from .rotations import quat_boxplus
from .selection import (SelectionConfig, compute_window_stats, surface_grid)
from .simulator import (DetectionConfig, FlowOracle, IlluminationSpec,
                        TrajectorySpec, World, default_camera,
                        illumination_profile, read_tum, synthesize_frame,
                        synthesize_imu, trajectory_states, write_tum)
from .tracker import LineTracker, PointTracker, TrackerConfig, pixel_detections


class ConfigError(ValueError):
    """Malformed scenario configuration; the CLI maps this to exit code 2."""


class EstimatorFailure(RuntimeError):
    """Estimator abort wrapped with the frame index; exit code 3."""

    def __init__(self, frame, cause):
        super().__init__("estimator failed at frame %d: %s" % (frame, cause))
        self.frame = frame
        self.cause = cause


class InsufficientOverlapError(RuntimeError):
    """Fewer than three associated pose pairs between the trajectories."""


# --------------------------------------------------------------------------
# Scenario configuration
# --------------------------------------------------------------------------

@dataclasses.dataclass
class ScenarioConfig:
    seed: int = 0
    frames: int = 0               # 0 = run the full trajectory grid
    world_seed: int = 1
    world_points: int = 300
    world_segments: int = 40
    world_size: tuple = (12.0, 12.0, 4.0)
    spec: TrajectorySpec = dataclasses.field(default_factory=TrajectorySpec)
    cam: PinholeCamera = dataclasses.field(default_factory=default_camera)
    noise: ImuNoiseParams = dataclasses.field(
        default_factory=lambda: ImuNoiseParams(0.0, 0.0, 0.0, 0.0))
    detection: DetectionConfig = dataclasses.field(
        default_factory=lambda: DetectionConfig(
            sigma_line_px=0.0, sigma_point_px=0.0, p_split=0.0))
    illum: IlluminationSpec = dataclasses.field(default_factory=IlluminationSpec)
    tracker: TrackerConfig = dataclasses.field(
        default_factory=lambda: TrackerConfig(target_points=60))
    est: EstimatorConfig = dataclasses.field(default_factory=EstimatorConfig)
    sigma_flow_px: float = 0.0
    flow_illum_gain: float = 2.0
    use_lines: bool = True
    init_dp: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))
    init_dtheta_deg: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(3))
    init_dv: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))

    def n_frames(self):
        n = len(self.spec.frame_times())
        return min(self.frames, n) if self.frames else n


def _check_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError("expected an object at %s" % path)
    return value


def _pop_scalar(section, key, path, kind, default):
    if key not in section:
        return default
    v = section.pop(key)
    here = "%s.%s" % (path, key)
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError("expected true/false at %s" % here)
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError("expected an integer at %s" % here)
        return v
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("expected a number at %s" % here)
        return float(v)
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError("expected a string at %s" % here)
        return v
    raise AssertionError(kind)


def _pop_vec3(section, key, path, default):
    if key not in section:
        return default
    v = section.pop(key)
    here = "%s.%s" % (path, key)
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or any(isinstance(x, bool) or not isinstance(x, (int, float))
                   for x in v)):
        raise ConfigError("expected a list of 3 numbers at %s" % here)
    return np.array(v, dtype=float)


def _reject_leftovers(section, path):
    if section:
        key = sorted(section)[0]
        raise ConfigError("unknown key '%s' at %s" % (key, path))


def _fill_dataclass(obj, section, path, int_fields=()):
    """Overwrite scalar dataclass fields from a config section, strictly."""
    for f in dataclasses.fields(obj):
        if f.name not in section:
            continue
        kind = int if f.name in int_fields else float
        setattr(obj, f.name, _pop_scalar(section, f.name, path, kind, None))
    _reject_leftovers(section, path)
    return obj


def parse_scenario(doc, path="config"):
    doc = dict(_check_mapping(doc, path))
    scn = ScenarioConfig()
    scn.seed = _pop_scalar(doc, "seed", path, int, scn.seed)
    scn.frames = _pop_scalar(doc, "frames", path, int, scn.frames)

    if "world" in doc:
        sec = dict(_check_mapping(doc.pop("world"), path + ".world"))
        p = path + ".world"
        scn.world_seed = _pop_scalar(sec, "seed", p, int, scn.world_seed)
        scn.world_points = _pop_scalar(sec, "n_points", p, int, scn.world_points)
        scn.world_segments = _pop_scalar(sec, "n_segments", p, int,
                                         scn.world_segments)
        size = _pop_vec3(sec, "size", p, None)
        if size is not None:
            scn.world_size = tuple(size)
        _reject_leftovers(sec, p)

    if "trajectory" in doc:
        sec = dict(_check_mapping(doc.pop("trajectory"), path + ".trajectory"))
        p = path + ".trajectory"
        kind = _pop_scalar(sec, "kind", p, str, "circle")
        duration = _pop_scalar(sec, "duration", p, float, 10.0)
        cam_rate = _pop_scalar(sec, "cam_rate", p, float, 20.0)
        imu_rate = _pop_scalar(sec, "imu_rate", p, float, 500.0)
        params = sec.pop("params", {})
        _check_mapping(params, p + ".params")
        _reject_leftovers(sec, p)
        try:
            scn.spec = TrajectorySpec(kind=kind, duration=duration,
                                      cam_rate=cam_rate, imu_rate=imu_rate,
                                      params=dict(params))
        except ValueError as e:
            raise ConfigError("%s: %s" % (p, e))

    if "sensors" in doc:
        sec = dict(_check_mapping(doc.pop("sensors"), path + ".sensors"))
        p = path + ".sensors"
        scn.sigma_flow_px = _pop_scalar(sec, "sigma_flow_px", p, float,
                                        scn.sigma_flow_px)
        scn.flow_illum_gain = _pop_scalar(sec, "flow_illum_gain", p, float,
                                          scn.flow_illum_gain)
        if "camera" in sec:
            csec = dict(_check_mapping(sec.pop("camera"), p + ".camera"))
            cp = p + ".camera"
            base = default_camera()
            vals = {k: _pop_scalar(csec, k, cp, float, getattr(base, k))
                    for k in ("fx", "fy", "cx", "cy")}
            width = _pop_scalar(csec, "width", cp, int, base.width)
            height = _pop_scalar(csec, "height", cp, int, base.height)
            _reject_leftovers(csec, cp)
            scn.cam = PinholeCamera(vals["fx"], vals["fy"], vals["cx"],
                                    vals["cy"], width, height, base.T_bc)
        _reject_leftovers(sec, p)

    if "noise" in doc:
        sec = dict(_check_mapping(doc.pop("noise"), path + ".noise"))
        p = path + ".noise"
        gravity = _pop_vec3(sec, "gravity", p, scn.noise.gravity)
        kw = {k: _pop_scalar(sec, k, p, float, getattr(scn.noise, k))
              for k in ("sigma_g", "sigma_a", "sigma_bg", "sigma_ba")}
        _reject_leftovers(sec, p)
        scn.noise = ImuNoiseParams(gravity=gravity, **kw)

    if "detection" in doc:
        sec = dict(_check_mapping(doc.pop("detection"), path + ".detection"))
        _fill_dataclass(scn.detection, sec, path + ".detection")

    if "illumination" in doc:
        sec = dict(_check_mapping(doc.pop("illumination"),
                                  path + ".illumination"))
        p = path + ".illumination"
        base = _pop_scalar(sec, "base", p, float, 1.0)
        dips = sec.pop("dips", [])
        if not isinstance(dips, list):
            raise ConfigError("expected a list at %s.dips" % p)
        out = []
        for i, dip in enumerate(dips):
            if (not isinstance(dip, (list, tuple)) or len(dip) != 3
                    or any(isinstance(x, bool) or not isinstance(x, (int, float))
                           for x in dip)):
                raise ConfigError(
                    "expected [t0, t1, level] at %s.dips[%d]" % (p, i))
            out.append(tuple(float(x) for x in dip))
        _reject_leftovers(sec, p)
        scn.illum = IlluminationSpec(base=base, dips=tuple(out))

    if "tracker" in doc:
        sec = dict(_check_mapping(doc.pop("tracker"), path + ".tracker"))
        _fill_dataclass(scn.tracker, sec, path + ".tracker",
                        int_fields=("knn_k", "width", "height",
                                    "target_points"))

    if "estimator" in doc:
        sec = dict(_check_mapping(doc.pop("estimator"), path + ".estimator"))
        p = path + ".estimator"
        if "solver" in sec:
            ssec = dict(_check_mapping(sec.pop("solver"), p + ".solver"))
            _fill_dataclass(scn.est.solver, ssec, p + ".solver",
                            int_fields=("max_iterations", "max_retries"))
        if "selection" in sec:
            ssec = dict(_check_mapping(sec.pop("selection"), p + ".selection"))
            _fill_dataclass(scn.est.selection, ssec, p + ".selection",
                            int_fields=("degree", "min_keep_points",
                                        "min_keep_lines"))
        for name in ("k_max", "selection_min_records", "max_records"):
            setattr(scn.est, name, _pop_scalar(sec, name, p, int,
                                               getattr(scn.est, name)))
        for name in ("sigma_point_px", "sigma_line_px", "huber_point_px",
                     "huber_line_px", "gauge_weight", "min_inv_depth",
                     "min_rehost_depth"):
            setattr(scn.est, name, _pop_scalar(sec, name, p, float,
                                               getattr(scn.est, name)))
        _reject_leftovers(sec, p)

    if "selection" in doc:
        sec = dict(_check_mapping(doc.pop("selection"), path + ".selection"))
        p = path + ".selection"
        scn.est.select_points = _pop_scalar(sec, "points", p, bool,
                                            scn.est.select_points)
        scn.est.select_lines = _pop_scalar(sec, "lines", p, bool,
                                           scn.est.select_lines)
        _reject_leftovers(sec, p)

    if "init" in doc:
        sec = dict(_check_mapping(doc.pop("init"), path + ".init"))
        p = path + ".init"
        scn.init_dp = _pop_vec3(sec, "dp", p, scn.init_dp)
        scn.init_dtheta_deg = _pop_vec3(sec, "dtheta_deg", p,
                                        scn.init_dtheta_deg)
        scn.init_dv = _pop_vec3(sec, "dv", p, scn.init_dv)
        _reject_leftovers(sec, p)

    _reject_leftovers(doc, path)
    scn.est.noise = scn.noise
    return scn


def load_scenario(config_path):
    try:
        with open(config_path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("cannot read config: %s" % e)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("%s: line %d column %d: %s"
                          % (config_path, e.lineno, e.colno, e.msg))
    return parse_scenario(doc, path=os.path.basename(config_path))


# --------------------------------------------------------------------------
# Trajectory evaluation
# --------------------------------------------------------------------------

def rigid_align(src, dst):
    """Closed-form R, t minimizing sum ||R src + t - dst||^2 (no scale)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    cov = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def associate(times_a, times_b, max_dt):
    """Indices pairing each a-stamp with its nearest b-stamp within max_dt."""
    times_b = np.asarray(times_b, dtype=float)
    order = np.argsort(times_b)
    tb = times_b[order]
    pairs = []
    for i, t in enumerate(np.asarray(times_a, dtype=float)):
        j = int(np.searchsorted(tb, t))
        best = min((jj for jj in (j - 1, j) if 0 <= jj < len(tb)),
                   key=lambda jj: abs(tb[jj] - t))
        if abs(tb[best] - t) <= max_dt:
            pairs.append((i, int(order[best])))
    return pairs


def compute_ate_rmse(times_est, pos_est, times_gt, pos_gt, max_dt=None):
    """Translation RMSE after rigid alignment of associated positions.

    Association is nearest-timestamp within ``max_dt`` (default: half the
    median ground-truth frame period).
    """
    times_gt = np.asarray(times_gt, dtype=float)
    if max_dt is None:
        if len(times_gt) < 2:
            raise InsufficientOverlapError("ground truth has < 2 stamps")
        max_dt = 0.5 * float(np.median(np.diff(np.sort(times_gt))))
    pairs = associate(times_est, times_gt, max_dt)
    if len(pairs) < 3:
        raise InsufficientOverlapError(
            "only %d associated pose pairs (need >= 3)" % len(pairs))
    ia, ib = np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    A = np.asarray(pos_est, dtype=float)[ia]
    B = np.asarray(pos_gt, dtype=float)[ib]
    R, t = rigid_align(A, B)
    err = (A @ R.T + t) - B
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


# --------------------------------------------------------------------------
# Scenario execution
# --------------------------------------------------------------------------

WARMUP_FRAMES = 10


@dataclasses.dataclass
class RunReport:
    translation_rmse_m: float
    path_length_m: float
    rmse_pct_path: float
    n_frames: int
    total_optimization_time_ms: float
    mean_optimization_time_ms: float
    warmup_frames_excluded: int
    mean_point_features: float
    mean_line_features: float
    mean_w_p: float
    mean_w_l: float
    alignment: str
    estimated_tum: str
    groundtruth_tum: str
    frames_jsonl: str
    weights_csv: str
    conditions_csv: str
    records_csv: str


def _py(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def run_scenario(scn, out_dir):
    """Execute one scenario; writes artifacts and returns the RunReport."""
    os.makedirs(out_dir, exist_ok=True)
    spec = scn.spec
    cam = scn.cam
    n = scn.n_frames()
    world = World.box_room(seed=scn.world_seed, n_points=scn.world_points,
                           n_segments=scn.world_segments, size=scn.world_size)
    samples = synthesize_imu(spec, scn.noise, seed=scn.seed)
    step = int(round(spec.imu_rate / spec.cam_rate))
    times = spec.frame_times()[:n]
    gt_p, gt_q, gt_v = trajectory_states(spec, times)

    p0 = gt_p[0] + scn.init_dp
    q0 = quat_boxplus(gt_q[0], np.deg2rad(scn.init_dtheta_deg))
    v0 = gt_v[0] + scn.init_dv
    cfg = copy.deepcopy(scn.est)
    est = Estimator(cam, cfg, init_state=(p0, q0, v0))

    flow = FlowOracle(world, spec, cam, sigma_flow_px=scn.sigma_flow_px,
                      seed=scn.seed + 2, illum=scn.illum,
                      illum_gain=scn.flow_illum_gain)
    ptrack = PointTracker(flow, scn.tracker)
    ltrack = LineTracker(flow, scn.tracker)

    rows, conditions = [], []
    # exported trajectory is the fixed-lag smoothed one: every frame keeps
    # the value it had when it last sat in the optimization window, so the
    # initialization transient is polished away by later evidence
    final_pose = {}
    for k in range(n):
        t = float(times[k])
        bright = illumination_profile(scn.illum, t)
        obs = synthesize_frame(world, spec, cam, t, scn.detection,
                               illum=scn.illum, seed=scn.seed + 1)
        pts, lines = pixel_detections(obs, cam)
        tracked_pts = ptrack.step(k, pts)
        tracked_lines = ltrack.step(k, lines) if scn.use_lines else []
        batch = samples[(k - 1) * step:k * step + 1] if k else []
        try:
            m = est.step(t, batch, tracked_pts, tracked_lines, illum=bright)
        except Exception as e:
            raise EstimatorFailure(k, e)
        m["illum"] = bright
        rows.append(m)
        w = est.window
        stats = compute_window_stats(
            w.frames[0].p, w.frames[-1].p,
            [est.illum[f.frame_id] for f in w.frames],
            m.get("m_p", 0), m.get("m_l", 0))
        conditions.append((k, t, stats.I_t, stats.M_t, stats.M_p, stats.M_l))
        for fr in w.frames:
            final_pose[fr.frame_id] = Pose(fr.q.copy(), fr.p.copy())
    est_poses = [final_pose[k] for k in range(n)]

    est_tum = os.path.join(out_dir, "estimated.tum")
    gt_tum = os.path.join(out_dir, "groundtruth.tum")
    write_tum(est_tum, times, est_poses)
    write_tum(gt_tum, times, [Pose(q, p) for p, q in zip(gt_p, gt_q)])

    frames_path = os.path.join(out_dir, "frames.jsonl")
    with open(frames_path, "w") as f:
        for m in rows:
            f.write(json.dumps(m, sort_keys=True, default=_py) + "\n")

    weights_path = os.path.join(out_dir, "weights.csv")
    _write_csv(weights_path,
               ["frame", "t", "w_p", "w_l", "m_p", "m_l", "regime"],
               [(m["frame"], m["t"], m["w_p"], m["w_l"], m["m_p"], m["m_l"],
                 m.get("regime", "")) for m in rows if "m_p" in m])

    cond_path = os.path.join(out_dir, "conditions.csv")
    _write_csv(cond_path, ["frame", "t", "I_t", "M_t", "M_p", "M_l"],
               conditions)

    rec_path = os.path.join(out_dir, "records.csv")
    _write_csv(rec_path, ["kind", "x", "y", "track_length"],
               [(r.kind, r.location[0], r.location[1], r.track_length)
                for r in est.records])
    for kind, model in (("points", est.point_model), ("lines", est.line_model)):
        if model is None:
            continue
        grid = surface_grid(model, cam.width, cam.height)
        _write_csv(os.path.join(out_dir, "location_surface_%s.csv" % kind),
                   ["x", "y", "score"], [tuple(row) for row in grid])

    pos_est = np.array([pose.t for pose in est_poses])
    rmse = compute_ate_rmse(times, pos_est, times, gt_p)
    path_len = float(np.sum(np.linalg.norm(np.diff(gt_p, axis=0), axis=1)))

    timed = [m for m in rows[WARMUP_FRAMES:] if "wall_ms" in m]
    total_ms = float(sum(m["wall_ms"] for m in timed))
    solved = [m for m in rows if m.get("rows_total", 0) > 0]
    report = RunReport(
        translation_rmse_m=rmse,
        path_length_m=path_len,
        rmse_pct_path=100.0 * rmse / path_len if path_len else 0.0,
        n_frames=n,
        total_optimization_time_ms=total_ms,
        mean_optimization_time_ms=total_ms / len(timed) if timed else 0.0,
        warmup_frames_excluded=min(WARMUP_FRAMES, n),
        mean_point_features=float(np.mean([m["n_points"] for m in solved]))
        if solved else 0.0,
        mean_line_features=float(np.mean([m["n_lines"] for m in solved]))
        if solved else 0.0,
        mean_w_p=float(np.mean([m["w_p"] for m in solved])) if solved else 1.0,
        mean_w_l=float(np.mean([m["w_l"] for m in solved])) if solved else 0.0,
        alignment="rigid",
        estimated_tum=est_tum,
        groundtruth_tum=gt_tum,
        frames_jsonl=frames_path,
        weights_csv=weights_path,
        conditions_csv=cond_path,
        records_csv=rec_path,
    )
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        json.dump(dataclasses.asdict(report), f, indent=2, sort_keys=True)
        f.write("\n")
    return report


# --------------------------------------------------------------------------
# Ablation grid
# --------------------------------------------------------------------------

# columns: (label, directory slug, select points, select lines); the header
# labels follow the published comparison's column layout, which the body
# text disambiguates as reference / line-only / point-only / both
GRID = (
    ("Point (x) Line (x) Reference", "reference", False, False),
    ("Point (x) Line (o)", "line_selection", False, True),
    ("Point (o) Line (x)", "point_selection", True, False),
    ("Point (o) Line (o)", "full_selection", True, True),
)

TABLE_ROWS = (
    ("The number of point features", "mean_point_features", "%.1f", None),
    ("The number of line features", "mean_line_features", "%.1f", None),
    ("Total optimization time[msec]", "total_optimization_time_ms", "%.3f",
     "reduced"),
    ("Translation RMSE[m]", "translation_rmse_m", "%.4f", "increased"),
)


def _delta_cell(value, ref, fmt, direction):
    cell = fmt % value
    if direction is None or ref == 0:
        return cell
    pct = 100.0 * (value - ref) / ref
    word = direction if (pct < 0) == (direction == "reduced") else (
        "increased" if direction == "reduced" else "reduced")
    return "%s (%s %.2f%%)" % (cell, word, abs(pct))


def run_ablation_grid(scn, out_dir):
    """The 2x2 selection grid; identical seeds, only the switches differ.

    Scenarios run one at a time so the wall-time comparison is not
    polluted by contention.  A failed run aborts the grid; artifacts of
    completed columns are preserved.
    """
    os.makedirs(out_dir, exist_ok=True)
    reports = {}
    for label, slug, sel_p, sel_l in GRID:
        sub = copy.deepcopy(scn)
        sub.est.use_selection = True
        sub.est.select_points = sel_p
        sub.est.select_lines = sel_l
        reports[label] = run_scenario(sub, os.path.join(out_dir, slug))

    ref = reports[GRID[0][0]]
    table = []
    for row_label, attr, fmt, direction in TABLE_ROWS:
        cells = [row_label]
        for label, _, _, _ in GRID:
            rep = reports[label]
            value = getattr(rep, attr)
            if label == GRID[0][0]:
                cells.append(fmt % value)
            else:
                cells.append(_delta_cell(value, getattr(ref, attr), fmt,
                                         direction))
        table.append(cells)

    header = [""] + [label for label, _, _, _ in GRID]
    _write_csv(os.path.join(out_dir, "ablation.csv"), header, table)
    with open(os.path.join(out_dir, "ablation.json"), "w") as f:
        json.dump({label: dataclasses.asdict(rep)
                   for label, rep in reports.items()},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    return reports, table


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def _scenario_from_args(args):
    scn = load_scenario(args.config) if args.config else parse_scenario({})
    if args.seed is not None:
        scn.seed = args.seed
    if getattr(args, "disable_lines", False):
        scn.use_lines = False
    if getattr(args, "disable_selection", False):
        scn.est.use_selection = False
    return scn


def _cmd_run(args):
    report = run_scenario(_scenario_from_args(args), args.out)
    print(json.dumps(dataclasses.asdict(report), indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args):
    _, table = run_ablation_grid(_scenario_from_args(args), args.out)
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    for row in table:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return 0


def _cmd_sensitivity(args):
    scn = _scenario_from_args(args)
    report = run_scenario(scn, args.out)
    # fit summary lives beside the CSV artifacts the run just wrote
    summary = {
        "n_records": sum(1 for _ in open(report.records_csv)) - 1,
        "surfaces": sorted(os.path.basename(p) for p in (
            os.path.join(args.out, "location_surface_%s.csv" % k)
            for k in ("points", "lines")) if os.path.exists(p)),
        "records_csv": report.records_csv,
        "weights_csv": report.weights_csv,
        "conditions_csv": report.conditions_csv,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_evaluate(args):
    try:
        t_est, p_est, _ = read_tum(args.estimated)
        t_gt, p_gt, _ = read_tum(args.groundtruth)
    except (OSError, ValueError) as e:
        raise ConfigError(str(e))
    rmse = compute_ate_rmse(t_est, p_est, t_gt, p_gt, max_dt=args.max_dt)
    print(json.dumps({"translation_rmse_m": rmse, "alignment": "rigid"},
                     indent=2, sort_keys=True))
    return 0


def _parser():
    ap = argparse.ArgumentParser(
        prog="linevio",
        description="point-line visual-inertial odometry scenario runner")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, selection=True):
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario master seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--disable-lines", action="store_true",
                       help="run with point features only")
        if selection:
            p.add_argument("--disable-selection", action="store_true",
                           help="turn off sensitivity-based feature culling")

    p = sub.add_parser("run", help="run one scenario end to end")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate",
                       help="run the 2x2 feature-selection comparison grid")
    common(p, selection=False)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sensitivity",
                       help="run a scenario and emit tracker-sensitivity CSVs")
    common(p)
    p.set_defaults(func=_cmd_sensitivity)

    p = sub.add_parser("evaluate",
                       help="translation RMSE between two TUM trajectories")
    p.add_argument("estimated")
    p.add_argument("groundtruth")
    p.add_argument("--max-dt", type=float, default=None,
                   help="association window, seconds")
    p.set_defaults(func=_cmd_evaluate)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 2
    except (EstimatorFailure, InsufficientOverlapError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
