"""Tests for the persistent-id line/point tracker."""

import itertools

import numpy as np
import pytest

from linevio.geometry import Segment2D
from linevio.simulator import (
    DetectionConfig,
    FlowOracle,
    TrajectorySpec,
    World,
    default_camera,
    synthesize_frame,
)
from linevio.tracker import (
    LineTracker,
    PointTracker,
    PredictedLine,
    TrackedLine,
    TrackedPoint,
    TrackerConfig,
    clamp_to_border,
    classify_and_merge,
    match_lines,
    merge_segments,
    pixel_detections,
    predict_lines,
    track_counts,
    track_log_rows,
    track_points,
)

CAM = default_camera()
EXACT_DET = DetectionConfig(sigma_line_px=0.0, sigma_point_px=0.0, p_split=0.0,
                            drop_point_coef=0.0, drop_line_coef=0.0)


class _ShiftFlow:
    """Flow stub: every pixel moves by a fixed offset."""

    def __init__(self, delta):
        self.delta = np.asarray(delta, dtype=float)

    def predict_line_endpoint(self, f0, f1, key, eidx, px):
        return np.asarray(px, dtype=float) + self.delta

    def predict_point(self, f0, f1, key, px):
        return np.asarray(px, dtype=float) + self.delta


class _NoneFlow:
    def predict_line_endpoint(self, f0, f1, key, eidx, px):
        return None

    def predict_point(self, f0, f1, key, px):
        return None


def _line_track(tid, e1, e2, key=None, frame=0):
    return TrackedLine(tid, tid if key is None else key,
                       Segment2D(np.asarray(e1, float), np.asarray(e2, float)),
                       age=1, type_tag=2, last_frame=frame)


# ---------------------------------------------------------------- clamping

def test_clamp_examples():
    # slope-1 segment exiting through the right border: x hits 639 at t=0.45,
    # carrying y to 100 + 0.45*20 = 109
    seg = Segment2D([630.0, 100.0], [650.0, 120.0])
    out = clamp_to_border(seg, 640, 480)
    np.testing.assert_allclose(out.e1, [630.0, 100.0])
    np.testing.assert_allclose(out.e2, [639.0, 109.0])

    inside = Segment2D([10.0, 10.0], [100.0, 200.0])
    assert clamp_to_border(inside, 640, 480) is inside

    vert = Segment2D([100.0, 470.0], [100.0, 495.0])
    out = clamp_to_border(vert, 640, 480)
    np.testing.assert_allclose(out.e2, [100.0, 479.0])
    np.testing.assert_allclose(out.e1, [100.0, 470.0])

    gone = Segment2D([-10.0, -10.0], [-5.0, -20.0])
    assert clamp_to_border(gone, 640, 480) is None


def test_clamp_stays_on_line_and_in_bounds():
    rng = np.random.default_rng(4)
    w, h = 640, 480
    checked = 0
    for _ in range(300):
        a = rng.uniform([0, 0], [w - 1, h - 1])
        b = a + rng.normal(scale=200.0, size=2)
        if _in(a, w, h) and not _in(b, w, h):
            out = clamp_to_border(Segment2D(a, b), w, h)
            assert out is not None
            for e in (out.e1, out.e2):
                assert -1e-9 <= e[0] <= w - 1 + 1e-9
                assert -1e-9 <= e[1] <= h - 1 + 1e-9
            # moved endpoint still on the supporting line
            d = b - a
            n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
            assert abs(n @ (out.e2 - a)) < 1e-9
            checked += 1
    assert checked > 80


def _in(p, w, h):
    return 0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(knn_k=0)
    with pytest.raises(ValueError):
        TrackerConfig(max_angle_diff=-0.1)


# ------------------------------------------------------------- prediction

def test_predict_lines_translation_and_identity():
    tracks = [_line_track(0, [100, 100], [200, 150]),
              _line_track(1, [50, 300], [90, 310])]
    preds, dropped = predict_lines(tracks, _ShiftFlow([5.0, 0.0]), 1, 640, 480)
    assert dropped == 0 and len(preds) == 2
    np.testing.assert_allclose(preds[0].seg.e1, [105.0, 100.0])
    np.testing.assert_allclose(preds[0].seg.e2, [205.0, 150.0])
    assert not preds[0].clamped

    still, _ = predict_lines(tracks, _ShiftFlow([0.0, 0.0]), 1, 640, 480)
    for p, tr in zip(still, tracks):
        np.testing.assert_array_equal(p.seg.e1, tr.seg.e1)
        np.testing.assert_array_equal(p.seg.e2, tr.seg.e2)


def test_predict_lines_clamps_and_drops():
    tracks = [_line_track(0, [600, 100], [630, 130])]
    preds, dropped = predict_lines(tracks, _ShiftFlow([20.0, 20.0]), 1, 640, 480)
    assert dropped == 0 and preds[0].clamped
    e = preds[0].seg.e2
    assert _in(preds[0].seg.e1, 640, 480) and _in(e, 640, 480)
    np.testing.assert_allclose(e, [639.0, 139.0])  # slope 1 from (620,120)

    _, dropped = predict_lines(tracks, _NoneFlow(), 1, 640, 480)
    assert dropped == 1


# --------------------------------------------------------------- matching

def test_match_identical_line():
    cfg = TrackerConfig()
    seg = Segment2D([100.0, 100.0], [200.0, 120.0])
    assoc, unmatched = match_lines([seg], [Segment2D(seg.e1, seg.e2)], cfg)
    assert assoc == {0: [0]}
    assert unmatched == []


def test_match_rejects_rotation_beyond_gate():
    cfg = TrackerConfig()
    pred = Segment2D([100.0, 100.0], [200.0, 100.0])
    c = pred.center()
    ang = 0.15  # > max_angle_diff
    d = 50.0 * np.array([np.cos(ang), np.sin(ang)])
    det = Segment2D(c - d, c + d)
    assoc, unmatched = match_lines([pred], [det], cfg)
    assert assoc == {}
    assert unmatched == [0]


def test_match_rejects_runaway_detection():
    cfg = TrackerConfig()
    pred = Segment2D([100.0, 100.0], [140.0, 100.0])
    # 3.5x longer and sliding off axially: not a re-entry of the same line
    det = Segment2D([125.0, 100.0], [265.0, 100.0])
    assoc, unmatched = match_lines([pred], [det], cfg)
    assert assoc == {} and unmatched == [0]


def test_match_accepts_grown_detection_containing_prediction():
    # a border-clipped line sweeps into view: the detection is much longer
    # but the old prediction lies wholly on it, so the id must carry over
    cfg = TrackerConfig()
    pred = Segment2D([100.0, 100.0], [140.0, 100.0])
    det = Segment2D([90.0, 100.0], [290.0, 100.0])
    assoc, unmatched = match_lines([pred], [det], cfg)
    assert assoc == {0: [0]} and unmatched == []


def test_match_split_parts_attach_to_one_prediction():
    cfg = TrackerConfig()
    pred = Segment2D([0.0, 0.0], [30.0, 0.0])
    parts = [Segment2D([0.0, 0.0], [10.0, 0.0]),
             Segment2D([12.0, 0.0], [30.0, 0.0])]
    assoc, unmatched = match_lines([pred], parts, cfg)
    assert sorted(assoc[0]) == [0, 1]
    assert unmatched == []


def test_match_detection_exclusive_to_nearest():
    cfg = TrackerConfig()
    det = Segment2D([100.0, 100.0], [200.0, 100.0])
    near = Segment2D([100.0, 101.0], [200.0, 101.0])
    far = Segment2D([100.0, 110.0], [200.0, 110.0])
    assoc, unmatched = match_lines([near, far], [det], cfg)
    assert assoc == {0: [0]}
    assert unmatched == []


# -------------------------------------------------------------- classify

def test_classify_merges_split_pair():
    pred = PredictedLine(_line_track(7, [0, 0], [30, 0]),
                         Segment2D([0.0, 0.0], [30.0, 0.0]))
    dets = [(42, Segment2D([0.0, 0.0], [10.0, 0.0])),
            (42, Segment2D([12.0, 0.0], [30.0, 0.0]))]
    out = classify_and_merge([pred], dets, {0: [0, 1]}, [], 1,
                             itertools.count(100))
    assert len(out) == 1
    tr = out[0]
    assert tr.id == 7 and tr.type_tag == 3 and tr.age == 2
    np.testing.assert_allclose(tr.seg.e1, [0.0, 0.0])
    np.testing.assert_allclose(tr.seg.e2, [30.0, 0.0])


def test_classify_tags_and_fresh_ids():
    p1 = PredictedLine(_line_track(3, [0, 0], [30, 0]),
                       Segment2D([0.0, 0.0], [30.0, 0.0]), clamped=False)
    p2 = PredictedLine(_line_track(4, [50, 50], [90, 50]),
                       Segment2D([50.0, 50.0], [90.0, 50.0]), clamped=True)
    p3 = PredictedLine(_line_track(5, [200, 200], [260, 200]),
                       Segment2D([200.0, 200.0], [260.0, 200.0]))
    dets = [(0, Segment2D([0.0, 0.5], [30.0, 0.5])),
            (1, Segment2D([50.0, 50.0], [88.0, 50.0])),
            (2, Segment2D([400.0, 100.0], [450.0, 130.0]))]
    out = classify_and_merge([p1, p2, p3], dets, {0: [0], 1: [1]}, [2], 6,
                             itertools.count(10))
    by_id = {tr.id: tr for tr in out}
    assert by_id[3].type_tag == 1 and by_id[3].age == 2
    assert by_id[4].type_tag == 4 and by_id[4].age == 2
    assert 5 not in by_id  # unmatched prediction ends
    fresh = [tr for tr in out if tr.type_tag == 2]
    assert len(fresh) == 1 and fresh[0].id == 10 and fresh[0].age == 1
    assert len({tr.id for tr in out}) == len(out)


def test_merge_uses_extreme_endpoints():
    segs = [Segment2D([5.0, 1.0], [1.0, 1.0]),
            Segment2D([6.0, 1.0], [11.0, 1.0]),
            Segment2D([12.0, 1.0], [20.0, 1.0])]
    out = merge_segments(segs, np.array([1.0, 0.0]))
    np.testing.assert_allclose(out.e1, [1.0, 1.0])
    np.testing.assert_allclose(out.e2, [20.0, 1.0])


# ---------------------------------------------------------------- points

def test_track_points_exact_flow_full_retention():
    cfg = TrackerConfig(target_points=500)
    ids = itertools.count()
    dets0 = [(k, np.array([50.0 + 30 * k, 200.0])) for k in range(8)]
    t0 = track_points([], _ShiftFlow([0, 0]), 0, dets0, cfg, ids)
    assert len(t0) == 8
    dets1 = [(k, px + np.array([3.0, -2.0])) for k, px in dets0]
    t1 = track_points(t0, _ShiftFlow([3.0, -2.0]), 1, dets1, cfg, ids)
    assert {tr.id for tr in t1} == {tr.id for tr in t0}
    for tr in t1:
        assert tr.age == 2


def test_track_points_retires_departed_and_tops_up():
    cfg = TrackerConfig(target_points=500, min_point_spacing=5.0)
    ids = itertools.count()
    t0 = track_points([], _ShiftFlow([0, 0]), 0,
                      [(0, np.array([630.0, 240.0])), (1, np.array([320.0, 240.0]))],
                      cfg, ids)
    # feature 0 flows out of the image; a new detection appears
    dets = [(1, np.array([340.0, 240.0])), (9, np.array([100.0, 100.0]))]
    t1 = track_points(t0, _ShiftFlow([20.0, 0.0]), 1, dets, cfg, ids)
    keys = {tr.key: tr for tr in t1}
    assert 0 not in keys
    assert keys[1].age == 2 and keys[1].id == [tr for tr in t0 if tr.key == 1][0].id
    assert keys[9].age == 1


def test_track_points_spacing_mask_and_target():
    cfg = TrackerConfig(target_points=3, min_point_spacing=10.0)
    dets = [(k, np.array([100.0 + 4 * k, 100.0])) for k in range(10)]
    out = track_points([], _ShiftFlow([0, 0]), 0, dets, cfg, itertools.count())
    assert len(out) == 3
    P = np.array([tr.px for tr in out])
    d = np.linalg.norm(P[:, None] - P[None, :], axis=2)
    assert d[~np.eye(3, dtype=bool)].min() >= 10.0


def test_track_points_dropout_retention_rate():
    # detection dropout at rate p: a surviving track should re-associate
    # whenever its detection is present, so retention across a frame sits
    # at 1-p within binomial error
    rng = np.random.default_rng(11)
    p = 0.3
    cfg = TrackerConfig(target_points=500)
    ids = itertools.count()
    base = [(k, np.array([20.0 + 12.0 * (k % 50), 20.0 + 12.0 * (k // 50)]))
            for k in range(100)]
    tracks = track_points([], _ShiftFlow([0, 0]), 0, base, cfg, ids)
    alive_and_detected = survived = 0
    for frame in range(1, 300):
        keep = rng.random(len(base)) >= p
        dets = [kp for kp, k in zip(base, keep) if k]
        prev_keys = {tr.key: tr.id for tr in tracks}
        tracks = track_points(tracks, _ShiftFlow([0, 0]), frame, dets, cfg, ids)
        now = {tr.key: tr.id for tr in tracks}
        for key, _ in dets:
            if key in prev_keys:
                alive_and_detected += 1
                if now.get(key) == prev_keys[key]:
                    survived += 1
    assert alive_and_detected > 5000
    assert survived / alive_and_detected > 0.999


def test_track_counts_examples():
    pts = [TrackedPoint(0, 0, [1.0, 1.0], age=3),
           TrackedPoint(1, 1, [2.0, 2.0], age=5)]
    m_p, m_l = track_counts(pts, [])
    assert m_p == 4.0 and m_l == 0.0
    lines = [_line_track(0, [0, 0], [10, 0])]
    lines[0].age = 7
    assert track_counts([], lines) == (0.0, 7.0)


def test_track_log_rows_shape():
    pts = [TrackedPoint(0, 0, [1.0, 2.0], age=3)]
    lines = [_line_track(1, [0, 0], [10, 0])]
    rows = track_log_rows(5, pts, lines)
    assert rows[0] == (5, "point", 0, 3, 1.0, 2.0)
    assert rows[1][:4] == (5, "line", 1, 1)
    assert len(rows[1]) == 8


# ------------------------------------------------- simulator integration

def _run_trackers(det_cfg, frames, seed=0, sigma_flow=0.0):
    world = World.box_room(seed=1)
    spec = TrajectorySpec(kind="circle", duration=frames / 20.0 + 0.5)
    cam = default_camera()
    flow = FlowOracle(world, spec, cam, sigma_flow_px=sigma_flow, seed=seed)
    cfg = TrackerConfig(target_points=500)
    lt, pt = LineTracker(flow, cfg), PointTracker(flow, cfg)
    per_frame = []
    for k in range(frames):
        obs = synthesize_frame(world, spec, cam, k / spec.cam_rate, det_cfg,
                               seed=seed)
        pts, lines = pixel_detections(obs, cam)
        per_frame.append((obs, pt.step(k, pts), lt.step(k, lines)))
    return per_frame


def test_ids_persist_with_exact_flow():
    per_frame = _run_trackers(EXACT_DET, frames=40)
    ok = total = 0
    for (o0, p0, l0), (o1, p1, l1) in zip(per_frame, per_frame[1:]):
        prev_l = {tr.key: tr.id for tr in l0}
        now_l = {tr.key: tr.id for tr in l1}
        for lo in o1.segment_obs:
            if lo.line_id in prev_l:
                total += 1
                ok += now_l.get(lo.line_id) == prev_l[lo.line_id]
        prev_p = {tr.key: tr.id for tr in p0}
        now_p = {tr.key: tr.id for tr in p1}
        for pid, _ in o1.point_obs:
            if pid in prev_p:
                total += 1
                ok += now_p.get(pid) == prev_p[pid]
    assert total > 2000
    assert ok == total


def test_split_events_merge_back():
    det = DetectionConfig(sigma_line_px=0.0, sigma_point_px=0.0, p_split=0.5,
                          drop_point_coef=0.0, drop_line_coef=0.0)
    per_frame = _run_trackers(det, frames=60)
    events = merged = 0
    for (o0, _, l0), (o1, _, l1) in zip(per_frame, per_frame[1:]):
        prev_multi = {}
        for tr in l0:
            prev_multi.setdefault(tr.key, []).append(tr.id)
        parts = {}
        for lo in o1.segment_obs:
            if lo.split_part >= 0:
                parts.setdefault(lo.line_id, []).append(lo.seg)
        now = {}
        for tr in l1:
            now.setdefault(tr.key, []).append(tr)
        for lid, ps in parts.items():
            # a split event: ONE tracked line broke into two detections
            # (a line that was already double-tracked at birth is not one)
            if len(ps) != 2 or len(prev_multi.get(lid, [])) != 1:
                continue
            prev = {lid: prev_multi[lid][0]}
            events += 1
            trs = now.get(lid, [])
            if len(trs) != 1 or trs[0].id != prev[lid] or trs[0].type_tag != 3:
                continue
            # merged span must cover both true parts
            seg = trs[0].seg
            u = seg.direction()
            pts = np.array([CAM.normalized_to_pixel(e)
                            for s in ps for e in (s.e1, s.e2)])
            proj = (pts - seg.e1) @ u
            span = proj.max() - proj.min()
            covered = min(proj.max(), seg.length()) - max(proj.min(), 0.0)
            if covered >= 0.95 * span:
                merged += 1
    assert events >= 30
    assert merged / events >= 0.9


def test_border_exits_keep_ids():
    per_frame = _run_trackers(EXACT_DET, frames=60)
    # runs of >=3 consecutive frames where a line stays truncated by the
    # image border: the id assigned at the start must ride through
    runs = kept = 0
    series = {}
    for k, (obs, _, ltr) in enumerate(per_frame):
        ids = {tr.key: tr.id for tr in ltr}
        for lo in obs.segment_obs:
            series.setdefault(lo.line_id, []).append(
                (k, lo.truncated, ids.get(lo.line_id)))
    for lid, rows in series.items():
        run = []
        for k, trunc, tid in rows:
            if trunc and tid is not None and (not run or k == run[-1][0] + 1):
                run.append((k, tid))
            else:
                if len(run) >= 3:
                    runs += 1
                    kept += len({t for _, t in run}) == 1
                run = [(k, tid)] if trunc and tid is not None else []
        if len(run) >= 3:
            runs += 1
            kept += len({t for _, t in run}) == 1
    assert runs >= 5
    assert kept / runs >= 0.9


def test_tracker_steps_are_deterministic():
    a = _run_trackers(EXACT_DET, frames=12, seed=3)
    b = _run_trackers(EXACT_DET, frames=12, seed=3)
    for (_, pa, la), (_, pb, lb) in zip(a, b):
        assert [(t.id, t.key, t.age) for t in pa] == [(t.id, t.key, t.age) for t in pb]
        assert [(t.id, t.key, t.age, t.type_tag) for t in la] == \
               [(t.id, t.key, t.age, t.type_tag) for t in lb]
        for ta, tb in zip(la, lb):
            np.testing.assert_array_equal(ta.seg.e1, tb.seg.e1)
            np.testing.assert_array_equal(ta.seg.e2, tb.seg.e2)
