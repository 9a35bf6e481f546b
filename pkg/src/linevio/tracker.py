"""Feature tracking with persistent ids over a frame stream.

Lines are carried frame to frame by querying a flow source at the two
segment endpoints.  Predicted endpoints that leave the image are pulled
back onto the border along the segment's own slope, so a half-visible
line keeps its identity instead of being re-detected as new.  The
predictions are then matched against the detections of the new frame
(k-nearest-neighbour shortlist plus geometric gates), and every track
is classified:

  tag 1  one-to-one match, endpoints retained
  tag 2  unmatched detection, a fresh track
  tag 3  one prediction claimed several detections -- the detector broke
         the line apart -- and the pieces are merged back into one span
  tag 4  the match happened against a border-clamped prediction

Points follow the same advance/associate pattern without the merge
machinery, topped up from fresh detections under a spacing mask.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .geometry import Segment2D

__all__ = [
    "TrackedLine", "TrackedPoint", "TrackerConfig", "PredictedLine",
    "clamp_to_border", "predict_lines", "match_lines", "merge_segments",
    "classify_and_merge", "track_points", "track_counts", "track_log_rows",
    "pixel_detections", "LineTracker", "PointTracker",
]


def pixel_detections(frame_obs, cam):
    """Frame observations (normalized coords) as pixel-space detections.

    Returns (point_dets, line_dets) shaped for PointTracker.step and
    LineTracker.step: lists of (key, px) and (key, Segment2D).
    """
    pts = [(pid, cam.normalized_to_pixel(xn)) for pid, xn in frame_obs.point_obs]
    lines = [(lo.line_id, Segment2D(cam.normalized_to_pixel(lo.seg.e1),
                                    cam.normalized_to_pixel(lo.seg.e2)))
             for lo in frame_obs.segment_obs]
    return pts, lines


@dataclass
class TrackedLine:
    id: int
    key: int  # external feature handle, forwarded to flow queries
    seg: Segment2D
    age: int = 1
    type_tag: int = 2
    last_frame: int = 0


@dataclass
class TrackedPoint:
    id: int
    key: int
    px: np.ndarray
    age: int = 1
    last_frame: int = 0

    def __post_init__(self):
        self.px = np.asarray(self.px, dtype=float).reshape(2).copy()


@dataclass
class TrackerConfig:
    """Gates for line association plus point top-up policy.

    ``max_endpoint_dist`` serves both as the endpoint-proximity gate and
    as the axial padding of the overlap test; ``max_center_dist`` bounds
    the perpendicular offset between the two supporting lines.  The
    length-ratio gate is asymmetric: detections shorter than the
    prediction pass freely (that is what a split looks like), while
    detections longer by more than ``max_length_ratio`` pass only when
    the prediction lies wholly on them (a clipped stretch of the same
    line swept back into view).
    """

    knn_k: int = 3
    max_endpoint_dist: float = 20.0
    max_length_ratio: float = 2.0
    max_center_dist: float = 30.0
    max_angle_diff: float = 0.1
    width: int = 640
    height: int = 480
    # point tracker
    max_point_dist: float = 20.0
    target_points: int = 150
    min_point_spacing: float = 12.0

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        for name in ("max_endpoint_dist", "max_length_ratio",
                     "max_center_dist", "max_angle_diff", "max_point_dist"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class PredictedLine:
    """A track's segment advanced into the upcoming frame."""

    track: TrackedLine
    seg: Segment2D
    clamped: bool = False


def _inside(p, width, height):
    return 0.0 <= p[0] <= width - 1.0 and 0.0 <= p[1] <= height - 1.0


def clamp_to_border(seg, width, height):
    """Pull an out-of-image endpoint back onto the border along the segment.

    The inside endpoint is untouched; the outside one is replaced by the
    point where the segment crosses out of [0, width-1] x [0, height-1].
    Returns None when both endpoints are outside.
    """
    in1 = _inside(seg.e1, width, height)
    in2 = _inside(seg.e2, width, height)
    if in1 and in2:
        return seg
    if not in1 and not in2:
        return None
    a, b = (seg.e1, seg.e2) if in1 else (seg.e2, seg.e1)
    d = b - a
    # largest t in [0,1] with a + t*d still inside the rectangle
    t = 1.0
    for axis, hi in ((0, width - 1.0), (1, height - 1.0)):
        if d[axis] > 0:
            t = min(t, (hi - a[axis]) / d[axis])
        elif d[axis] < 0:
            t = min(t, (0.0 - a[axis]) / d[axis])
    hit = a + max(t, 0.0) * d
    return Segment2D(seg.e1, hit) if in1 else Segment2D(hit, seg.e2)


def predict_lines(prev, flow, frame_to, width, height):
    """Advance line tracks by flow at their endpoints.

    Returns (predictions, n_dropped) where each prediction keeps a
    reference to its track and remembers whether border clamping fired.
    Tracks whose flow query fails at either endpoint, or whose whole
    prediction leaves the image, are dropped and counted.
    """
    out, dropped = [], 0
    for tr in prev:
        q1 = flow.predict_line_endpoint(tr.last_frame, frame_to, tr.key, 0,
                                        tr.seg.e1)
        q2 = flow.predict_line_endpoint(tr.last_frame, frame_to, tr.key, 1,
                                        tr.seg.e2)
        if q1 is None or q2 is None:
            dropped += 1
            continue
        raw = Segment2D(q1, q2)
        clamped = not (_inside(q1, width, height) and _inside(q2, width, height))
        seg = clamp_to_border(raw, width, height) if clamped else raw
        if seg is None or seg.length() < 1e-9:
            dropped += 1
            continue
        out.append(PredictedLine(tr, seg, clamped))
    return out, dropped


def _angle_between(a, b):
    """Undirected angle difference of two segment angles, in [0, pi/2]."""
    d = abs(a - b) % np.pi
    return min(d, np.pi - d)


def _endpoint_dist(p, d):
    """Symmetric endpoint distance: best pairing, sum over both endpoints."""
    s1 = (np.linalg.norm(p.e1 - d.e1) + np.linalg.norm(p.e2 - d.e2))
    s2 = (np.linalg.norm(p.e1 - d.e2) + np.linalg.norm(p.e2 - d.e1))
    return min(s1, s2)


def _passes_gates(pred, det, cfg):
    if _angle_between(pred.angle(), det.angle()) > cfg.max_angle_diff:
        return False
    # at least one detected endpoint near one predicted endpoint; a split
    # part shares an end with the original, so this holds for tag-3 pieces
    near = min(np.linalg.norm(det.e1 - pred.e1), np.linalg.norm(det.e1 - pred.e2),
               np.linalg.norm(det.e2 - pred.e1), np.linalg.norm(det.e2 - pred.e2))
    if near > cfg.max_endpoint_dist:
        return False
    # collinearity against the longer of the two, whichever side got clipped
    a, b = (pred, det) if pred.length() >= det.length() else (det, pred)
    u = a.direction()
    n = np.array([-u[1], u[0]])
    if abs(n @ (b.center() - a.center())) > cfg.max_center_dist:
        return False
    # axial overlap of the spans, padded by the endpoint gate
    s = np.array([u @ (b.e1 - a.e1), u @ (b.e2 - a.e1)])
    pad = cfg.max_endpoint_dist
    if s.max() < -pad or s.min() > a.length() + pad:
        return False
    if det.length() > cfg.max_length_ratio * pred.length():
        # the detection grew past the ratio gate: legitimate only when the
        # whole prediction lies on it (a clipped stretch swept into view)
        return s.min() >= -pad and s.max() <= a.length() + pad
    return True


def match_lines(predicted, detected, cfg):
    """Associate predicted segments with detected ones.

    For each prediction the knn_k nearest detections (symmetric endpoint
    distance) are gated geometrically; surviving pairs are resolved
    greedily by ascending distance with per-detection exclusivity, so a
    prediction may collect several detections but a detection attaches
    to at most one prediction.

    Returns (assoc, unmatched) with assoc[i] a list of detection indices
    for prediction i and unmatched the detection indices left over.
    """
    candidates = []
    for i, p in enumerate(predicted):
        if not detected:
            break
        dists = np.array([_endpoint_dist(p, d) for d in detected])
        # walk detections nearest-first and keep the first knn_k that pass
        # the gates; cutting before gating would let close-but-wrong
        # neighbors crowd the far half of a split out of the shortlist
        kept = 0
        for j in np.argsort(dists, kind="stable"):
            if _passes_gates(p, detected[j], cfg):
                candidates.append((dists[j], i, int(j)))
                kept += 1
                if kept == cfg.knn_k:
                    break
    candidates.sort()
    assoc, taken = {}, set()
    for _, i, j in candidates:
        if j in taken:
            continue
        taken.add(j)
        assoc.setdefault(i, []).append(j)
    unmatched = [j for j in range(len(detected)) if j not in taken]
    return assoc, unmatched


def merge_segments(segs, direction=None):
    """Single segment spanning the extreme endpoints of several pieces."""
    if direction is None:
        direction = max(segs, key=lambda s: s.length()).direction()
    pts = np.concatenate([[s.e1, s.e2] for s in segs])
    proj = pts @ direction
    return Segment2D(pts[np.argmin(proj)], pts[np.argmax(proj)])


def _oriented(det, pred):
    """Detection with endpoints ordered to follow the prediction."""
    s1 = (np.linalg.norm(pred.e1 - det.e1) + np.linalg.norm(pred.e2 - det.e2))
    s2 = (np.linalg.norm(pred.e1 - det.e2) + np.linalg.norm(pred.e2 - det.e1))
    return det if s1 <= s2 else Segment2D(det.e2, det.e1)


def classify_and_merge(predictions, detections, assoc, unmatched, frame,
                       id_iter):
    """Resolve associations into the next frame's track list.

    ``detections`` holds (key, Segment2D) pairs.  Matched tracks keep
    their id with age+1; multi-detection matches are merged into one
    span (tag 3); single matches against a clamped prediction get tag 4;
    leftover detections start fresh tracks (tag 2).  Unmatched
    predictions simply end.
    """
    out = []
    for i, pred in enumerate(predictions):
        js = assoc.get(i)
        if not js:
            continue
        tr = pred.track
        if len(js) == 1:
            seg = _oriented(detections[js[0]][1], pred.seg)
            tag = 4 if pred.clamped else 1
        else:
            seg = merge_segments([detections[j][1] for j in js],
                                 pred.seg.direction())
            tag = 3
        out.append(TrackedLine(tr.id, detections[js[0]][0], seg,
                               tr.age + 1, tag, frame))
    for j in unmatched:
        key, seg = detections[j]
        out.append(TrackedLine(next(id_iter), key, seg, 1, 2, frame))
    return out


def track_points(prev, flow, frame_to, detections, cfg, id_iter):
    """Advance point tracks and top up from fresh detections.

    ``detections`` holds (key, px) pairs.  Each live track is moved by
    the flow prediction and greedily associated to the nearest detection
    within max_point_dist (one detection per track); survivors keep
    their id at the detected position.  Unclaimed detections fill the
    table up to target_points, skipping any closer than
    min_point_spacing to an already accepted position.
    """
    advanced = []
    for tr in prev:
        q = flow.predict_point(tr.last_frame, frame_to, tr.key, tr.px)
        if q is None or not _inside(q, cfg.width, cfg.height):
            continue
        advanced.append((tr, np.asarray(q, dtype=float)))

    pairs = []
    if advanced and detections:
        P = np.array([q for _, q in advanced])
        D = np.array([px for _, px in detections])
        dist = np.linalg.norm(P[:, None, :] - D[None, :, :], axis=2)
        for i, j in np.argwhere(dist <= cfg.max_point_dist):
            pairs.append((dist[i, j], int(i), int(j)))
    pairs.sort()

    out, used_tr, used_det = [], set(), set()
    for _, i, j in pairs:
        if i in used_tr or j in used_det:
            continue
        used_tr.add(i)
        used_det.add(j)
        tr = advanced[i][0]
        key, px = detections[j]
        out.append(TrackedPoint(tr.id, key, px, tr.age + 1, frame_to))

    kept = np.array([tr.px for tr in out]) if out else np.empty((0, 2))
    for j, (key, px) in enumerate(detections):
        if len(out) >= cfg.target_points:
            break
        if j in used_det:
            continue
        px = np.asarray(px, dtype=float)
        if len(kept) and np.linalg.norm(kept - px, axis=1).min() < cfg.min_point_spacing:
            continue
        out.append(TrackedPoint(next(id_iter), key, px, 1, frame_to))
        kept = np.vstack([kept, px])
    return out


def track_counts(points, lines):
    """Mean track age per feature class: (M_p, M_l), 0 for an empty class."""
    m_p = float(np.mean([tr.age for tr in points])) if points else 0.0
    m_l = float(np.mean([tr.age for tr in lines])) if lines else 0.0
    return m_p, m_l


def track_log_rows(frame, points, lines):
    """Flat rows (frame, kind, id, age, coords...) for CSV emission."""
    rows = []
    for tr in points:
        rows.append((frame, "point", tr.id, tr.age,
                     float(tr.px[0]), float(tr.px[1])))
    for tr in lines:
        rows.append((frame, "line", tr.id, tr.age,
                     float(tr.seg.e1[0]), float(tr.seg.e1[1]),
                     float(tr.seg.e2[0]), float(tr.seg.e2[1])))
    return rows


class LineTracker:
    """Stateful line track table over consecutive frames."""

    def __init__(self, flow, cfg=None):
        self.flow = flow
        self.cfg = cfg if cfg is not None else TrackerConfig()
        self.tracks = []
        self.last_frame = None
        self.n_flow_dropped = 0
        self._ids = itertools.count()

    def step(self, frame, detections):
        """Ingest one frame's (key, Segment2D) detections; returns tracks."""
        if self.last_frame is None:
            self.tracks = [TrackedLine(next(self._ids), key, seg, 1, 2, frame)
                           for key, seg in detections]
        else:
            preds, dropped = predict_lines(self.tracks, self.flow, frame,
                                           self.cfg.width, self.cfg.height)
            self.n_flow_dropped += dropped
            assoc, unmatched = match_lines([p.seg for p in preds],
                                           [seg for _, seg in detections],
                                           self.cfg)
            self.tracks = classify_and_merge(preds, detections, assoc,
                                             unmatched, frame, self._ids)
        self.last_frame = frame
        ids = [tr.id for tr in self.tracks]
        assert len(ids) == len(set(ids))
        return self.tracks


class PointTracker:
    """Stateful point track table over consecutive frames."""

    def __init__(self, flow, cfg=None):
        self.flow = flow
        self.cfg = cfg if cfg is not None else TrackerConfig()
        self.tracks = []
        self.last_frame = None
        self._ids = itertools.count()

    def step(self, frame, detections):
        """Ingest one frame's (key, px) detections; returns tracks."""
        if self.last_frame is None:
            prev = []
        else:
            prev = self.tracks
        self.tracks = track_points(prev, self.flow, frame, detections,
                                   self.cfg, self._ids)
        self.last_frame = frame
        return self.tracks
