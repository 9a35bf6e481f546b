"""Feature-selection statistics and adaptive point/line fusion weights.

When a window's oldest frame retires, each feature that was visible in
that frame yields one record: how many of the window's frames it
survived, against where it sat in the image.  A low-order polynomial
surface fitted to those records scores image locations by expected
track length, and features scoring below a quantile threshold are
culled before optimization -- the tracker keeps losing features near
the borders, so spending iterations on them buys little.

Independently, the average track counts of the two feature classes set
their relative weights in the fused cost,

    w_p = M_p / (a*M_l + M_p),   w_l = a*M_l / (a*M_l + M_p),

with the gain ``a`` switched between three presets depending on which
class is tracking better.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly


class FitError(ValueError):
    pass


@dataclass
class SensitivityRecord:
    kind: str                 # "point" | "line"
    location: np.ndarray      # pixels; lines use their midpoint
    track_length: int

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float).reshape(2)
        if self.track_length < 1:
            raise ValueError("track_length must be >= 1")


@dataclass
class LocationScoreModel:
    """Bivariate polynomial (x, y) -> expected track length.

    Coefficients live in a shifted/scaled coordinate frame derived from
    the fitting data (raw pixel powers make a miserable design matrix).
    """

    degree: int
    coef: np.ndarray          # (degree+1, degree+1), c[i,j] * xn^i * yn^j
    residual_rms: float
    center: np.ndarray
    scale: np.ndarray

    def predict(self, locations):
        loc = np.atleast_2d(np.asarray(locations, dtype=float))
        xn = (loc[:, 0] - self.center[0]) / self.scale[0]
        yn = (loc[:, 1] - self.center[1]) / self.scale[1]
        return npoly.polyval2d(xn, yn, self.coef)


@dataclass
class WindowStats:
    I_t: float    # mean illumination over the window's frames
    M_t: float    # L1 travel between first and last window positions
    M_p: float    # mean point track count
    M_l: float    # mean line track count


@dataclass
class SelectionConfig:
    degree: int = 3
    quantile_points: float = 0.25
    quantile_lines: float = 0.25
    min_keep_points: int = 8
    min_keep_lines: int = 4
    alpha1: float = 5.0       # lines tracking better
    alpha2: float = 2.2       # classes comparable
    alpha3: float = 1.0       # points tracking better
    tau: float = 1.2          # "comparable" = ratio within this band


@dataclass
class AdaptiveWeights:
    w_p: float
    w_l: float
    alpha_used: float
    regime: str               # line-dominant | balanced | point-dominant
    degenerate: bool = False  # both track counts were zero


def collect_records(rows, first_frame, window_len):
    """Sensitivity records for one completed window from track-log rows.

    ``rows`` are track_log_rows tuples (frame, kind, id, age, coords...).
    A feature contributes one record iff it appears at ``first_frame``;
    its track length is the number of window frames
    [first_frame, first_frame + window_len) in which it appears, and its
    location is where it sat in the first frame (lines: midpoint).
    """
    counts, first_loc = {}, {}
    for row in rows:
        frame, kind, fid = row[0], row[1], row[2]
        if not first_frame <= frame < first_frame + window_len:
            continue
        key = (kind, fid)
        counts[key] = counts.get(key, 0) + 1
        if frame == first_frame:
            c = np.asarray(row[4:], dtype=float)
            first_loc[key] = c[:2] if kind == "point" else 0.5 * (c[:2] + c[2:4])
    return [SensitivityRecord(kind, loc, counts[(kind, fid)])
            for (kind, fid), loc in first_loc.items()]


def fit_location_surface(records, degree=3):
    """Least-squares polynomial surface over record locations.

    Raises ValueError when records are too few for the basis and
    FitError when their layout cannot pin the coefficients down
    (e.g. all locations on one line).
    """
    n_terms = (degree + 1) ** 2
    if len(records) < n_terms:
        raise ValueError(f"need at least {n_terms} records for degree {degree}")
    loc = np.array([r.location for r in records])
    z = np.array([r.track_length for r in records], dtype=float)
    center = loc.mean(axis=0)
    scale = loc.std(axis=0)
    scale[scale < 1e-12] = 1.0
    xn = (loc[:, 0] - center[0]) / scale[0]
    yn = (loc[:, 1] - center[1]) / scale[1]
    A = npoly.polyvander2d(xn, yn, [degree, degree])
    coef, _, rank, _ = np.linalg.lstsq(A, z, rcond=None)
    if rank < n_terms:
        raise FitError("rank-deficient design: record locations are degenerate")
    rms = float(np.sqrt(np.mean((A @ coef - z) ** 2)))
    return LocationScoreModel(degree, coef.reshape(degree + 1, degree + 1),
                              rms, center, scale)


def select_features(locations, model, threshold_quantile, min_keep=0):
    """Boolean keep-mask over one feature class by location score.

    Scores at or above the threshold-quantile score pass (ties kept);
    if that leaves fewer than ``min_keep``, the top-scoring ones are
    kept instead.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    n = len(locations)
    if n == 0:
        return np.zeros(0, dtype=bool)
    scores = model.predict(locations)
    thr = np.quantile(scores, threshold_quantile)
    # ties sit at the threshold up to fit jitter; keep them
    mask = scores >= thr - 1e-9 * max(1.0, abs(thr))
    if mask.sum() < min(min_keep, n):
        mask = np.zeros(n, dtype=bool)
        mask[np.argsort(-scores, kind="stable")[:min_keep]] = True
    return mask


def compute_window_stats(p_first, p_last, illum_values, m_p, m_l):
    """WindowStats from window-edge positions, illumination, track counts."""
    I_t = float(np.mean(illum_values))
    M_t = float(np.sum(np.abs(np.asarray(p_last, dtype=float)
                              - np.asarray(p_first, dtype=float))))
    return WindowStats(I_t, M_t, float(m_p), float(m_l))


def adaptive_weights(m_p, m_l, cfg=None):
    """Point/line fusion weights from mean track counts.

    The weights always sum to one exactly (w_l is computed as the
    complement).  Both counts zero is flagged and falls back to an even
    split.
    """
    if cfg is None:
        cfg = SelectionConfig()
    if m_p < 0 or m_l < 0:
        raise ValueError("track counts must be nonnegative")
    if m_p == 0 and m_l == 0:
        return AdaptiveWeights(0.5, 0.5, cfg.alpha2, "balanced", degenerate=True)
    hi, lo = max(m_p, m_l), min(m_p, m_l)
    if hi <= cfg.tau * lo:
        alpha, regime = cfg.alpha2, "balanced"
    elif m_l > m_p:
        alpha, regime = cfg.alpha1, "line-dominant"
    else:
        alpha, regime = cfg.alpha3, "point-dominant"
    w_p = m_p / (alpha * m_l + m_p)
    return AdaptiveWeights(w_p, 1.0 - w_p, alpha, regime)


def surface_grid(model, width, height, n=25):
    """Sample grid (x, y, score) rows for plotting/export."""
    xs = np.linspace(0, width - 1, n)
    ys = np.linspace(0, height - 1, n)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    z = model.predict(pts)
    return np.column_stack([pts, z])
