"""Ground-truth construction pipeline: confidence-gated 2D repair,
multi-view triangulation, least-squares spline smoothing, and limb-length
constrained pose optimization.

The optimization stage minimizes, over all frames,

    E = w_limb  * sum (limb length - per-sequence mean length)^2
      + w_foot  * sum ||foot_t - foot_{t-1}||^2 over grounded frames
      + w_shape * sum (hip/shoulder width - sequence median width)^2
      + w_anchor* sum ||pose - initial pose||^2

by plain gradient descent with a backtracking line search, so the objective
is nonincreasing across accepted iterations. Mean limb lengths are
recomputed per outer iteration; since the mean minimizes the limb term, the
recomputation never increases the objective either. Ground contact and the
width medians are frozen from the input poses, keeping E smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import LSQUnivariateSpline

from .skeleton import Skeleton


@dataclass
class Detection2DSequence:
    """One camera view: (T, J, 2) pixel detections with (T, J) confidences."""

    uv: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.uv.ndim != 3 or self.uv.shape[2] != 2 \
                or self.confidence.shape != self.uv.shape[:2]:
            raise ValueError(
                f"bad detection shapes: uv {self.uv.shape}, conf {self.confidence.shape}")
        if ((self.confidence < 0) | (self.confidence > 1)).any():
            raise ValueError("confidences must lie in [0, 1]")


@dataclass
class CameraRig:
    """Calibrated views: one 3x4 projection matrix (world mm -> pixels) each."""

    projections: list

    def __post_init__(self):
        mats = []
        for i, p in enumerate(self.projections):
            p = np.asarray(p, dtype=np.float64)
            if p.shape != (3, 4):
                raise ValueError(f"projection {i} has shape {p.shape}, expected (3,4)")
            if np.linalg.matrix_rank(p) != 3:
                raise ValueError(f"projection {i} is rank-deficient")
            mats.append(p)
        self.projections = mats

    def __len__(self):
        return len(self.projections)

    def project(self, points: np.ndarray) -> np.ndarray:
        """(..., 3) world points -> list of (..., 2) pixel arrays per view."""
        pts = np.asarray(points, dtype=np.float64)
        hom = np.concatenate([pts, np.ones(pts.shape[:-1] + (1,))], axis=-1)
        out = []
        for p in self.projections:
            proj = hom @ p.T
            out.append(proj[..., :2] / proj[..., 2:3])
        return out


@dataclass
class RefineConfig:
    confidence_threshold: float = 0.3
    spline_window: int = 30      # frames between spline knots
    spline_degree: int = 3
    w_limb: float = 1.0
    w_foot: float = 0.1
    w_shape: float = 0.1
    w_anchor: float = 0.01
    max_iterations: int = 400    # inner gradient steps in total
    outer_iterations: int = 5    # mean-length refresh rounds
    tolerance: float = 1e-3      # sup-norm of the gradient at convergence
    contact_height_mm: float = 20.0
    floor_percentile: float = 5.0
    up_axis: int = 2
    refine_reprojection: bool = True

    def __post_init__(self):
        if min(self.w_limb, self.w_foot, self.w_shape, self.w_anchor) < 0:
            raise ValueError("weights must be nonnegative")
        if self.spline_window < 4:
            raise ValueError("spline window must be >= 4 for a cubic fit")


# -- camera / detection file formats -----------------------------------------

def write_cameras(path, rig: CameraRig):
    with open(path, "w") as f:
        for p in rig.projections:
            f.write(" ".join(repr(float(v)) for v in p.reshape(-1)) + "\n")


def read_cameras(path) -> CameraRig:
    mats = []
    with open(path) as f:
        for line in f:
            vals = [float(v) for v in line.split()]
            if not vals:
                continue
            if len(vals) != 12:
                raise ValueError(f"camera line has {len(vals)} numbers, expected 12")
            mats.append(np.asarray(vals).reshape(3, 4))
    if not mats:
        raise ValueError(f"no cameras in {path}")
    return CameraRig(mats)


def write_detections(path, seq: Detection2DSequence):
    t, j, _ = seq.uv.shape
    with open(path, "w") as f:
        f.write("frame,joint,u,v,confidence\n")
        for fi in range(t):
            for ji in range(j):
                u, v = seq.uv[fi, ji]
                f.write(f"{fi},{ji},{u!r},{v!r},{seq.confidence[fi, ji]!r}\n")


def read_detections(path) -> Detection2DSequence:
    rows = []
    with open(path) as f:
        next(f)
        for line in f:
            fi, ji, u, v, c = line.strip().split(",")
            rows.append((int(fi), int(ji), float(u), float(v), float(c)))
    if not rows:
        raise ValueError(f"no detections in {path}")
    t = max(r[0] for r in rows) + 1
    j = max(r[1] for r in rows) + 1
    uv = np.zeros((t, j, 2))
    conf = np.zeros((t, j))
    for fi, ji, u, v, c in rows:
        uv[fi, ji] = (u, v)
        conf[fi, ji] = c
    return Detection2DSequence(uv, conf)


def look_at_projection(position, target, focal_px: float, principal,
                       up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Convenience constructor of a 3x4 projection for a camera at `position`
    looking at `target` (all in world mm)."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    intr = np.array([[focal_px, 0, principal[0]],
                     [0, focal_px, principal[1]],
                     [0, 0, 1.0]])
    return intr @ np.concatenate([rot, -(rot @ position)[:, None]], axis=1)


# -- 2D repair ----------------------------------------------------------------

def repair_2d(seq: Detection2DSequence, threshold: float
              ) -> tuple[Detection2DSequence, np.ndarray]:
    """Replace every low-confidence joint detection by linear interpolation
    between the nearest high-confidence frames of the same joint (boundary
    frames hold the nearest trusted value).

    Repaired entries get confidence exactly `threshold` so downstream stages
    use them at minimum weight. Returns (repaired sequence, repaired mask).
    Relies on the first frame of each sequence being trusted (manual
    assignment); raises if some joint has no trusted frame at all.
    """
    uv = seq.uv.copy()
    conf = seq.confidence.copy()
    t, j, _ = uv.shape
    repaired = conf < threshold
    frames = np.arange(t)
    for ji in range(j):
        good = conf[:, ji] >= threshold
        if not good.any():
            raise ValueError(f"joint {ji} has no detection above {threshold}")
        if good.all():
            continue
        for d in range(2):
            uv[~good, ji, d] = np.interp(frames[~good], frames[good],
                                         uv[good, ji, d])
        conf[~good, ji] = threshold
    return Detection2DSequence(uv, conf), repaired


# -- triangulation ------------------------------------------------------------

def triangulate(observations, rig: CameraRig, threshold: float = 0.0,
                refine: bool = True) -> tuple[np.ndarray | None, float]:
    """Confidence-weighted DLT for one point.

    observations: (V, 3) rows of (u, v, confidence), one per view (NaN or
    confidence < threshold marks an unusable view). Returns (point, mean
    reprojection residual in px) or (None, nan) when fewer than two views
    are usable.
    """
    obs = np.asarray(observations, dtype=np.float64)
    usable = np.isfinite(obs).all(axis=1) & (obs[:, 2] >= max(threshold, 1e-12))
    if usable.sum() < 2:
        return None, float("nan")
    rows = []
    for vi in np.flatnonzero(usable):
        p = rig.projections[vi]
        u, v, w = obs[vi]
        rows.append(w * (u * p[2] - p[0]))
        rows.append(w * (v * p[2] - p[1]))
    a = np.stack(rows)
    _, _, vt = np.linalg.svd(a)
    hom = vt[-1]
    if abs(hom[3]) < 1e-12:
        return None, float("nan")
    point = hom[:3] / hom[3]
    if refine:
        point = _refine_point(point, obs, rig, usable)
    return point, _mean_residual(point, obs, rig, usable)


def _mean_residual(point, obs, rig, usable) -> float:
    errs = []
    hom = np.append(point, 1.0)
    for vi in np.flatnonzero(usable):
        proj = rig.projections[vi] @ hom
        errs.append(np.linalg.norm(proj[:2] / proj[2] - obs[vi, :2]))
    return float(np.mean(errs))


def _refine_point(point, obs, rig, usable, iterations: int = 10) -> np.ndarray:
    """Gauss-Newton on the confidence-weighted reprojection error."""
    x = point.copy()
    views = np.flatnonzero(usable)

    def residuals_jac(p):
        res = np.empty(2 * len(views))
        jac = np.empty((2 * len(views), 3))
        hom = np.append(p, 1.0)
        for i, vi in enumerate(views):
            pm = rig.projections[vi]
            u, v, w = obs[vi]
            num = pm @ hom
            d = num[2]
            res[2 * i] = w * (num[0] / d - u)
            res[2 * i + 1] = w * (num[1] / d - v)
            jac[2 * i] = w * (pm[0, :3] * d - num[0] * pm[2, :3]) / d ** 2
            jac[2 * i + 1] = w * (pm[1, :3] * d - num[1] * pm[2, :3]) / d ** 2
        return res, jac

    res, jac = residuals_jac(x)
    best = res @ res
    for _ in range(iterations):
        try:
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        candidate = x + step
        res_c, jac_c = residuals_jac(candidate)
        if res_c @ res_c >= best:
            break
        x, res, jac, best = candidate, res_c, jac_c, res_c @ res_c
    return x


def triangulate_sequence(views: list[Detection2DSequence], rig: CameraRig,
                         threshold: float
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per frame and joint: (T, J, 3) points, (T, J) px residuals, and a
    (T, J) mask of entries left missing (fewer than two usable views)."""
    if len(views) != len(rig):
        raise ValueError(f"{len(views)} detection views for {len(rig)} cameras")
    t, j, _ = views[0].uv.shape
    for v in views:
        if v.uv.shape != (t, j, 2):
            raise ValueError("views are not frame-aligned")
    points = np.full((t, j, 3), np.nan)
    residuals = np.full((t, j), np.nan)
    missing = np.zeros((t, j), dtype=bool)
    obs = np.empty((len(views), 3))
    for fi in range(t):
        for ji in range(j):
            for vi, view in enumerate(views):
                obs[vi, :2] = view.uv[fi, ji]
                obs[vi, 2] = view.confidence[fi, ji]
            point, res = triangulate(obs, rig, threshold)
            if point is None:
                missing[fi, ji] = True
            else:
                points[fi, ji] = point
                residuals[fi, ji] = res
    return points, residuals, missing


# -- spline smoothing ---------------------------------------------------------

def spline_smooth(track: np.ndarray, window: int = 30, degree: int = 3
                  ) -> np.ndarray:
    """Least-squares piecewise-cubic fit of one scalar track with knots every
    `window` frames, evaluated at every frame. NaN entries are treated as
    missing and filled by the fit."""
    track = np.asarray(track, dtype=np.float64)
    if track.ndim != 1:
        raise ValueError(f"expected 1-D track, got shape {track.shape}")
    frames = np.arange(len(track), dtype=np.float64)
    good = np.isfinite(track)
    if not good.any():
        raise ValueError("track has no observed values")
    x, y = frames[good], track[good]
    if len(x) <= degree:
        coeffs = np.polyfit(x, y, deg=len(x) - 1)
        return np.polyval(coeffs, frames)
    knots = np.arange(x[0] + window, x[-1] - 1e-9, window)
    while True:
        try:
            spline = LSQUnivariateSpline(x, y, knots, k=degree)
            break
        except ValueError:
            if len(knots) == 0:
                raise
            knots = knots[::2][: len(knots) // 2]  # thin out until feasible
    return spline(frames)


def smooth_points(points: np.ndarray, missing: np.ndarray,
                  config: RefineConfig) -> np.ndarray:
    """Apply spline_smooth separately to each dimension of each joint."""
    t, j, _ = points.shape
    out = np.empty_like(points)
    filled = points.copy()
    filled[missing] = np.nan
    for ji in range(j):
        for d in range(3):
            out[:, ji, d] = spline_smooth(filled[:, ji, d],
                                          config.spline_window,
                                          config.spline_degree)
    return out


# -- limb-length constrained optimization --------------------------------------

def limb_lengths(poses: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """(T, K) poses -> (T, C) limb lengths."""
    joints = skeleton.joints_of(poses)
    a = np.array([l[0] for l in skeleton.limbs])
    b = np.array([l[1] for l in skeleton.limbs])
    return np.linalg.norm(joints[:, a] - joints[:, b], axis=-1)


def _pair_term(joints, pairs, targets, weight, grad):
    """Accumulate w * sum (||pa-pb|| - target)^2 and its gradient; `targets`
    is per-pair (broadcast over frames) or per-frame-and-pair."""
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    d = joints[:, a] - joints[:, b]
    lens = np.linalg.norm(d, axis=-1)
    dev = lens - targets
    safe = np.where(lens > 1e-12, lens, 1.0)
    coeff = 2.0 * weight * dev / safe
    contrib = coeff[..., None] * d
    np.add.at(grad, (slice(None), a), contrib)
    np.add.at(grad, (slice(None), b), -contrib)
    return weight * float((dev ** 2).sum())


def _objective(flat, anchor, skeleton, mean_lens, medians, contact,
               config) -> tuple[float, np.ndarray]:
    """E and dE/dP with all targets (mean lengths, medians, contact) fixed."""
    t = anchor.shape[0]
    joints = flat.reshape(t, skeleton.joint_count, 3)
    grad = np.zeros_like(joints)
    energy = _pair_term(joints, skeleton.limbs, mean_lens[None, :],
                        config.w_limb, grad)

    feet = (skeleton.landmark("left_foot"), skeleton.landmark("right_foot"))
    for fi, foot in enumerate(feet):
        diff = joints[1:, foot] - joints[:-1, foot]
        mask = contact[1:, fi] & contact[:-1, fi]
        diff = diff * mask[:, None]
        energy += config.w_foot * float((diff ** 2).sum())
        g = 2.0 * config.w_foot * diff
        grad[1:, foot] += g
        grad[:-1, foot] -= g

    width_pairs = [(skeleton.landmark("left_hip"), skeleton.landmark("right_hip")),
                   (skeleton.landmark("left_shoulder"),
                    skeleton.landmark("right_shoulder"))]
    energy += _pair_term(joints, width_pairs, medians[None, :],
                         config.w_shape, grad)

    diff = joints - anchor.reshape(joints.shape)
    energy += config.w_anchor * float((diff ** 2).sum())
    grad += 2.0 * config.w_anchor * diff
    return energy, grad.reshape(flat.shape)


@dataclass
class OptimizeReport:
    objective_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    grad_norm: float = float("nan")
    limb_std_before: float = float("nan")
    limb_std_after: float = float("nan")


def limb_optimize(poses: np.ndarray, skeleton: Skeleton,
                  config: RefineConfig | None = None
                  ) -> tuple[np.ndarray, OptimizeReport]:
    """Gradient descent with backtracking on the constrained objective.

    Returns the refined (T, K) poses and a report; if the iteration cap is
    hit before the gradient tolerance, the best iterate so far is returned
    with converged=False.
    """
    config = config or RefineConfig()
    poses = np.asarray(poses, dtype=np.float64)
    if not np.isfinite(poses).all():
        raise ValueError("non-finite input poses")
    anchor = poses.copy()
    joints0 = skeleton.joints_of(poses)

    heights = np.stack([joints0[:, skeleton.landmark("left_foot"), config.up_axis],
                        joints0[:, skeleton.landmark("right_foot"), config.up_axis]],
                       axis=1)
    floor = np.percentile(heights, config.floor_percentile)
    contact = heights <= floor + config.contact_height_mm

    def width(pair):
        return np.linalg.norm(joints0[:, pair[0]] - joints0[:, pair[1]], axis=-1)

    medians = np.array([
        np.median(width((skeleton.landmark("left_hip"),
                         skeleton.landmark("right_hip")))),
        np.median(width((skeleton.landmark("left_shoulder"),
                         skeleton.landmark("right_shoulder")))),
    ])

    report = OptimizeReport()
    report.limb_std_before = float(limb_lengths(poses, skeleton).std(axis=0).mean())

    x = poses.reshape(-1).copy()
    step = 0.5
    for _ in range(config.outer_iterations):
        mean_lens = limb_lengths(x.reshape(poses.shape), skeleton).mean(axis=0)
        energy, grad = _objective(x, anchor, skeleton, mean_lens, medians,
                                  contact, config)
        if not report.objective_history:
            report.objective_history.append(energy)
        while report.iterations < config.max_iterations:
            gnorm = np.abs(grad).max()
            if gnorm < config.tolerance:
                report.converged = True
                break
            accepted = False
            for _ in range(50):
                candidate = x - step * grad
                e_new, g_new = _objective(candidate, anchor, skeleton,
                                          mean_lens, medians, contact, config)
                if e_new <= energy - 1e-4 * step * float(grad @ grad):
                    x, energy, grad = candidate, e_new, g_new
                    accepted = True
                    step *= 2.0
                    break
                step *= 0.5
            report.iterations += 1
            if not accepted:
                break  # line search stalled at numerical precision
            report.objective_history.append(energy)
        if report.converged or report.iterations >= config.max_iterations:
            # refreshing the means can only shrink the limb term; record it
            mean_lens = limb_lengths(x.reshape(poses.shape), skeleton).mean(axis=0)
            energy, grad = _objective(x, anchor, skeleton, mean_lens, medians,
                                      contact, config)
            if report.converged and np.abs(grad).max() >= config.tolerance:
                report.converged = False
                continue
            break

    report.grad_norm = float(np.abs(grad).max())
    refined = x.reshape(poses.shape)
    report.limb_std_after = float(limb_lengths(refined, skeleton).std(axis=0).mean())
    return refined, report


# -- full pipeline --------------------------------------------------------------

@dataclass
class PipelineReport:
    mean_reprojection_px: float
    missing_fraction: float
    limb_std_triangulated: float
    limb_std_refined: float
    optimize: OptimizeReport


def run_pipeline(views: list[Detection2DSequence], rig: CameraRig,
                 skeleton: Skeleton, config: RefineConfig | None = None
                 ) -> tuple[np.ndarray, PipelineReport]:
    """repair_2d -> triangulate -> spline_smooth -> limb_optimize.

    Returns (T, K) refined poses plus per-stage quality numbers. The
    triangulation-stage limb statistic is computed over frames where both
    limb endpoints triangulated.
    """
    config = config or RefineConfig()
    repaired = [repair_2d(v, config.confidence_threshold)[0] for v in views]
    points, residuals, missing = triangulate_sequence(
        repaired, rig, config.confidence_threshold)
    smooth = smooth_points(points, missing, config)
    flat = smooth.reshape(smooth.shape[0], -1)
    refined, opt_report = limb_optimize(flat, skeleton, config)

    tri_std = _masked_limb_std(points, missing, skeleton)
    report = PipelineReport(
        mean_reprojection_px=float(np.nanmean(residuals)),
        missing_fraction=float(missing.mean()),
        limb_std_triangulated=tri_std,
        limb_std_refined=opt_report.limb_std_after,
        optimize=opt_report,
    )
    return refined, report


def _masked_limb_std(points: np.ndarray, missing: np.ndarray,
                     skeleton: Skeleton) -> float:
    stds = []
    for a, b in skeleton.limbs:
        ok = ~missing[:, a] & ~missing[:, b]
        if ok.sum() >= 2:
            lens = np.linalg.norm(points[ok, a] - points[ok, b], axis=-1)
            stds.append(lens.std())
    return float(np.mean(stds)) if stds else float("nan")
