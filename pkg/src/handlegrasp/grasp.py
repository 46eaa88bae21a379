"""Grasp hypotheses, boundary lines and the three validation filters.

A hypothesis sits on a smooth segment with a local frame built from the
segment's mean normal ``n`` (outward, camera-facing) and one of its two PCA
axes as the closing axis ``a``; ``f = n x a`` runs along the finger width.
Local coordinates of a point ``p`` relative to the centre ``c`` are

    along = (p - c) . a      side offset, + side is along +a
    across = (p - c) . f     within the finger width when |across| <= w/2
    depth = -(p - c) . n     positive below the surface, negative toward the camera
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ranking
from .config import DetectorConfig, GripperGeometry
from .edges import BoundaryNotFound, EdgeMap, SplitLine, ValidatedBoundary, canny, depth_edges, merge_boundary
from .frame_io import Frame, estimate_normals, project, smooth_cloud
from .segmentation import DegenerateSegment, Segment, SegmentFeatures, region_grow, segment_features

__all__ = [
    "GripperGeometry", "HandleHypothesis", "BoundaryLine", "ValidatedHandle", "LineFitError",
    "DegenerateFrame", "CloudIndex", "GapResult", "darboux_frame", "gap_check", "fit_line",
    "extract_boundary_lines", "parallelism_check", "axis_perpendicularity_check",
    "occlusion_filter", "detect_handles", "Detection",
]


class DegenerateFrame(ValueError):
    """The chosen PCA axis is (nearly) parallel to the surface normal."""


class LineFitError(ValueError):
    """Points are coincident or isotropic; no dominant direction."""


@dataclass
class HandleHypothesis:
    c: np.ndarray
    n: np.ndarray
    a: np.ndarray
    f: np.ndarray
    r: float
    segment_id: int
    gap_plus: float
    gap_minus: float
    extent_plus: float = 0.0  # object extent along +a from c (m)
    extent_minus: float = 0.0  # object extent along -a from c (m)
    axis_choice: str = "major"
    center_index: int = 0

    @property
    def key(self) -> tuple:
        return (self.segment_id, 0 if self.axis_choice == "major" else 1, self.center_index)


@dataclass(frozen=True)
class BoundaryLine:
    p0: np.ndarray  # (x, y) image point on the line
    u: np.ndarray  # unit direction (u_x, u_y)
    inlier_count: int
    rms_residual: float

    def residuals(self, xy) -> np.ndarray:
        q = np.asarray(xy, float) - self.p0
        return q[:, 0] * self.u[1] - q[:, 1] * self.u[0]

    def point(self, t: float) -> np.ndarray:
        return self.p0 + t * self.u


@dataclass
class ValidatedHandle:
    hypothesis: HandleHypothesis
    line_plus: BoundaryLine
    line_minus: BoundaryLine
    a_b_raw: float
    a_axis_raw: float
    boundary: ValidatedBoundary | None = None
    line_extent_plus: float = 0.0
    line_extent_minus: float = 0.0
    axis_degenerate: bool = False
    stage_flags: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return self.hypothesis.key

    @property
    def c(self):
        return self.hypothesis.c

    @property
    def r(self):
        return self.hypothesis.r


# ---------------------------------------------------------------------------
# frame construction

def _canonical_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v if v[k] >= 0 else -v


def darboux_frame(features: SegmentFeatures, axis_choice: str = "major",
                  min_angle: float = math.radians(5.0)):
    """(n, a, f) from the mean normal and the chosen PCA axis; right-handed."""
    if axis_choice not in ("major", "minor"):
        raise ValueError("axis_choice must be 'major' or 'minor'")
    n = np.asarray(features.mean_normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    axis = features.axis_major if axis_choice == "major" else features.axis_minor
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    if abs(np.dot(axis, n)) > math.cos(min_angle):
        raise DegenerateFrame("closing axis is within 5 degrees of the normal")
    a = axis - np.dot(axis, n) * n
    a = _canonical_sign(a / np.linalg.norm(a))
    # one more pass keeps orthogonality at machine precision
    a -= np.dot(a, n) * n
    a /= np.linalg.norm(a)
    f = np.cross(n, a)
    f /= np.linalg.norm(f)
    return n, a, f


# ---------------------------------------------------------------------------
# gap check

class CloudIndex:
    """Radius queries over the valid points of an organized cloud.

    A query sphere is first projected to a pixel rectangle (the projection of
    its bounding cube), so only that window of the grid is scanned. Indices
    returned are flat pixel indices, ascending.
    """

    def __init__(self, frame: Frame):
        self.frame = frame
        h, w = frame.shape
        self.flat_points = frame.cloud.reshape(-1, 3)
        self.flat_valid = frame.valid.ravel()
        self._shape = (h, w)

    @property
    def points(self) -> np.ndarray:
        return self.flat_points

    def _window(self, c, radius):
        h, w = self._shape
        corners = np.asarray(c, float) + radius * np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        if corners[:, 2].min() <= 1e-6:
            return 0, h, 0, w
        uv = project(corners, self.frame.intrinsics)
        c0 = max(int(math.floor(uv[:, 0].min())), 0)
        c1 = min(int(math.ceil(uv[:, 0].max())) + 1, w)
        r0 = max(int(math.floor(uv[:, 1].min())), 0)
        r1 = min(int(math.ceil(uv[:, 1].max())) + 1, h)
        return r0, max(r1, r0), c0, max(c1, c0)

    def ball(self, c, radius) -> np.ndarray:
        r0, r1, c0, c1 = self._window(c, radius)
        h, w = self._shape
        if r1 <= r0 or c1 <= c0:
            return np.zeros(0, dtype=np.int64)
        cloud = self.frame.cloud[r0:r1, c0:c1]
        d = cloud - np.asarray(c, float)
        inside = self.frame.valid[r0:r1, c0:c1] & (np.einsum("...i,...i->...", d, d) <= radius * radius)
        rr, cc = np.nonzero(inside)
        return (rr + r0) * w + (cc + c0)

    def membership(self, idx, mask: np.ndarray) -> np.ndarray:
        return mask.ravel()[idx]


@dataclass
class GapResult:
    accepted: bool
    gap_plus: float
    gap_minus: float
    extent_plus: float
    extent_minus: float
    reason: str = ""

    @property
    def r(self) -> float:
        return (self.extent_plus + self.extent_minus) / 2


def _sweep(along_obj, along_other, behind, cap, step):
    """Object extent after absorbing contiguous foreign points, then free gap beyond it.

    Only points flagged ``behind`` (not in front of the surface) may extend
    the object; anything else ends the sweep as an obstacle.
    """
    b = float(along_obj.max())
    ahead = along_other > b
    order = np.argsort(along_other[ahead], kind="stable")
    xs, bh = along_other[ahead][order], behind[ahead][order]
    for x, back in zip(xs, bh):
        if back and x - b <= step:
            b = float(x)
        else:
            return b, min(float(x) - b, cap)
    return b, cap


def local_coords(points, c, n, a, f):
    q = np.asarray(points, float) - c
    return q @ a, q @ f, -(q @ n)


def gap_check(frame: Frame, c, axes, gripper: GripperGeometry, clearance_depth: float | None = None,
              *, segment_mask: np.ndarray, index: CloudIndex | None = None,
              sphere_radius: float | None = None, extension_step: float = 0.003) -> GapResult:
    """Measure free space beside the object on both sides of the closing axis.

    The finger test volume spans |across| <= w/2 and |depth| <= clearance_depth
    (default l): the finger's own length below the surface plus its approach
    path above it. The object's extent along +/-a starts at the segment's own
    points in that strip and absorbs foreign points that continue it without
    a gap wider than ``extension_step`` and do not rise in front of the
    surface (the object's own walls just past the segment rim). The gap is the distance from that extent to the next point,
    capped at d/2. Accepted iff r <= d/2 and both gaps exceed t.
    """
    n, a, f = (np.asarray(v, float) for v in axes)
    c = np.asarray(c, float)
    depth = gripper.l if clearance_depth is None else clearance_depth
    index = index or CloudIndex(frame)
    radius = sphere_radius if sphere_radius is not None else 1.5 * gripper.d
    idx = index.ball(c, radius)
    pts = index.points[idx]
    own = index.membership(idx, segment_mask)
    al, ac, dp = local_coords(pts, c, n, a, f)
    strip = np.abs(ac) <= gripper.w / 2
    mine = strip & own
    if not mine.any():
        return GapResult(False, 0.0, 0.0, 0.0, 0.0, "empty strip")
    cap = gripper.d / 2
    r0 = (al[mine].max() - al[mine].min()) / 2
    if r0 > cap:
        return GapResult(False, 0.0, 0.0, float(al[mine].max()), float(-al[mine].min()), "too wide")
    slab = strip & ~own & (np.abs(dp) <= depth)
    behind = dp[slab] >= -extension_step
    ext_p, gap_p = _sweep(al[mine], al[slab], behind, cap, extension_step)
    ext_m, gap_m = _sweep(-al[mine], -al[slab], behind, cap, extension_step)
    res = GapResult(True, gap_p, gap_m, ext_p, ext_m)
    if res.r > cap:
        res.accepted, res.reason = False, "too wide"
    elif not (gap_p > gripper.t and gap_m > gripper.t):
        res.accepted, res.reason = False, "gap"
    return res


# ---------------------------------------------------------------------------
# boundary lines

def fit_line(points, isotropy_tol: float = 1e-9) -> BoundaryLine:
    """Total-least-squares line through 2D points (orthogonal residuals)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise LineFitError("need at least two points")
    p0 = pts.mean(axis=0)
    q = pts - p0
    scatter = q.T @ q
    w, v = np.linalg.eigh(scatter)
    if w[1] <= 1e-18 * max(1.0, np.abs(pts).max() ** 2):
        raise LineFitError("points are coincident")
    if w[1] - w[0] <= isotropy_tol * w[1]:
        raise LineFitError("point scatter is isotropic; direction undefined")
    u = v[:, 1]
    if u[1] < 0 or (u[1] == 0 and u[0] < 0):
        u = -u
    res = q[:, 0] * u[1] - q[:, 1] * u[0]
    return BoundaryLine(p0=p0, u=u, inlier_count=len(pts),
                        rms_residual=float(np.sqrt(np.mean(res ** 2))))


def _xy(pixels) -> np.ndarray:
    pixels = np.asarray(pixels).reshape(-1, 2)
    return pixels[:, ::-1].astype(np.float64)


def extract_boundary_lines(vb: ValidatedBoundary) -> tuple[BoundaryLine, BoundaryLine]:
    if len(vb.plus_pixels) < 2 or len(vb.minus_pixels) < 2:
        raise BoundaryNotFound("a side has fewer than two validated points")
    return fit_line(_xy(vb.plus_pixels)), fit_line(_xy(vb.minus_pixels))


def parallelism_check(line_plus: BoundaryLine, line_minus: BoundaryLine, theta_r: float):
    a_b_raw = float(min(1.0, abs(np.dot(line_plus.u, line_minus.u))))
    return a_b_raw >= math.cos(theta_r), a_b_raw


def average_direction(line_plus: BoundaryLine, line_minus: BoundaryLine) -> np.ndarray:
    um = line_minus.u if np.dot(line_plus.u, line_minus.u) >= 0 else -line_minus.u
    avg = line_plus.u + um
    return avg / np.linalg.norm(avg)


def axis_image_direction(c, a, intr, step: float = 0.01, min_px: float = 0.5) -> np.ndarray | None:
    """Unit image direction of the 3D axis through ``c``; None if a ``step`` move spans < ``min_px``."""
    c = np.asarray(c, float)
    p = project(np.stack([c, c + step * np.asarray(a, float)]), intr)
    d = p[1] - p[0]
    nrm = np.linalg.norm(d)
    if not np.isfinite(nrm) or nrm < min_px:
        return None
    return d / nrm


def closing_image_direction(c, a, intr, f=None) -> np.ndarray | None:
    """Image direction the boundary lines should be perpendicular to.

    With ``f`` given this is the image normal of the projected finger-width
    axis, i.e. perpendicular to where a contact line orthogonal to ``a`` on
    the surface would run. Unlike the plain projection of ``a`` it stays
    correct under oblique perspective, where projected right angles skew.
    """
    if f is None:
        return axis_image_direction(c, a, intr)
    f_img = axis_image_direction(c, f, intr)
    if f_img is None:
        return None
    a_img = np.array([-f_img[1], f_img[0]])
    ref = axis_image_direction(c, a, intr, min_px=0.0)
    if ref is not None and np.dot(a_img, ref) < 0:
        a_img = -a_img
    return a_img


def axis_perpendicularity_check(a, lines, frame: Frame, theta_axis_tol: float, c, f=None):
    """Closing axis must look (near) perpendicular to the boundary lines in the image.

    Returns (passed, a_axis_raw, degenerate). A viewing-degenerate axis passes
    with the flag set and a_axis_raw = 0. See :func:`closing_image_direction`
    for the role of ``f``.
    """
    a_img = closing_image_direction(c, a, frame.intrinsics, f)
    if a_img is None:
        return True, 0.0, True
    u_avg = average_direction(*lines)
    raw = float(min(1.0, abs(np.dot(a_img, u_avg))))
    return raw <= math.sin(theta_axis_tol), raw, False


# ---------------------------------------------------------------------------
# occlusion

def approach_prism_bounds(vh: ValidatedHandle, gripper: GripperGeometry, margin: float):
    """(along_lo, along_hi, half_across, depth_lo, depth_hi) of the approach prism."""
    hyp = vh.hypothesis
    hi = max(vh.line_extent_plus, hyp.extent_plus) + margin
    lo = -(max(vh.line_extent_minus, hyp.extent_minus) + margin)
    return lo, hi, gripper.w / 2 + margin, -(gripper.l + margin), 0.0


def occlusion_filter(frame: Frame, vh: ValidatedHandle, gripper: GripperGeometry, margin: float = 0.005,
                     *, segment_mask: np.ndarray, index: CloudIndex | None = None,
                     min_height: float = 0.003) -> tuple[bool, int]:
    """Reject when a foreign point sits in the prism swept by the closing hand.

    The prism spans the two boundary lines (and the measured object extents),
    widened by ``margin``, and rises from ``min_height`` above the handle
    surface toward the outside along n by l + margin. Returns
    (passed, number of blocking points).
    """
    hyp = vh.hypothesis
    lo, hi, half, d_lo, _ = approach_prism_bounds(vh, gripper, margin)
    index = index or CloudIndex(frame)
    reach = math.sqrt(max(abs(lo), abs(hi)) ** 2 + half ** 2 + d_lo ** 2) + 1e-9
    idx = index.ball(hyp.c, reach)
    if len(idx) == 0:
        return True, 0
    pts = index.points[idx]
    own = index.membership(idx, segment_mask)
    al, ac, dp = local_coords(pts, hyp.c, hyp.n, hyp.a, hyp.f)
    inside = (~own & (al >= lo) & (al <= hi) & (np.abs(ac) <= half)
              & (dp >= d_lo) & (dp < -min_height))
    k = int(inside.sum())
    return k == 0, k


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class StageRecord:
    """Outcome of one (segment, axis, centre) hypothesis through the filters."""

    key: tuple
    stage: str  # last stage reached: width/gap/boundary/line/parallel/axis/occlusion/accepted
    hypothesis: HandleHypothesis | None = None
    handle: ValidatedHandle | None = None
    detail: str = ""

    @property
    def passed_gap(self) -> bool:
        return self.stage not in ("width", "gap", "strip")

    @property
    def passed_parallel(self) -> bool:
        return self.stage in ("axis", "occlusion", "accepted")

    @property
    def passed_axis(self) -> bool:
        return self.stage in ("occlusion", "accepted")

    @property
    def accepted(self) -> bool:
        return self.stage == "accepted"


@dataclass
class Detection:
    frame: Frame
    segments: list
    features: dict
    edges_c: EdgeMap
    edges_d: EdgeMap
    records: list
    handles: list  # deduplicated survivors, ascending cost
    timings: dict

    def stage_handles(self, stage: str) -> list:
        """Hypotheses (with provisional r) or handles that passed ``stage``."""
        if stage == "hypotheses":
            return [r for r in self.records if r.passed_gap]
        if stage == "parallel":
            return [r for r in self.records if r.passed_parallel]
        if stage == "axis":
            return [r for r in self.records if r.passed_axis]
        if stage == "overall":
            keys = {h.key for h in self.handles}
            return [r for r in self.records if r.accepted and r.key in keys]
        raise ValueError(stage)


def candidate_offsets(proj_f: np.ndarray, gripper: GripperGeometry, stride: float, cap: int) -> list:
    """Offsets along f from the centroid: 0, +s, -s, +2s, ... inside the segment."""
    lo, hi = proj_f.min() + gripper.w / 2, proj_f.max() - gripper.w / 2
    out = [0.0]
    k = 1
    while len(out) < cap:
        added = False
        for s in (k * stride, -k * stride):
            if lo <= s <= hi and len(out) < cap:
                out.append(s)
                added = True
        if not added and (k * stride > hi and -k * stride < lo):
            break
        k += 1
    return out


def _is_duplicate(h1: ValidatedHandle, h2: ValidatedHandle, dist: float, ang: float) -> bool:
    if np.linalg.norm(h1.c - h2.c) > dist:
        return False
    return abs(np.dot(h1.hypothesis.a, h2.hypothesis.a)) >= math.cos(ang)


def deduplicate(handles: list, cfg: DetectorConfig) -> list:
    """Drop near-identical handles, keeping the lower cost; returns ascending-cost order."""
    if not handles:
        return []
    feats = ranking.handle_features(handles)
    costs = ranking.score(feats, ranking.CostWeights(*cfg.weights))
    costs = np.atleast_1d(costs)
    order = ranking.order(costs.tolist(), feats[:, 2].tolist(), [h.key for h in handles])
    kept = []
    ang = math.radians(cfg.dedup_axis_deg)
    for i in order:
        if not any(_is_duplicate(handles[i], k, cfg.dedup_center, ang) for k in kept):
            kept.append(handles[i])
    return kept


def prepare_frame(frame: Frame, cfg: DetectorConfig) -> Frame:
    if cfg.smooth:
        frame = smooth_cloud(frame, cfg.smooth_spatial_sigma, cfg.smooth_range_sigma)
    if not frame.has_normals or cfg.smooth:
        frame = estimate_normals(frame, cfg.normal_window, adaptive=cfg.adaptive_normals)
    return frame


def evaluate_hypothesis(frame: Frame, seg: Segment, feats: SegmentFeatures, axis_choice: str,
                        offset: float, center_index: int, ctx: dict, cfg: DetectorConfig) -> StageRecord:
    """Run one candidate through gap, boundary, parallel, axis and occlusion stages."""
    gr = cfg.gripper
    key = (seg.id, 0 if axis_choice == "major" else 1, center_index)
    n, a, f = ctx["axes"]
    pts, mask, index = ctx["points"], ctx["mask"], ctx["index"]
    rel = pts - feats.centroid
    pf = rel @ f - offset
    strip = np.abs(pf) <= gr.w / 2
    if strip.sum() < cfg.min_strip_points:
        return StageRecord(key, "strip", detail="too few strip points")
    pa = rel[strip] @ a
    lo, hi = pa.min(), pa.max()
    if (hi - lo) / 2 > gr.d / 2:
        return StageRecord(key, "width", detail=f"r={(hi - lo) / 2:.3f}")
    target = feats.centroid + offset * f + (lo + hi) / 2 * a
    sp = pts[strip]
    c = sp[np.argmin(np.linalg.norm(sp - target, axis=1))]

    gap = gap_check(frame, c, (n, a, f), gr, segment_mask=mask, index=index,
                    sphere_radius=cfg.sphere_factor * gr.d, extension_step=cfg.extension_step)
    hyp = HandleHypothesis(c=c, n=n, a=a, f=f, r=gap.r, segment_id=seg.id,
                           gap_plus=gap.gap_plus, gap_minus=gap.gap_minus,
                           extent_plus=gap.extent_plus, extent_minus=gap.extent_minus,
                           axis_choice=axis_choice, center_index=center_index)
    if not gap.accepted:
        stage = "width" if gap.reason == "too wide" else "gap"
        return StageRecord(key, stage, hypothesis=hyp, detail=gap.reason)

    # rim pixels of this segment inside the finger strip
    e_s_all, e_s_pts = ctx["boundary"], ctx["boundary_points"]
    in_strip = np.abs((e_s_pts - c) @ f) <= gr.w / 2
    e_s = e_s_all[in_strip]
    intr = frame.intrinsics
    a_img = axis_image_direction(c, a, intr)
    c_img = project(c, intr)
    if a_img is None or len(e_s) == 0:
        return StageRecord(key, "boundary", hypothesis=hyp, detail="no rim in strip")
    try:
        vb = merge_boundary(e_s, ctx["e_c"], ctx["e_d"], cfg.match_radius,
                            SplitLine(point=c_img, normal=a_img), cloud=frame.cloud,
                            dead_zone=cfg.split_dead_zone)
        lines = extract_boundary_lines(vb)
    except BoundaryNotFound as exc:
        return StageRecord(key, "boundary", hypothesis=hyp, detail=str(exc))
    except Exception as exc:  # LineFitError
        if isinstance(exc, LineFitError):
            return StageRecord(key, "line", hypothesis=hyp, detail=str(exc))
        raise

    ok_par, a_b_raw = parallelism_check(*lines, math.radians(cfg.theta_r_deg))
    ok_axis, a_axis_raw, degen = axis_perpendicularity_check(
        a, lines, frame, math.radians(cfg.theta_axis_tol_deg), c,
        f if cfg.axis_reference == "across" else None)
    ext_plus = float(np.mean((vb.plus_points - c) @ a))
    ext_minus = float(-np.mean((vb.minus_points - c) @ a))
    # rim pixels sit a pixel or two inside the true edge, so the lines alone
    # undershoot; the contact span is the union with the swept object extent
    r_final = (max(ext_plus, hyp.extent_plus) + max(ext_minus, hyp.extent_minus)) / 2
    hyp_final = HandleHypothesis(**{**hyp.__dict__, "r": r_final})
    vh = ValidatedHandle(hypothesis=hyp_final, line_plus=lines[0], line_minus=lines[1],
                         a_b_raw=a_b_raw, a_axis_raw=a_axis_raw, boundary=vb,
                         line_extent_plus=ext_plus, line_extent_minus=ext_minus,
                         axis_degenerate=degen)
    # the axis verdict is recorded even when the parallel check already rejects
    vh.stage_flags = {"gap": True, "parallel": ok_par, "axis": ok_axis, "occlusion": None}
    if not ok_par:
        return StageRecord(key, "parallel", hypothesis=hyp, handle=vh)
    if cfg.axis_check and not ok_axis:
        return StageRecord(key, "axis", hypothesis=hyp, handle=vh)
    ok_occ, blocking = occlusion_filter(frame, vh, gr, cfg.occlusion_margin, segment_mask=mask,
                                        index=index, min_height=cfg.occlusion_min_height)
    vh.stage_flags["occlusion"] = ok_occ
    if not ok_occ:
        return StageRecord(key, "occlusion", hypothesis=hyp, handle=vh, detail=f"{blocking} points")
    return StageRecord(key, "accepted", hypothesis=hyp, handle=vh)


def detect_handles(frame: Frame, gripper: GripperGeometry | None = None,
                   config: DetectorConfig | None = None) -> Detection:
    """Full pipeline: normals, segments, edges, hypotheses and validation."""
    cfg = config or DetectorConfig()
    if gripper is not None and gripper != cfg.gripper:
        cfg = DetectorConfig.from_dict({**cfg.to_dict(), "gripper": gripper})
    gr = cfg.gripper
    timings = {}
    t0 = time.perf_counter()
    frame = prepare_frame(frame, cfg)
    timings["normals"] = time.perf_counter() - t0

    t = time.perf_counter()
    segments = region_grow(frame, math.radians(cfg.tau_deg), cfg.min_segment_size,
                           curvature_threshold=cfg.curvature_threshold,
                           curvature_floor=cfg.curvature_floor,
                           max_neighbor_dist=cfg.max_neighbor_dist, roi=cfg.roi)
    timings["segmentation"] = time.perf_counter() - t

    t = time.perf_counter()
    e_c = canny(frame.gray(), cfg.canny_sigma, cfg.canny_low, cfg.canny_high)
    e_d = depth_edges(frame, cfg.depth_jump, math.radians(cfg.normal_jump_deg))
    e_c.dilated(cfg.match_radius)
    e_d.dilated(cfg.match_radius)
    timings["edges"] = time.perf_counter() - t

    t = time.perf_counter()
    index = CloudIndex(frame)
    records, features = [], {}
    for seg in segments:
        try:
            feats = segment_features(frame, seg)
        except DegenerateSegment:
            continue
        features[seg.id] = feats
        limit = cfg.table_extent_factor * gr.d
        if feats.extent_major > limit and feats.extent_minor > limit:
            continue
        mask = seg.mask
        pts = frame.cloud[seg.pixels[:, 0], seg.pixels[:, 1]]
        rim = seg.boundary
        ctx = {"points": pts, "mask": mask, "index": index, "e_c": e_c, "e_d": e_d,
               "boundary": rim, "boundary_points": frame.cloud[rim[:, 0], rim[:, 1]]}
        for axis_choice in ("major", "minor"):
            try:
                ctx["axes"] = darboux_frame(feats, axis_choice)
            except DegenerateFrame:
                continue
            proj_f = (pts - feats.centroid) @ ctx["axes"][2]
            for ci, off in enumerate(candidate_offsets(proj_f, gr, cfg.center_stride, cfg.max_centers)):
                records.append(evaluate_hypothesis(frame, seg, feats, axis_choice, off, ci, ctx, cfg))
    timings["hypotheses"] = time.perf_counter() - t

    survivors = [r.handle for r in records if r.accepted]
    handles = deduplicate(survivors, cfg)
    timings["total"] = time.perf_counter() - t0
    return Detection(frame=frame, segments=segments, features=features, edges_c=e_c, edges_d=e_d,
                     records=records, handles=handles, timings=timings)
