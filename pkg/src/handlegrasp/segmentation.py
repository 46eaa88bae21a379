"""Smooth-surface segmentation of an organized cloud by region growing.

Growth follows the classic smoothness-constraint scheme: a region expands
from a seed into 4-neighbours whose normal deviates from the expanding
pixel's normal by at most ``tau``; an admitted pixel keeps expanding only if
its own curvature is low enough to act as a seed. Because every admitted
low-curvature pixel becomes a seed, a region is exactly a connected
component of the "seed-capable" pixels under the admissible-edge relation,
plus the high-curvature pixels those seeds admit. That formulation lets us
grow all regions at once with a sparse connected-components pass instead
of a per-pixel Python queue.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .frame_io import Frame, FrameError


class DegenerateSegment(ValueError):
    """Segment points do not span a plane (rank < 2)."""


@dataclass
class Segment:
    id: int
    pixels: np.ndarray  # (N, 2) int rows/cols, raster order
    seed_of: np.ndarray  # (N, 2) pixel that admitted each entry of ``pixels``
    shape: tuple[int, int]
    noisy: bool = False
    _boundary: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.pixels[:, 0], self.pixels[:, 1]] = True
        return m

    @property
    def boundary(self) -> np.ndarray:
        if self._boundary is None:
            self._boundary = segment_boundary(self)
        return self._boundary


@dataclass(frozen=True)
class SegmentFeatures:
    centroid: np.ndarray
    mean_normal: np.ndarray
    axis_major: np.ndarray
    axis_minor: np.ndarray
    eigvals: np.ndarray  # descending
    extent_major: float
    extent_minor: float
    noisy: bool = False


_OFFSETS_4 = ((-1, 0), (0, -1), (1, 0), (0, 1))


def _normal_angle_ok(n1: np.ndarray, n2: np.ndarray, cos_tau: float) -> np.ndarray:
    return np.einsum("...i,...i->...", n1, n2) >= cos_tau


def region_grow(
    frame: Frame,
    tau: float = math.radians(4.0),
    min_size: int = 300,
    *,
    curvature_threshold: float | None = None,
    curvature_floor: float = 0.005,
    max_neighbor_dist: float = 0.01,
    roi: tuple[int, int, int, int] | None = None,
) -> list[Segment]:
    """Grow smooth-surface segments over the normal-valid pixels of ``frame``.

    ``curvature_threshold`` gates which admitted pixels may keep expanding; by
    default it is the 90th percentile of the frame's curvature, as in the
    original smoothness-constraint method, but never below
    ``curvature_floor`` so that noise-free planes do not starve smooth curved
    surfaces of seeds. ``max_neighbor_dist`` (metres)
    stands in for that method's metric neighbourhood: grid neighbours further
    apart in 3D are not adjacent. ``roi`` is ``(row0, col0, row1, col1)``.
    """
    if not frame.has_normals:
        raise FrameError("region_grow needs normals; run estimate_normals first")
    if not 0 < tau < math.pi / 2:
        raise ValueError("tau must lie in (0, pi/2)")
    h, w = frame.shape
    valid = frame.normal_valid.copy()
    if roi is not None:
        r0, c0, r1, c1 = roi
        roi_mask = np.zeros_like(valid)
        roi_mask[max(r0, 0):r1, max(c0, 0):c1] = True
        valid &= roi_mask
    if not valid.any():
        return []
    curv = frame.curvature
    if curvature_threshold is None:
        curvature_threshold = max(float(np.percentile(curv[valid], 90)), curvature_floor)
    seedable = valid & (curv <= curvature_threshold)

    normals, cloud = frame.normals, frame.cloud
    cos_tau = math.cos(tau)
    d2max = max_neighbor_dist ** 2
    idx = np.arange(h * w).reshape(h, w)

    # admissible edges, right and down neighbours
    def edges(a_sl, b_sl):
        ok = valid[a_sl] & valid[b_sl]
        ok &= _normal_angle_ok(normals[a_sl], normals[b_sl], cos_tau)
        diff = cloud[a_sl] - cloud[b_sl]
        ok &= np.einsum("...i,...i->...", diff, diff) <= d2max
        return ok

    right = edges((slice(None), slice(0, w - 1)), (slice(None), slice(1, w)))
    down = edges((slice(0, h - 1), slice(None)), (slice(1, h), slice(None)))
    adm = np.zeros((4, h, w), dtype=bool)  # up, left, down, right
    adm[3, :, :-1] = right
    adm[1, :, 1:] = right
    adm[2, :-1, :] = down
    adm[0, 1:, :] = down

    # seed graph: seedable pixels joined by admissible edges
    rs = right & seedable[:, :-1] & seedable[:, 1:]
    ds = down & seedable[:-1, :] & seedable[1:, :]
    src = np.concatenate([idx[:, :-1][rs], idx[:-1, :][ds]])
    dst = np.concatenate([idx[:, 1:][rs], idx[1:, :][ds]])
    graph = sparse.coo_matrix((np.ones(len(src), dtype=np.int8), (src, dst)), shape=(h * w, h * w))
    _, comp = csgraph.connected_components(graph, directed=False)
    comp = comp.reshape(h, w)

    # order components like sequential growth would: lowest-curvature seed first
    seed_pixels = np.flatnonzero(seedable.ravel())
    if len(seed_pixels) == 0:
        return []
    seed_comp = comp.ravel()[seed_pixels]
    seed_curv = curv.ravel()[seed_pixels]
    order = np.lexsort((seed_pixels, seed_curv))
    first_seen: dict[int, int] = {}
    roots: dict[int, int] = {}
    for k in order:
        c = int(seed_comp[k])
        if c not in first_seen:
            first_seen[c] = len(first_seen)
            roots[c] = int(seed_pixels[k])
    rank = np.full(comp.max() + 1, np.iinfo(np.int64).max, dtype=np.int64)
    for c, r in first_seen.items():
        rank[c] = r

    label = np.full((h, w), -1, dtype=np.int64)
    label[seedable] = rank[comp[seedable]]
    seed_of = np.full((h, w, 2), -1, dtype=np.int64)
    rows, cols = np.mgrid[0:h, 0:w]

    # seedable pixels: any admissible neighbour in the same component admitted them
    big = np.iinfo(np.int64).max
    for k, (dr, dc) in enumerate(_OFFSETS_4):
        nbr_lab = np.full((h, w), big, dtype=np.int64)
        src_r = slice(max(dr, 0), h + min(dr, 0))
        src_c = slice(max(dc, 0), w + min(dc, 0))
        dst_r = slice(max(-dr, 0), h + min(-dr, 0))
        dst_c = slice(max(-dc, 0), w + min(-dc, 0))
        nbr_lab[dst_r, dst_c] = np.where(seedable[src_r, src_c], label[src_r, src_c], big)
        hit = seedable & adm[k] & (nbr_lab == label) & (seed_of[..., 0] < 0)
        seed_of[hit, 0] = rows[hit] + dr
        seed_of[hit, 1] = cols[hit] + dc
    lone = seedable & (seed_of[..., 0] < 0)
    seed_of[lone, 0] = rows[lone]
    seed_of[lone, 1] = cols[lone]

    # high-curvature pixels join the earliest-grown adjacent region
    loose = valid & ~seedable
    best = np.full((h, w), big, dtype=np.int64)
    best_dir = np.full((h, w), -1, dtype=np.int64)
    for k, (dr, dc) in enumerate(_OFFSETS_4):
        nbr_lab = np.full((h, w), big, dtype=np.int64)
        src_r = slice(max(dr, 0), h + min(dr, 0))
        src_c = slice(max(dc, 0), w + min(dc, 0))
        dst_r = slice(max(-dr, 0), h + min(-dr, 0))
        dst_c = slice(max(-dc, 0), w + min(-dc, 0))
        nbr_lab[dst_r, dst_c] = np.where(seedable[src_r, src_c], label[src_r, src_c], big)
        better = loose & adm[k] & (nbr_lab < best)
        best[better] = nbr_lab[better]
        best_dir[better] = k
    attach = loose & (best < big)
    label[attach] = best[attach]
    for k, (dr, dc) in enumerate(_OFFSETS_4):
        sel = attach & (best_dir == k)
        seed_of[sel, 0] = rows[sel] + dr
        seed_of[sel, 1] = cols[sel] + dc

    flat = label.ravel()
    members = flat >= 0
    counts = np.bincount(flat[members])
    keep = np.flatnonzero(counts >= min_size)
    segments = []
    lin = np.flatnonzero(members)
    labs = flat[lin]
    sort = np.argsort(labs, kind="stable")
    lin, labs = lin[sort], labs[sort]
    bounds = np.searchsorted(labs, keep), np.searchsorted(labs, keep, side="right")
    for new_id, (lo, hi) in enumerate(zip(*bounds)):
        pix_lin = lin[lo:hi]
        pix = np.stack(np.unravel_index(pix_lin, (h, w)), axis=1)
        so = seed_of.reshape(-1, 2)[pix_lin]
        segments.append(Segment(id=new_id, pixels=pix, seed_of=so, shape=(h, w)))
    return segments


def label_map(segments: list[Segment], shape: tuple[int, int]) -> np.ndarray:
    lab = np.full(shape, -1, dtype=np.int32)
    for s in segments:
        lab[s.pixels[:, 0], s.pixels[:, 1]] = s.id
    return lab


def segment_boundary(seg: Segment) -> np.ndarray:
    """Pixels of ``seg`` with at least one 4-neighbour outside it, contour-ordered.

    Ordering follows OpenCV's border following; pixels it does not visit
    (e.g. on inner holes of thin structures) are appended in raster order.
    """
    if len(seg.pixels) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    r0, c0 = seg.pixels.min(axis=0) - 1
    r1, c1 = seg.pixels.max(axis=0) + 2
    local = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    local[seg.pixels[:, 0] - r0, seg.pixels[:, 1] - c0] = True
    cross = ndimage.generate_binary_structure(2, 1)
    inner = ndimage.binary_erosion(local, structure=cross, border_value=0)
    rim = local & ~inner

    contours, _ = cv2.findContours(local.astype(np.uint8), cv2.RETR_LIST, cv2.CHAIN_APPROX_NONE)
    seen = np.zeros_like(rim)
    ordered = []
    for cnt in contours:
        for x, y in cnt[:, 0, :]:
            if rim[y, x] and not seen[y, x]:
                seen[y, x] = True
                ordered.append((y, x))
    rest = np.argwhere(rim & ~seen)
    out = np.array(ordered, dtype=np.int64).reshape(-1, 2)
    if len(rest):
        out = np.concatenate([out, rest])
    out[:, 0] += r0
    out[:, 1] += c0
    return out


def _orthonormal_axes(evecs: np.ndarray, mean_normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    major = evecs[:, 2] - np.dot(evecs[:, 2], mean_normal) * mean_normal
    nrm = np.linalg.norm(major)
    if nrm < 1e-9:
        major = evecs[:, 1] - np.dot(evecs[:, 1], mean_normal) * mean_normal
        nrm = np.linalg.norm(major)
    major /= nrm
    minor = np.cross(mean_normal, major)
    minor /= np.linalg.norm(minor)
    return major, minor


def features_from_points(points: np.ndarray, normals: np.ndarray | None = None) -> SegmentFeatures:
    """PCA features for a point set; ``normals`` (per point) set the mean normal."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        raise DegenerateSegment("need at least 3 points")
    centroid = points.mean(axis=0)
    q = points - centroid
    cov = q.T @ q / len(points)
    w, v = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    if w[1] <= 1e-12 * max(w[2], 1e-300) or w[2] <= 0:
        raise DegenerateSegment("segment points are collinear or coincident")
    pca_normal = v[:, 0]
    if normals is not None and len(normals):
        mn = normals.mean(axis=0)
        if np.linalg.norm(mn) < 1e-9:
            mn = pca_normal
    else:
        mn = pca_normal
    mn = mn / np.linalg.norm(mn)
    if np.dot(mn, centroid) > 0:
        mn = -mn
    noisy = abs(np.dot(mn, pca_normal)) < math.cos(math.radians(30))
    major, minor = _orthonormal_axes(v, mn)
    pm, pn = q @ major, q @ minor
    return SegmentFeatures(
        centroid=centroid,
        mean_normal=mn,
        axis_major=major,
        axis_minor=minor,
        eigvals=w[::-1].copy(),
        extent_major=float(np.ptp(pm)),
        extent_minor=float(np.ptp(pn)),
        noisy=bool(noisy),
    )


def segment_features(frame: Frame, seg: Segment) -> SegmentFeatures:
    r, c = seg.pixels[:, 0], seg.pixels[:, 1]
    pts = frame.cloud[r, c]
    nrm = frame.normals[r, c] if frame.has_normals else None
    feats = features_from_points(pts, nrm)
    seg.noisy = feats.noisy
    return feats


def dump_segmentation(segments, frame: Frame, png_path, json_path=None) -> None:
    """Debug output: indexed label PNG plus optional features JSON."""
    lab = label_map(segments, frame.shape)
    out = np.where(lab >= 0, (lab % 254) + 1, 0).astype(np.uint8)
    cv2.imwrite(str(png_path), out)
    if json_path is None:
        return
    rows = []
    for s in segments:
        try:
            f = segment_features(frame, s)
        except DegenerateSegment:
            continue
        rows.append({
            "id": s.id,
            "size": len(s),
            "centroid": f.centroid.round(6).tolist(),
            "mean_normal": f.mean_normal.round(6).tolist(),
            "axis_major": f.axis_major.round(6).tolist(),
            "axis_minor": f.axis_minor.round(6).tolist(),
            "eigvals": f.eigvals.tolist(),
        })
    Path(json_path).write_text(json.dumps(rows, indent=1))
