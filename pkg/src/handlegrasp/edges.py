"""Intensity edges, depth edges and their fusion with segment rims.

A segment-rim pixel is kept as a reliable boundary point when an intensity
edge or a depth edge lies within a small Chebyshev radius of it. The kept
points are then split into the two sides of a handle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .frame_io import Frame, FrameError


class BoundaryNotFound(ValueError):
    """Too few validated rim points on one side of a handle."""


@dataclass
class EdgeMap:
    kind: str  # "intensity" or "depth"
    mask: np.ndarray  # (H, W) bool
    _dilated: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def pixels(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def __len__(self) -> int:
        return int(self.mask.sum())

    def dilated(self, radius: int) -> np.ndarray:
        """Mask of pixels within Chebyshev distance ``radius`` of an edge pixel."""
        if radius not in self._dilated:
            if radius <= 0:
                self._dilated[radius] = self.mask.copy()
            else:
                self._dilated[radius] = ndimage.maximum_filter(
                    self.mask, size=2 * radius + 1, mode="constant", cval=False)
        return self._dilated[radius]

    @classmethod
    def from_pixels(cls, kind, pixels, shape) -> "EdgeMap":
        m = np.zeros(shape, dtype=bool)
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if len(pixels):
            m[pixels[:, 0], pixels[:, 1]] = True
        return cls(kind, m)


# ---------------------------------------------------------------------------
# canny

def gradients(gray: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian blur then 3x3 Sobel; returns (gx, gy, magnitude), rows = y."""
    img = ndimage.gaussian_filter(np.asarray(gray, dtype=np.float64), sigma, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    return gx, gy, np.hypot(gx, gy)


def _direction_neighbours(gx, gy):
    """Per-pixel (drow, dcol) of the neighbour along the quantized gradient direction."""
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = np.floor((ang + 22.5) / 45.0).astype(np.int64) % 4
    # 0: horizontal gradient, 1: 45 deg (down-right), 2: vertical, 3: 135 deg (down-left)
    dr = np.array([0, 1, 1, 1])[sector]
    dc = np.array([1, 1, 0, -1])[sector]
    return dr, dc


def non_max_suppression(gx, gy, mag):
    h, w = mag.shape
    dr, dc = _direction_neighbours(gx, gy)
    rows, cols = np.mgrid[0:h, 0:w]
    pad = np.pad(mag, 1)
    fwd = pad[rows + dr + 1, cols + dc + 1]
    bwd = pad[rows - dr + 1, cols - dc + 1]
    # strict on one side, non-strict on the other: a plateau pair keeps one pixel
    return (mag > 0) & (mag > fwd) & (mag >= bwd)


def canny(gray: np.ndarray, sigma: float = 1.4, low: float = 20.0, high: float = 60.0) -> EdgeMap:
    """Canny edges. Thresholds are on the raw 3x3 Sobel magnitude of a 0-255 image."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 0 < low < high:
        raise ValueError("need 0 < low < high")
    gx, gy, mag = gradients(gray, sigma)
    thin = non_max_suppression(gx, gy, mag)
    weak = thin & (mag >= low)
    strong = thin & (mag >= high)
    lab, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return EdgeMap("intensity", np.zeros_like(weak))
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(lab[strong])] = True
    keep[0] = False
    return EdgeMap("intensity", keep[lab])


# ---------------------------------------------------------------------------
# depth edges

_HALF_8 = ((0, 1), (1, 0), (1, 1), (1, -1))


def _pair_slices(dr, dc, h, w):
    a = (slice(0, h - dr), slice(max(0, -dc), w - max(0, dc)))
    b = (slice(dr, h), slice(max(0, dc), w - max(0, -dc)))
    return a, b


def depth_edges(frame: Frame, depth_jump: float = 0.02,
                normal_jump: float = math.radians(35.0)) -> EdgeMap:
    """Occlusion (depth step) and crease (normal turn) edges over 8-neighbours.

    Both pixels of an offending pair are flagged, so the relation is
    symmetric. A valid pixel touching an invalid one is flagged too.
    """
    if not frame.has_normals:
        raise FrameError("depth_edges needs normals; run estimate_normals first")
    h, w = frame.shape
    z, valid = frame.depth, frame.valid
    nv, nrm = frame.normal_valid, frame.normals
    cos_j = math.cos(normal_jump)
    out = np.zeros((h, w), dtype=bool)
    for dr, dc in _HALF_8:
        a, b = _pair_slices(dr, dc, h, w)
        both = valid[a] & valid[b]
        hit = both & (np.abs(z[a] - z[b]) > depth_jump)
        nb = nv[a] & nv[b]
        hit |= nb & (np.einsum("...i,...i->...", nrm[a], nrm[b]) < cos_j)
        rim_a = valid[a] & ~valid[b]
        rim_b = valid[b] & ~valid[a]
        out[a] |= hit | rim_a
        out[b] |= hit | rim_b
    return EdgeMap("depth", out)


# ---------------------------------------------------------------------------
# fusion

@dataclass(frozen=True)
class SplitLine:
    """Image-space line through ``point`` (x, y); sides are signs along ``normal``."""

    point: np.ndarray
    normal: np.ndarray

    def offsets(self, xy: np.ndarray) -> np.ndarray:
        return (np.asarray(xy, float) - self.point) @ self.normal


@dataclass
class ValidatedBoundary:
    e_s: np.ndarray  # (N, 2) rim pixels (row, col)
    levels: np.ndarray  # (N,) int 0/1
    plus_pixels: np.ndarray
    minus_pixels: np.ndarray
    plus_points: np.ndarray | None = None
    minus_points: np.ndarray | None = None

    @property
    def retained(self) -> np.ndarray:
        return self.e_s[self.levels == 1]


def boundary_levels(e_s: np.ndarray, e_c: EdgeMap, e_d: EdgeMap, match_radius: int) -> np.ndarray:
    e_s = np.asarray(e_s, dtype=np.int64).reshape(-1, 2)
    if len(e_s) == 0:
        return np.zeros(0, dtype=np.int64)
    r, c = e_s[:, 0], e_s[:, 1]
    hit = e_c.dilated(match_radius)[r, c] | e_d.dilated(match_radius)[r, c]
    return hit.astype(np.int64)


def merge_boundary(e_s, e_c: EdgeMap, e_d: EdgeMap, match_radius: int = 2,
                   split: SplitLine | None = None, cloud: np.ndarray | None = None,
                   dead_zone: float = 1.0, min_side: int = 2) -> ValidatedBoundary:
    """Validate rim pixels against edges and split the survivors into two sides.

    A rim pixel gets level 1 iff an intensity or depth edge pixel lies within
    Chebyshev distance ``match_radius``. Survivors within ``dead_zone`` px of
    the split line are dropped as ambiguous.
    """
    e_s = np.asarray(e_s, dtype=np.int64).reshape(-1, 2)
    if len(e_s) == 0:
        raise BoundaryNotFound("empty segment boundary")
    if match_radius < 0:
        raise ValueError("match_radius must be >= 0")
    levels = boundary_levels(e_s, e_c, e_d, match_radius)
    kept = e_s[levels == 1]
    if split is None:
        plus, minus = kept, np.zeros((0, 2), dtype=np.int64)
    else:
        xy = kept[:, ::-1].astype(np.float64)
        off = split.offsets(xy)
        plus, minus = kept[off > dead_zone], kept[off < -dead_zone]
    vb = ValidatedBoundary(e_s=e_s, levels=levels, plus_pixels=plus, minus_pixels=minus)
    if cloud is not None:
        vb.plus_points = cloud[plus[:, 0], plus[:, 1]]
        vb.minus_points = cloud[minus[:, 0], minus[:, 1]]
    if len(plus) < min_side or len(minus) < min_side:
        err = BoundaryNotFound(f"validated boundary too small: {len(plus)} / {len(minus)}")
        err.boundary = vb
        raise err
    return vb


def overlay_edges(frame: Frame, e_s, e_c: EdgeMap, e_d: EdgeMap, e_v=None) -> np.ndarray:
    """RGB debug overlay: E_s gray, E_c green, E_d blue, E_v red."""
    img = (frame.gray()[..., None] * 0.4).repeat(3, axis=2).astype(np.uint8)
    img[e_c.mask] = (0, 200, 0)
    img[e_d.mask] = (0, 90, 255)
    e_s = np.asarray(e_s).reshape(-1, 2)
    img[e_s[:, 0], e_s[:, 1]] = (160, 160, 160)
    if e_v is not None and len(e_v):
        e_v = np.asarray(e_v).reshape(-1, 2)
        img[e_v[:, 0], e_v[:, 1]] = (255, 0, 0)
    return img


def save_edge_png(edge: EdgeMap, path) -> None:
    cv2.imwrite(str(path), edge.mask.astype(np.uint8) * 255)
