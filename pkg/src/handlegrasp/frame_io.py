"""Single-frame RGB-D input: loading, deprojection, smoothing and normals.

Everything downstream works on an organized cloud, i.e. one 3D point per
pixel, so the color raster and the cloud stay pixel-aligned.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage


class FrameError(ValueError):
    """Raised for unreadable, malformed or inconsistent frame inputs."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 0.001

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise FrameError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise FrameError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise FrameError("principal point outside the image")
        if not self.depth_scale > 0:
            raise FrameError("depth_scale must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        try:
            return cls(
                fx=float(d["fx"]),
                fy=float(d["fy"]),
                cx=float(d["cx"]),
                cy=float(d["cy"]),
                width=int(d["width"]),
                height=int(d["height"]),
                depth_scale=float(d.get("depth_scale", 0.001)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FrameError(f"bad intrinsics: {exc}") from exc


def load_intrinsics(path) -> Intrinsics:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FrameError(f"cannot read intrinsics {path}: {exc}") from exc
    return Intrinsics.from_dict(data)


def save_intrinsics(intr: Intrinsics, path) -> None:
    Path(path).write_text(json.dumps(intr.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Frame:
    """Registered color + metric depth + organized cloud.

    ``normals``/``normal_valid``/``curvature`` stay ``None`` until
    :func:`estimate_normals` has run.
    """

    color: np.ndarray  # (H, W, 3) uint8 RGB
    depth: np.ndarray  # (H, W) float64 metres, 0 = invalid
    cloud: np.ndarray  # (H, W, 3) float64 camera coordinates
    valid: np.ndarray  # (H, W) bool
    intrinsics: Intrinsics
    normals: np.ndarray | None = None
    normal_valid: np.ndarray | None = None
    curvature: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def gray(self) -> np.ndarray:
        """Luminance in [0, 255] as float64."""
        rgb = self.color.astype(np.float64)
        return rgb @ np.array([0.299, 0.587, 0.114])


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (u, v) float grids: u = column, v = row."""
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return u, v


def deproject(depth: np.ndarray, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Back-project a metric depth image; returns (cloud, valid)."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    z = np.where(valid, depth, 0.0)
    u, v = pixel_grid(*depth.shape)
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    cloud = np.stack([x, y, z], axis=-1)
    return cloud, valid


def project(points: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Pinhole projection of (..., 3) camera points to (..., 2) pixel (u, v)."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    u = intr.fx * points[..., 0] / z + intr.cx
    v = intr.fy * points[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def frame_from_depth(color: np.ndarray, depth: np.ndarray, intr: Intrinsics) -> Frame:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != intr.shape:
        raise FrameError(f"depth shape {depth.shape} does not match intrinsics {intr.shape}")
    if color.shape[:2] != depth.shape:
        raise FrameError(f"color shape {color.shape[:2]} does not match depth {depth.shape}")
    cloud, valid = deproject(depth, intr)
    depth = np.where(valid, depth, 0.0)
    return Frame(color=np.ascontiguousarray(color, dtype=np.uint8), depth=depth,
                 cloud=cloud, valid=valid, intrinsics=intr)


def load_frame(color_path, depth_path, intrinsics: Intrinsics) -> Frame:
    """Read an 8-bit RGB PNG and a 16-bit depth PNG into a :class:`Frame`."""
    for p in (color_path, depth_path):
        if not Path(p).is_file():
            raise FrameError(f"no such file: {p}")
    bgr = cv2.imread(str(color_path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise FrameError(f"unreadable color image: {color_path}")
    raw = cv2.imread(str(depth_path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FrameError(f"unreadable depth image: {depth_path}")
    if raw.ndim != 2 or raw.dtype != np.uint16:
        raise FrameError("depth image must be single-channel 16-bit")
    if bgr.shape[:2] != raw.shape:
        raise FrameError("color and depth dimensions differ")
    color = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    depth = raw.astype(np.float64) * intrinsics.depth_scale
    return frame_from_depth(color, depth, intrinsics)


def save_frame_images(frame: Frame, color_path, depth_path) -> None:
    """Write color as 8-bit PNG and depth as 16-bit PNG (depth_scale units)."""
    scale = frame.intrinsics.depth_scale
    raw = np.round(np.where(frame.valid, frame.depth, 0.0) / scale)
    raw = np.clip(raw, 0, np.iinfo(np.uint16).max).astype(np.uint16)
    cv2.imwrite(str(color_path), cv2.cvtColor(frame.color, cv2.COLOR_RGB2BGR))
    cv2.imwrite(str(depth_path), raw)


# ---------------------------------------------------------------------------
# PCD (ASCII, organized)

def save_pcd(frame: Frame, path) -> None:
    h, w = frame.shape
    pts = np.where(frame.valid[..., None], frame.cloud, np.nan).reshape(-1, 3)
    rgb = frame.color.reshape(-1, 3).astype(np.uint32)
    packed = (rgb[:, 0] << 16) | (rgb[:, 1] << 8) | rgb[:, 2]
    lines = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        "FIELDS x y z rgb",
        "SIZE 4 4 4 4",
        "TYPE F F F U",
        "COUNT 1 1 1 1",
        f"WIDTH {w}",
        f"HEIGHT {h}",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {w * h}",
        "DATA ascii",
    ]
    body = [
        f"{x:.9g} {y:.9g} {z:.9g} {c}"
        for (x, y, z), c in zip(pts.tolist(), packed.tolist())
    ]
    Path(path).write_text("\n".join(lines + body) + "\n")


def _estimate_intrinsics(cloud: np.ndarray, valid: np.ndarray) -> Intrinsics:
    """Fit fx, cx (fy, cy) by least squares of pixel index against x/z (y/z)."""
    h, w = valid.shape
    u, v = pixel_grid(h, w)
    fallback = Intrinsics(fx=float(max(w, h)), fy=float(max(w, h)),
                          cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)
    m = valid & (cloud[..., 2] > 0)
    if m.sum() < 3:
        return fallback
    xz = cloud[..., 0][m] / cloud[..., 2][m]
    yz = cloud[..., 1][m] / cloud[..., 2][m]

    def fit(t, pix):
        if np.ptp(t) < 1e-12:
            return None
        a = np.stack([t, np.ones_like(t)], axis=1)
        (f, c), *_ = np.linalg.lstsq(a, pix, rcond=None)
        return f, c

    fu, fv = fit(xz, u[m]), fit(yz, v[m])
    if fu is None or fv is None:
        return fallback
    try:
        return Intrinsics(fx=float(fu[0]), fy=float(fv[0]), cx=float(fu[1]),
                          cy=float(fv[1]), width=w, height=h)
    except FrameError:
        return fallback


def load_pcd(path, intrinsics: Intrinsics | None = None) -> Frame:
    """Read an organized ASCII PCD (v0.7) with x, y, z and optional rgb."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FrameError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    header: dict[str, list[str]] = {}
    data_start = None
    for i, line in enumerate(lines):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, *vals = line.split()
        header[key.upper()] = vals
        if key.upper() == "DATA":
            data_start = i + 1
            break
    if data_start is None:
        raise FrameError("PCD header has no DATA line")
    try:
        fields = header["FIELDS"]
        width = int(header["WIDTH"][0])
        height = int(header["HEIGHT"][0])
        fmt = header["DATA"][0].lower()
    except (KeyError, IndexError, ValueError) as exc:
        raise FrameError(f"malformed PCD header: {exc}") from exc
    if fmt != "ascii":
        raise FrameError(f"only ASCII PCD is supported, got {fmt!r}")
    if height <= 1:
        raise FrameError("unorganized PCD (height = 1) is not supported")
    if not {"x", "y", "z"} <= set(fields):
        raise FrameError("PCD must carry x, y, z fields")
    counts = [int(c) for c in header.get("COUNT", ["1"] * len(fields))]
    if any(c != 1 for c in counts):
        raise FrameError("multi-count PCD fields are not supported")
    rows = [ln.split() for ln in lines[data_start:] if ln.strip()]
    if len(rows) != width * height or any(len(r) != len(fields) for r in rows):
        raise FrameError("PCD body does not match WIDTH x HEIGHT x FIELDS")
    col = {name: i for i, name in enumerate(fields)}
    xyz = np.array([[float(r[col["x"]]), float(r[col["y"]]), float(r[col["z"]])] for r in rows])
    cloud = xyz.reshape(height, width, 3)
    valid = np.all(np.isfinite(cloud), axis=-1) & (cloud[..., 2] > 0)
    cloud = np.where(valid[..., None], cloud, 0.0)

    color = np.full((height, width, 3), 128, dtype=np.uint8)
    if "rgb" in col or "rgba" in col:
        key = "rgb" if "rgb" in col else "rgba"
        types = header.get("TYPE", ["F"] * len(fields))
        raw = [r[col[key]] for r in rows]
        if types[col[key]].upper() == "F":
            packed = np.array([float(x) for x in raw], dtype=np.float32).view(np.uint32)
        else:
            packed = np.array([int(float(x)) for x in raw], dtype=np.uint64).astype(np.uint32)
        packed = packed.reshape(height, width)
        color = np.stack([(packed >> 16) & 255, (packed >> 8) & 255, packed & 255],
                         axis=-1).astype(np.uint8)

    intr = intrinsics or _estimate_intrinsics(cloud, valid)
    if intr.shape != (height, width):
        raise FrameError("intrinsics do not match PCD size")
    depth = np.where(valid, cloud[..., 2], 0.0)
    return Frame(color=color, depth=depth, cloud=cloud, valid=valid, intrinsics=intr)


# ---------------------------------------------------------------------------
# smoothing

def smooth_cloud(frame: Frame, spatial_sigma: float = 2.0, range_sigma: float = 0.01) -> Frame:
    """Edge-preserving bilateral filter on depth, then re-deproject.

    The range kernel is truncated at 3 * range_sigma so that pixels across a
    larger depth step never mix. Invalid pixels neither contribute nor gain
    depth.
    """
    if spatial_sigma <= 0 or range_sigma <= 0:
        raise FrameError("smoothing sigmas must be positive")
    depth, valid = frame.depth, frame.valid
    h, w = depth.shape
    rad = max(1, int(math.ceil(2 * spatial_sigma)))
    pad_d = np.pad(depth, rad)
    pad_v = np.pad(valid, rad)
    acc = np.zeros_like(depth)
    wsum = np.zeros_like(depth)
    cutoff = 3.0 * range_sigma
    for dy in range(-rad, rad + 1):
        for dx in range(-rad, rad + 1):
            ws = math.exp(-(dx * dx + dy * dy) / (2 * spatial_sigma ** 2))
            nd = pad_d[rad + dy:rad + dy + h, rad + dx:rad + dx + w]
            nv = pad_v[rad + dy:rad + dy + h, rad + dx:rad + dx + w]
            diff = nd - depth
            wr = np.exp(-diff * diff / (2 * range_sigma ** 2))
            wgt = np.where(nv & (np.abs(diff) <= cutoff), ws * wr, 0.0)
            acc += wgt * nd
            wsum += wgt
    out = np.where(valid & (wsum > 0), acc / np.where(wsum > 0, wsum, 1.0), 0.0)
    cloud, new_valid = deproject(out, frame.intrinsics)
    return dataclasses.replace(frame, depth=out, cloud=cloud, valid=new_valid & valid,
                               normals=None, normal_valid=None, curvature=None)


# ---------------------------------------------------------------------------
# normals

def sym3_eigvals(cov: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues (N, 3) of a stack of symmetric 3x3 matrices (trigonometric form)."""
    a00, a11, a22 = cov[:, 0, 0], cov[:, 1, 1], cov[:, 2, 2]
    a01, a02, a12 = cov[:, 0, 1], cov[:, 0, 2], cov[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p = np.sqrt((b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1) / 6.0)
    safe_p = np.where(p > 0, p, 1.0)
    det_b = (b00 * (b11 * b22 - a12 * a12)
             - a01 * (a01 * b22 - a12 * a02)
             + a02 * (a01 * a12 - b11 * a02))
    r = np.clip(det_b / (2.0 * safe_p ** 3), -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e_hi = q + 2.0 * p * np.cos(phi)
    e_lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e_mid = 3.0 * q - e_hi - e_lo
    eig = np.stack([e_lo, e_mid, e_hi], axis=1)
    flat = p <= 0
    if flat.any():
        eig[flat] = q[flat, None]
    return eig


def smallest_eigvec_sym3(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigen-decomposition helper for a stack of 3x3 symmetric matrices.

    Returns ``(eigvals, vec)`` where eigvals is (N, 3) ascending and vec is the
    unit eigenvector of the smallest eigenvalue, (N, 3). Much faster than
    batched ``np.linalg.eigh`` for hundreds of thousands of pixels.
    """
    eig = sym3_eigvals(cov)
    lo = eig[:, 0]
    # rows of (A - lo I); the eigenvector is the largest cross product of two rows
    m00, m11, m22 = cov[:, 0, 0] - lo, cov[:, 1, 1] - lo, cov[:, 2, 2] - lo
    m01, m02, m12 = cov[:, 0, 1], cov[:, 0, 2], cov[:, 1, 2]
    # r0 = (m00, m01, m02), r1 = (m01, m11, m12), r2 = (m02, m12, m22)
    c01 = np.stack([m01 * m12 - m02 * m11, m02 * m01 - m00 * m12, m00 * m11 - m01 * m01], axis=1)
    c02 = np.stack([m01 * m22 - m02 * m12, m02 * m02 - m00 * m22, m00 * m12 - m01 * m02], axis=1)
    c12 = np.stack([m11 * m22 - m12 * m12, m12 * m02 - m01 * m22, m01 * m12 - m11 * m02], axis=1)
    n01 = np.einsum("ij,ij->i", c01, c01)
    n02 = np.einsum("ij,ij->i", c02, c02)
    n12 = np.einsum("ij,ij->i", c12, c12)
    vec = np.where((n02 > n01)[:, None], c02, c01)
    best = np.maximum(n01, n02)
    vec = np.where((n12 > best)[:, None], c12, vec)
    best = np.maximum(best, n12)
    ok = best > 0
    vec /= np.sqrt(np.where(ok, best, 1.0))[:, None]
    if not ok.all():
        vec[~ok] = (0.0, 0.0, 1.0)
    return eig, vec


def _window_moments(frame: Frame, size: int):
    valid = frame.valid
    m = valid.astype(np.float64)
    pts = frame.cloud * m[..., None]

    def box(a):
        return ndimage.uniform_filter(a, size=size, mode="constant", cval=0.0) * (size * size)

    cnt = np.rint(box(m))
    first = np.stack([box(pts[..., i]) for i in range(3)], axis=-1)
    second = np.stack([box(pts[..., i] * pts[..., j]) for i, j in _PAIRS], axis=-1)
    return cnt, first, second


_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def _covariances(cnt, first, second) -> np.ndarray:
    mean = first / cnt[:, None]
    cov = np.empty((len(cnt), 3, 3))
    for k, (i, j) in enumerate(_PAIRS):
        s = second[:, k] / cnt - mean[:, i] * mean[:, j]
        cov[:, i, j] = s
        cov[:, j, i] = s
    return cov


def _surface_variation(eig: np.ndarray) -> np.ndarray:
    trace = eig.sum(axis=1)
    return np.where(trace > 0, np.clip(eig[:, 0], 0, None) / np.where(trace > 0, trace, 1.0), 0.0)


def _jump_mask(frame: Frame, jump: float) -> np.ndarray:
    """Valid pixels with an 8-neighbour more than ``jump`` metres away in depth."""
    z, valid = frame.depth, frame.valid
    h, w = z.shape
    out = np.zeros((h, w), dtype=bool)
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = (slice(0, h - dr), slice(max(0, -dc), w - max(0, dc)))
        b = (slice(dr, h), slice(max(0, dc), w - max(0, -dc)))
        hit = valid[a] & valid[b] & (np.abs(z[a] - z[b]) > jump)
        out[a] |= hit
        out[b] |= hit
    return out


def estimate_normals(frame: Frame, window: int = 5, adaptive: bool = True,
                     adaptive_factor: float = 1.5, jump: float = 0.02,
                     shift_gain: float = 0.5, fit_sigmas: float = 3.0,
                     fit_floor: float = 0.0005, flat_ratio: float = 2.0) -> Frame:
    """Per-pixel PCA normals over a (2*window+1)^2 neighbourhood.

    Normals point toward the camera. Pixels whose window holds fewer than 3
    valid points are marked normal-invalid. ``curvature`` is the surface
    variation lambda_min / (lambda_0 + lambda_1 + lambda_2).

    With ``adaptive`` set, a pixel whose centred window straddles a depth
    jump (> ``jump`` m between 8-neighbours) or is clearly curved (variation
    above ``adaptive_factor`` times the frame median) also tries the eight
    windows shifted by ``window`` px, which put the pixel on their rim, and
    keeps the flattest one that does not straddle a jump. A jump-free pixel
    moves only if that window's variation is below ``shift_gain`` times the
    centred one. A shifted window is only eligible when the pixel itself lies
    within ``fit_sigmas`` times the window's plane residual (plus
    ``fit_floor`` m) of its plane. Among eligible windows with variation
    within ``flat_ratio`` of the flattest, the one the pixel fits best (in
    units of the window's residual) wins, so a pixel just past a crease does
    not borrow the neighbouring face's normal. Near creases and silhouettes
    this yields a window on the pixel's own face. A pixel left with no jump-free
    window is marked normal-invalid.
    """
    if window < 1:
        raise FrameError("normal window must be >= 1")
    size = 2 * window + 1
    valid = frame.valid
    cnt, first, second = _window_moments(frame, size)
    sel = valid & (cnt >= 3)
    eig, vec = smallest_eigvec_sym3(_covariances(cnt[sel], first[sel], second[sel]))
    curv = _surface_variation(eig)

    if adaptive and curv.size:
        jumps = _jump_mask(frame, jump)
        jcount = np.rint(ndimage.uniform_filter(jumps.astype(np.float64), size=size, mode="constant")
                         * (size * size))
        rows, cols = np.nonzero(sel)
        own_jump = jumps[rows, cols]
        clean = (jcount[rows, cols] - own_jump) == 0
        med = float(np.median(curv[clean])) if clean.any() else float(np.median(curv))
        curv = np.where(clean, curv, np.inf)
        redo = np.nonzero(~clean | (curv > adaptive_factor * med))[0]
        h, w = valid.shape
        min_cnt = max(3, size * size // 4)
        # a curved-but-clean pixel only moves to a clearly flatter window (a
        # crease); on smooth curvature the centred window stays the best estimate
        limit = np.where(np.isfinite(curv), shift_gain * curv, np.inf)
        shifts = [(dr, dc) for dr in (-window, 0, window) for dc in (-window, 0, window) if dr or dc]
        m = len(redo)
        cand_curv = np.full((len(shifts), m), np.inf)
        cand_score = np.full((len(shifts), m), np.inf)
        cand_vec = np.zeros((len(shifts), m, 3))
        for k, (dr, dc) in enumerate(shifts):
            if m == 0:
                break
            r, c = rows[redo] + dr, cols[redo] + dc
            inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
            j, r, c = np.nonzero(inside)[0], r[inside], c[inside]
            ok = (cnt[r, c] >= min_cnt) & ((jcount[r, c] - own_jump[redo[j]]) == 0)
            j, r, c = j[ok], r[ok], c[ok]
            if len(j) == 0:
                continue
            eig2, vec2 = smallest_eigvec_sym3(_covariances(cnt[r, c], first[r, c], second[r, c]))
            c2 = _surface_variation(eig2)
            off = frame.cloud[rows[redo[j]], cols[redo[j]]] - first[r, c] / cnt[r, c][:, None]
            resid = np.abs(np.einsum("ij,ij->i", off, vec2))
            spread = np.sqrt(np.clip(eig2[:, 0], 0, None))
            fits = resid <= fit_sigmas * spread + fit_floor
            good = fits & (c2 < curv[redo[j]]) & (c2 < limit[redo[j]])
            cand_curv[k, j[good]] = c2[good]
            cand_score[k, j[good]] = resid[good] / (spread[good] + fit_floor)
            cand_vec[k, j] = vec2
        if m:
            # among windows nearly as flat as the flattest, the one whose plane
            # the pixel itself fits best; flatness alone favours grazing faces
            flat = cand_curv <= flat_ratio * cand_curv.min(axis=0)
            score = np.where(flat & np.isfinite(cand_curv), cand_score, np.inf)
            best = np.argmin(score, axis=0)
            cols_m = np.arange(m)
            hit = np.isfinite(score[best, cols_m])
            curv[redo[hit]] = cand_curv[best[hit], cols_m[hit]]
            vec[redo[hit]] = cand_vec[best[hit], cols_m[hit]]
        lost = ~np.isfinite(curv)
        if lost.any():
            sel = sel.copy()
            sel[rows[lost], cols[lost]] = False
            vec, curv = vec[~lost], curv[~lost]

    p = frame.cloud[sel]
    flip = np.einsum("ij,ij->i", vec, p) > 0
    vec[flip] *= -1.0
    normals = np.zeros(frame.cloud.shape)
    normals[sel] = vec
    curvature = np.full(valid.shape, np.inf)
    curvature[sel] = curv
    return dataclasses.replace(frame, normals=normals, normal_valid=sel, curvature=curvature)
