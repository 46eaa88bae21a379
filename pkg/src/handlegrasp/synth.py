"""Synthetic RGB-D tabletop scenes with analytic grasp ground truth.

Scenes are built from convex primitives (boxes, trapezoidal wedges,
cylinders) resting on a table slab, rendered by per-pixel ray casting from
a pinhole camera. Ground-truth handles are enumerated from the primitives'
faces and checked for clearance against every other primitive and the
table with the same finger volumes the detector sweeps.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frame_io import Frame, Intrinsics, frame_from_depth, save_frame_images, save_intrinsics
from .grasp import GripperGeometry

KINECT = Intrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)
TABLE_COLOR = (150, 150, 150)
LIGHT_DIR = np.array([0.35, -0.45, 0.82]) / np.linalg.norm([0.35, -0.45, 0.82])


class SceneError(ValueError):
    pass


def pose_matrix(xyz=(0.0, 0.0, 0.0), yaw=0.0, pitch=0.0, roll=0.0) -> np.ndarray:
    """4x4 rigid transform from Z-Y-X Euler angles (radians) and a translation."""
    cz, sz = math.cos(yaw), math.sin(yaw)
    cy, sy = math.cos(pitch), math.sin(pitch)
    cx, sx = math.cos(roll), math.sin(roll)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    t = np.eye(4)
    t[:3, :3] = rz @ ry @ rx
    t[:3, 3] = xyz
    return t


# ---------------------------------------------------------------------------
# primitives

class _Polytope:
    """Convex polytope given by outward plane normals and offsets: n . x <= h."""

    kind = "polytope"

    def __init__(self, normals_local, offsets, pose, color):
        self.pose = np.asarray(pose, dtype=np.float64)
        self.color = tuple(int(c) for c in color)
        rot, trans = self.pose[:3, :3], self.pose[:3, 3]
        n = np.asarray(normals_local, dtype=np.float64) @ rot.T
        self.normals = n / np.linalg.norm(n, axis=1, keepdims=True)
        scale = np.linalg.norm(np.asarray(normals_local, dtype=np.float64), axis=1)
        self.offsets = np.asarray(offsets, dtype=np.float64) / scale + self.normals @ trans
        self._vertices = None

    def contains(self, pts, tol=1e-9):
        pts = np.atleast_2d(pts)
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=1)

    def intersect(self, origin, dirs):
        num = self.offsets - self.normals @ origin  # (P,)
        den = dirs @ self.normals.T  # (N, P)
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = num / den
        enter = np.where(den < 0, tt, -np.inf)
        leave = np.where(den > 0, tt, np.inf)
        t_in = enter.max(axis=1)
        face = enter.argmax(axis=1)
        t_out = leave.min(axis=1)
        parallel_miss = np.any((den == 0) & (num < 0), axis=1)
        hit = (t_in <= t_out) & (t_in > 0) & ~parallel_miss
        t = np.where(hit, t_in, np.inf)
        return t, self.normals[face]

    @property
    def vertices(self):
        if self._vertices is None:
            verts = []
            for i, j, k in itertools.combinations(range(len(self.normals)), 3):
                a = self.normals[[i, j, k]]
                if abs(np.linalg.det(a)) < 1e-9:
                    continue
                p = np.linalg.solve(a, self.offsets[[i, j, k]])
                if self.contains(p, tol=1e-7)[0]:
                    verts.append(p)
            v = np.array(verts)
            keep = []
            for p in v:
                if all(np.linalg.norm(p - q) > 1e-7 for q in keep):
                    keep.append(p)
            self._vertices = np.array(keep)
        return self._vertices

    def face_vertices(self, i):
        v = self.vertices
        on = np.abs(v @ self.normals[i] - self.offsets[i]) < 1e-7
        return v[on]

    def surface_samples(self, spacing):
        out = []
        for i, n in enumerate(self.normals):
            fv = self.face_vertices(i)
            if len(fv) < 3:
                continue
            e1 = fv[1] - fv[0]
            e1 -= np.dot(e1, n) * n
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(n, e1)
            c = fv.mean(axis=0)
            p1, p2 = (fv - c) @ e1, (fv - c) @ e2
            g1 = np.arange(p1.min(), p1.max() + spacing, spacing)
            g2 = np.arange(p2.min(), p2.max() + spacing, spacing)
            a, b = np.meshgrid(np.clip(g1, p1.min(), p1.max()), np.clip(g2, p2.min(), p2.max()))
            pts = c + a.reshape(-1, 1) * e1 + b.reshape(-1, 1) * e2
            out.append(pts[self.contains(pts, tol=1e-7)])
            # face outlines keep thin faces represented
            for s, t in zip(fv, np.roll(fv, -1, axis=0)):
                k = max(2, int(np.linalg.norm(t - s) / spacing) + 1)
                seg = s + np.linspace(0, 1, k)[:, None] * (t - s)
                out.append(seg[self.contains(seg, tol=1e-7)])
        return np.concatenate(out)

    def bounding_sphere(self):
        v = self.vertices
        c = v.mean(axis=0)
        return c, float(np.linalg.norm(v - c, axis=1).max())


class Box(_Polytope):
    kind = "box"

    def __init__(self, extents, pose, color):
        self.extents = tuple(float(e) for e in extents)
        if min(self.extents) <= 0:
            raise SceneError("box extents must be positive")
        ex, ey, ez = (e / 2 for e in self.extents)
        normals = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
        super().__init__(normals, [ex, ex, ey, ey, ez, ez], pose, color)

    def to_dict(self):
        return {"type": "box", "extents": list(self.extents),
                "pose": self.pose.tolist(), "color": list(self.color)}


class Wedge(_Polytope):
    """Prism whose top face is an isosceles trapezoid.

    Local x runs along ``length``; the width changes linearly from
    ``width0`` at x = -length/2 to ``width1`` at x = +length/2; local z is up.
    """

    kind = "wedge"

    def __init__(self, length, width0, width1, height, pose, color):
        self.length, self.width0, self.width1, self.height = map(float, (length, width0, width1, height))
        if min(self.length, self.width0, self.width1, self.height) <= 0:
            raise SceneError("wedge dimensions must be positive")
        half_l, half_h = self.length / 2, self.height / 2
        slope = (self.width1 - self.width0) / (2 * self.length)
        mid = (self.width0 + self.width1) / 4
        # y <= mid + slope * x  ->  -slope * x + y <= mid
        normals = [(1, 0, 0), (-1, 0, 0), (-slope, 1, 0), (-slope, -1, 0), (0, 0, 1), (0, 0, -1)]
        offsets = [half_l, half_l, mid, mid, half_h, half_h]
        super().__init__(normals, offsets, pose, color)

    @property
    def side_angle(self) -> float:
        """Full angle between the converging side faces (radians)."""
        return 2 * math.atan(abs(self.width1 - self.width0) / (2 * self.length))

    def to_dict(self):
        return {"type": "wedge", "length": self.length, "width0": self.width0,
                "width1": self.width1, "height": self.height,
                "pose": self.pose.tolist(), "color": list(self.color)}


class Cylinder:
    kind = "cylinder"

    def __init__(self, radius, height, pose, color):
        self.radius, self.height = float(radius), float(height)
        if self.radius <= 0 or self.height <= 0:
            raise SceneError("cylinder dimensions must be positive")
        self.pose = np.asarray(pose, dtype=np.float64)
        self.color = tuple(int(c) for c in color)

    @property
    def axis(self):
        return self.pose[:3, 2]

    @property
    def center(self):
        return self.pose[:3, 3]

    def to_dict(self):
        return {"type": "cylinder", "radius": self.radius, "height": self.height,
                "pose": self.pose.tolist(), "color": list(self.color)}

    def _local(self, pts):
        return (np.atleast_2d(pts) - self.center) @ self.pose[:3, :3]

    def contains(self, pts, tol=1e-9):
        q = self._local(pts)
        return (q[:, 0] ** 2 + q[:, 1] ** 2 <= (self.radius + tol) ** 2) & \
            (np.abs(q[:, 2]) <= self.height / 2 + tol)

    def intersect(self, origin, dirs):
        rot = self.pose[:3, :3]
        o = (origin - self.center) @ rot
        d = dirs @ rot
        r, hh = self.radius, self.height / 2
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2 * (o[0] * d[:, 0] + o[1] * d[:, 1])
        c = o[0] ** 2 + o[1] ** 2 - r * r
        disc = b * b - 4 * a * c
        with np.errstate(divide="ignore", invalid="ignore"):
            t_side = (-b - np.sqrt(np.where(disc >= 0, disc, 0))) / (2 * a)
        z_side = o[2] + t_side * d[:, 2]
        side_ok = (disc >= 0) & (a > 1e-15) & (t_side > 0) & (np.abs(z_side) <= hh)
        t = np.where(side_ok, t_side, np.inf)
        nrm_local = np.zeros_like(d)
        ps = o + t_side[:, None] * d
        nrm_local[:, 0] = ps[:, 0] / r
        nrm_local[:, 1] = ps[:, 1] / r
        for sign in (1.0, -1.0):
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (sign * hh - o[2]) / d[:, 2]
            pc = o + tc[:, None] * d
            cap_ok = (tc > 0) & (pc[:, 0] ** 2 + pc[:, 1] ** 2 <= r * r) & np.isfinite(tc)
            better = cap_ok & (tc < t)
            t = np.where(better, tc, t)
            nrm_local[better] = (0.0, 0.0, sign)
        return t, nrm_local @ rot.T

    def surface_samples(self, spacing):
        r, hh = self.radius, self.height / 2
        na = max(12, int(2 * math.pi * r / spacing))
        ang = np.linspace(0, 2 * math.pi, na, endpoint=False)
        zs = np.linspace(-hh, hh, max(2, int(self.height / spacing) + 1))
        aa, zz = np.meshgrid(ang, zs)
        side = np.stack([r * np.cos(aa).ravel(), r * np.sin(aa).ravel(), zz.ravel()], axis=1)
        g = np.arange(-r, r + spacing, spacing)
        x, y = np.meshgrid(g, g)
        disk = np.stack([x.ravel(), y.ravel()], axis=1)
        disk = disk[(disk ** 2).sum(axis=1) <= r * r]
        caps = [np.column_stack([disk, np.full(len(disk), s * hh)]) for s in (1, -1)]
        local = np.concatenate([side] + caps)
        return local @ self.pose[:3, :3].T + self.center

    def bounding_sphere(self):
        return self.center.copy(), math.hypot(self.radius, self.height / 2)


def primitive_from_dict(d):
    kind = d["type"]
    pose = np.asarray(d["pose"], dtype=np.float64)
    color = d.get("color", (200, 60, 60))
    if kind == "box":
        return Box(d["extents"], pose, color)
    if kind == "wedge":
        return Wedge(d["length"], d["width0"], d["width1"], d["height"], pose, color)
    if kind == "cylinder":
        return Cylinder(d["radius"], d["height"], pose, color)
    raise SceneError(f"unknown primitive type {kind!r}")


# ---------------------------------------------------------------------------
# scene description

@dataclass
class Camera:
    eye: tuple
    target: tuple
    intrinsics: Intrinsics = KINECT

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation; columns are camera x (right), y (down), z (forward)."""
        eye, target = np.asarray(self.eye, float), np.asarray(self.target, float)
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            right = np.array([1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd], axis=1)

    def world_to_camera(self, pts):
        return (np.atleast_2d(pts) - np.asarray(self.eye, float)) @ self.rotation()

    def dir_to_camera(self, v):
        return np.asarray(v, float) @ self.rotation()


@dataclass
class SceneSpec:
    objects: list = field(default_factory=list)
    camera: Camera = field(default_factory=lambda: Camera(eye=(0.0, -0.45, 0.6), target=(0.0, 0.0, 0.05)))
    table_height: float = 0.0
    table_size: tuple = (1.2, 1.0)
    table_color: tuple = TABLE_COLOR
    noise_sigma: float = 0.0
    seed: int = 0
    camouflage: bool = False
    name: str = "scene"

    def table(self) -> Box:
        sx, sy = self.table_size
        return Box((sx, sy, 0.03), pose_matrix((0, 0, self.table_height - 0.015)), self.table_color)

    def to_dict(self) -> dict:
        cam = self.camera
        return {
            "name": self.name,
            "objects": [o.to_dict() for o in self.objects],
            "camera": {"eye": list(cam.eye), "target": list(cam.target),
                       "intrinsics": cam.intrinsics.to_dict()},
            "table": {"height": self.table_height, "size": list(self.table_size),
                      "color": list(self.table_color)},
            "noise": {"sigma": self.noise_sigma, "seed": self.seed},
            "camouflage": self.camouflage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            cam = d["camera"]
            table = d.get("table", {})
            noise = d.get("noise", {})
            return cls(
                objects=[primitive_from_dict(o) for o in d.get("objects", [])],
                camera=Camera(eye=tuple(cam["eye"]), target=tuple(cam["target"]),
                              intrinsics=Intrinsics.from_dict(cam["intrinsics"])),
                table_height=float(table.get("height", 0.0)),
                table_size=tuple(table.get("size", (1.2, 1.0))),
                table_color=tuple(table.get("color", TABLE_COLOR)),
                noise_sigma=float(noise.get("sigma", 0.0)),
                seed=int(noise.get("seed", 0)),
                camouflage=bool(d.get("camouflage", False)),
                name=d.get("name", "scene"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"malformed scene spec: {exc}") from exc


# ---------------------------------------------------------------------------
# rendering

def _shade(base, normals):
    lam = np.clip(normals @ LIGHT_DIR, 0.0, 1.0)
    k = 0.35 + 0.65 * lam
    return np.clip(np.asarray(base, float)[None, :] * k[:, None], 0, 255)


def render_raw(spec: SceneSpec):
    """Ray-cast ``spec``; returns (color, depth, ids, world_normals) before noise."""
    cam = spec.camera
    intr = cam.intrinsics
    eye = np.asarray(cam.eye, dtype=np.float64)
    prims = [spec.table()] + list(spec.objects)
    for i, p in enumerate(prims):
        if p.contains(eye[None])[0]:
            raise SceneError(f"camera is inside primitive {i}")
    h, w = intr.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    rot = cam.rotation()
    dirs = d_cam.reshape(-1, 3) @ rot.T  # z_cam component of dirs is 1 -> t == depth

    best = np.full(h * w, np.inf)
    ids = np.full(h * w, -1, dtype=np.int32)
    nrm = np.zeros((h * w, 3))
    for pid, prim in enumerate(prims):
        t, n = prim.intersect(eye, dirs)
        closer = t < best
        best[closer] = t[closer]
        ids[closer] = pid
        nrm[closer] = n[closer]

    color = np.zeros((h * w, 3))
    color[:] = (0, 0, 0)
    for pid, prim in enumerate(prims):
        sel = ids == pid
        if not sel.any():
            continue
        base = spec.table_color if (pid == 0 or spec.camouflage) else prim.color
        color[sel] = _shade(base, nrm[sel])
    depth = np.where(np.isfinite(best), best, 0.0)
    return (np.rint(color).astype(np.uint8).reshape(h, w, 3), depth.reshape(h, w),
            ids.reshape(h, w), nrm.reshape(h, w, 3))


@dataclass
class GTHandle:
    object_id: int
    center: np.ndarray  # camera frame
    approach: np.ndarray  # outward surface normal n (camera frame)
    axis: np.ndarray  # closing axis a (camera frame)
    width: float
    gaps: tuple

    def to_dict(self):
        return {"object_id": self.object_id, "center": np.round(self.center, 6).tolist(),
                "n": np.round(self.approach, 6).tolist(), "a": np.round(self.axis, 6).tolist(),
                "width": round(self.width, 6), "gaps": [round(g, 6) for g in self.gaps]}

    @classmethod
    def from_dict(cls, d):
        return cls(object_id=int(d["object_id"]), center=np.asarray(d["center"], float),
                   approach=np.asarray(d["n"], float), axis=np.asarray(d["a"], float),
                   width=float(d["width"]), gaps=tuple(d.get("gaps", ())))


@dataclass
class GroundTruth:
    mask: np.ndarray  # (H, W) int: -1 background, 0 table, k >= 1 object k-1
    handles: list

    def object_handles(self, object_id):
        return [h for h in self.handles if h.object_id == object_id]

    def to_dict(self):
        return {"handles": [h.to_dict() for h in self.handles]}


# ---------------------------------------------------------------------------
# ground truth

@dataclass(frozen=True)
class GTParams:
    parallel_tol: float = math.radians(10.0)
    axis_tol: float = math.radians(15.0)
    occlusion_margin: float = 0.005
    center_step: float = 0.005
    cap_axis_step: float = math.radians(10.0)
    sample_spacing: float = 0.002


def _finger_offsets(pts, c, n, a, f, gr: GripperGeometry):
    """Local (along-axis, along-finger-width, depth-below-surface) coordinates."""
    q = pts - c
    return q @ a, q @ f, -(q @ n)


def _table_hit_offset(c, n, a, f, gr, table_z, start, stop):
    """Smallest along-axis offset in [start, stop] at which a finger slab dips below the table."""
    # z of the lowest slab corner as a function of the axis offset x: base + x * a_z
    base = c[2] - abs(f[2]) * gr.w / 2 - abs(n[2]) * gr.l - table_z
    slope = a[2]
    lo_val = base + slope * start
    if lo_val < 0:
        return start
    if slope >= 0:
        return math.inf
    x = -base / slope
    return x if x <= stop else math.inf


def _side_gap(obstacles, own, c, n, a, f, gr, table_z, sign):
    """Clearance along sign*a from the own-object extent, capped at d/2."""
    aa = a * sign
    oa, of, os_ = _finger_offsets(own, c, n, aa, f, gr)
    sel = (np.abs(of) <= gr.w / 2) & (np.abs(os_) <= gr.l)
    b = float(oa[sel].max()) if sel.any() else 0.0
    cap = gr.d / 2
    best = cap
    if len(obstacles):
        pa, pf, ps = _finger_offsets(obstacles, c, n, aa, f, gr)
        inside = (np.abs(pf) <= gr.w / 2) & (np.abs(ps) <= gr.l) & (pa > b) & (pa <= b + cap)
        if inside.any():
            best = min(best, float(pa[inside].min()) - b)
    th = _table_hit_offset(c, n, aa, f, gr, table_z, b, b + cap)
    best = min(best, max(th - b, 0.0))
    return b, best


def _prism_blocked(obstacles, c, n, a, f, b_plus, b_minus, gr, margin):
    if not len(obstacles):
        return False
    pa, pf, ps = _finger_offsets(obstacles, c, n, a, f, gr)
    inside = ((pa >= -b_minus - margin) & (pa <= b_plus + margin)
              & (np.abs(pf) <= gr.w / 2 + margin) & (ps < -1e-3) & (ps >= -(gr.l + margin)))
    return bool(inside.any())


def _candidate_handles(prim, eye, params: GTParams, gr: GripperGeometry):
    """Yield (center, n, a, f, parallel_ok) for every geometric candidate on ``prim``."""
    if isinstance(prim, Cylinder):
        r, hh = prim.radius, prim.height / 2
        axis, ctr = prim.axis, prim.center
        # caps
        for sign in (1.0, -1.0):
            n = axis * sign
            cc = ctr + n * hh
            if np.dot(n, eye - cc) <= 0:
                continue
            e1 = prim.pose[:3, 0]
            e2 = np.cross(n, e1)
            for th in np.arange(0, math.pi, params.cap_axis_step):
                a = math.cos(th) * e1 + math.sin(th) * e2
                yield cc, n, a, np.cross(n, a), True
        # curved side
        to_eye = eye - ctr
        perp = to_eye - np.dot(to_eye, axis) * axis
        if np.linalg.norm(perp) < 1e-6:
            return
        n = perp / np.linalg.norm(perp)
        a_across = np.cross(axis, n)
        a_across /= np.linalg.norm(a_across)
        span = hh - gr.w / 2
        steps = np.arange(-span, span + 1e-9, params.center_step) if span > 0 else np.array([0.0])
        for s in steps:
            cc = ctr + axis * s + n * r
            yield cc, n, a_across, np.cross(n, a_across), True
        cc = ctr + n * r
        yield cc, n, axis, np.cross(n, axis), True
        return

    normals, offsets = prim.normals, prim.offsets
    for i, n in enumerate(normals):
        fv = prim.face_vertices(i)
        if len(fv) < 3:
            continue
        fc = fv.mean(axis=0)
        if np.dot(n, eye - fc) <= 0:
            continue
        dirs = []
        for j, nj in enumerate(normals):
            if j == i or len(prim.face_vertices(j)) < 3:
                continue
            shared = sum(np.any(np.linalg.norm(prim.face_vertices(j) - p, axis=1) < 1e-7) for p in fv)
            if shared < 2:
                continue
            d = nj - np.dot(nj, n) * n
            if np.linalg.norm(d) < 1e-9:
                continue
            d /= np.linalg.norm(d)
            if all(abs(np.dot(d, e)) < math.cos(math.radians(1)) for e in dirs):
                dirs.append(d)
        for a in dirs:
            f = np.cross(n, a)
            proj = (fv - fc) @ f
            lo, hi = proj.min() + gr.w / 4, proj.max() - gr.w / 4
            steps = np.arange(0.0, max(hi, 0.0) + 1e-9, params.center_step)
            steps = np.unique(np.concatenate([-steps, steps]))
            steps = steps[(steps >= lo - 1e-9) & (steps <= hi + 1e-9)]
            for s in steps:
                c0 = fc + s * f
                # chord through the face along +/- a, and the faces it exits through
                exits = []
                for sign in (1.0, -1.0):
                    da = a * sign
                    den = normals @ da
                    with np.errstate(divide="ignore", invalid="ignore"):
                        tt = np.where(den > 1e-12, (offsets - normals @ c0) / den, np.inf)
                    j = int(np.argmin(tt))
                    exits.append((float(tt[j]), normals[j]))
                (tp, np_), (tm, nm) = exits
                if not (np.isfinite(tp) and np.isfinite(tm)):
                    continue
                c = c0 + a * (tp - tm) / 2
                ok = (np.dot(np_, a) >= math.cos(params.axis_tol)
                      and np.dot(nm, -a) >= math.cos(params.axis_tol)
                      and np.dot(np_, -nm) >= math.cos(params.parallel_tol))
                yield c, n, a, f, ok


def ground_truth_handles(spec: SceneSpec, ids: np.ndarray, gripper: GripperGeometry,
                         params: GTParams = GTParams()) -> list:
    cam = spec.camera
    eye = np.asarray(cam.eye, float)
    intr = cam.intrinsics
    samples = [p.surface_samples(params.sample_spacing) for p in spec.objects]
    spheres = [p.bounding_sphere() for p in spec.objects]
    reach = math.sqrt((gr_span := gripper.d + gripper.d / 2) ** 2 + gripper.l ** 2 + gripper.w ** 2)
    out = []
    for k, prim in enumerate(spec.objects):
        own = samples[k]
        for c, n, a, f, parallel_ok in _candidate_handles(prim, eye, params, gripper):
            if not parallel_ok:
                continue
            near = [samples[j] for j in range(len(spec.objects))
                    if j != k and np.linalg.norm(spheres[j][0] - c) <= spheres[j][1] + reach + gr_span]
            obstacles = np.concatenate(near) if near else np.zeros((0, 3))
            b_plus, g_plus = _side_gap(obstacles, own, c, n, a, f, gripper, spec.table_height, 1.0)
            b_minus, g_minus = _side_gap(obstacles, own, c, n, a, f, gripper, spec.table_height, -1.0)
            width = b_plus + b_minus
            if width > gripper.d:
                continue
            if not (g_plus > gripper.t and g_minus > gripper.t):
                continue
            if _prism_blocked(obstacles, c, n, a, f, b_plus, b_minus, gripper, params.occlusion_margin):
                continue
            # handle centre must be visible on this object
            pc = cam.world_to_camera(c)[0]
            if pc[2] <= 0:
                continue
            u = intr.fx * pc[0] / pc[2] + intr.cx
            v = intr.fy * pc[1] / pc[2] + intr.cy
            ui, vi = int(round(u)), int(round(v))
            if not (0 <= vi < ids.shape[0] and 0 <= ui < ids.shape[1]) or ids[vi, ui] != k + 1:
                continue
            # re-centre between the measured contact extents
            c_mid = c + a * (b_plus - b_minus) / 2
            out.append(GTHandle(
                object_id=k,
                center=cam.world_to_camera(c_mid)[0],
                approach=cam.dir_to_camera(n),
                axis=cam.dir_to_camera(a),
                width=float(width),
                gaps=(float(g_plus), float(g_minus)),
            ))
    return out


def render(spec: SceneSpec, gripper: GripperGeometry | None = None,
           params: GTParams = GTParams()) -> tuple[Frame, GroundTruth]:
    """Render ``spec`` to a Frame (with depth noise) and its ground truth."""
    gripper = gripper or GripperGeometry()
    color, depth, ids, _ = render_raw(spec)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        noise = rng.normal(0.0, spec.noise_sigma, size=depth.shape)
        depth = np.where(depth > 0, np.maximum(depth + noise, 1e-4), 0.0)
    frame = frame_from_depth(color, depth, spec.camera.intrinsics)
    mask = np.where(ids >= 0, ids, -1)
    handles = ground_truth_handles(spec, ids, gripper, params)
    return frame, GroundTruth(mask=mask, handles=handles)


# ---------------------------------------------------------------------------
# standard suite

_PALETTE = [(200, 60, 50), (50, 120, 200), (60, 170, 80), (220, 180, 40),
            (150, 70, 170), (230, 120, 40), (40, 170, 170), (190, 90, 130)]


def _on_table(z_extent, x, y, yaw=0.0):
    return pose_matrix((x, y, z_extent / 2), yaw=yaw)


def _box(ext, x, y, yaw, k):
    return Box(ext, _on_table(ext[2], x, y, yaw), _PALETTE[k % len(_PALETTE)])


def _cyl(r, h, x, y, k):
    return Cylinder(r, h, _on_table(h, x, y), _PALETTE[k % len(_PALETTE)])


def _lying_cyl(r, length, x, y, yaw, k):
    # axis horizontal: rotate local z onto the world x-y plane
    pose = pose_matrix((x, y, r), yaw=yaw, pitch=math.pi / 2)
    return Cylinder(r, length, pose, _PALETTE[k % len(_PALETTE)])


def _spec(name, objects, sigma, seed, camouflage=False):
    return SceneSpec(objects=objects, noise_sigma=sigma, seed=seed, camouflage=camouflage, name=name)


def standard_specs(sigma: float = 0.0015) -> list[SceneSpec]:
    """The fixed 17-scene catalogue: 10 single-object, 5 clutter, 2 occlusion."""
    rad = math.radians
    scenes = [
        _spec("single_box_upright", [_box((0.05, 0.07, 0.12), 0.0, 0.0, rad(20), 0)], sigma, 101),
        _spec("single_box_square", [_box((0.045, 0.045, 0.10), 0.0, 0.0, rad(45), 1)], sigma, 102),
        _spec("single_tissue_box", [_box((0.11, 0.22, 0.09), 0.0, 0.0, rad(10), 2)], sigma, 103),
        _spec("single_cylinder", [_cyl(0.035, 0.12, 0.0, 0.0, 3)], sigma, 104),
        _spec("single_cylinder_thin", [_cyl(0.022, 0.15, 0.0, 0.0, 4)], sigma, 105),
        _spec("single_cylinder_wide", [_cyl(0.06, 0.10, 0.0, 0.0, 5)], sigma, 106),
        _spec("single_wedge", [Wedge(0.14, 0.03, 0.08, 0.09, _on_table(0.09, 0.0, 0.0, 0.0),
                                     _PALETTE[6])], sigma, 107),
        _spec("single_lying_cylinder", [_lying_cyl(0.045, 0.04, 0.0, 0.0, rad(90), 7)], sigma, 108),
        _spec("single_box_small", [_box((0.035, 0.06, 0.10), 0.0, 0.0, rad(-15), 0)], sigma, 109),
        _spec("single_box_camouflage", [_box((0.05, 0.08, 0.11), 0.0, 0.0, rad(30), 1)], sigma, 110,
              camouflage=True),
        _spec("clutter_1", [
            _box((0.05, 0.07, 0.12), -0.12, 0.02, rad(10), 0),
            _cyl(0.03, 0.13, 0.0, 0.08, 1),
            _box((0.11, 0.2, 0.08), 0.13, 0.06, rad(-20), 2),
            _cyl(0.055, 0.09, 0.03, -0.09, 3),
            _box((0.045, 0.045, 0.10), -0.05, -0.10, rad(40), 4),
        ], sigma, 111),
        _spec("clutter_2", [
            _box((0.05, 0.08, 0.11), -0.08, 0.0, 0.0, 0),
            _box((0.05, 0.08, 0.11), -0.025, 0.0, 0.0, 1),  # 0.5 cm from the first
            _cyl(0.03, 0.12, 0.09, 0.05, 2),
            _box((0.12, 0.12, 0.07), 0.12, -0.08, rad(15), 3),
            _lying_cyl(0.03, 0.16, -0.06, -0.12, rad(5), 4),
            _box((0.04, 0.06, 0.10), 0.0, 0.12, rad(-30), 5),
        ], sigma, 112),
        _spec("clutter_3", [
            _cyl(0.025, 0.14, -0.14, -0.04, 0),
            _box((0.05, 0.07, 0.12), -0.05, 0.05, rad(25), 1),
            _box((0.04, 0.09, 0.10), 0.05, -0.03, rad(-10), 2),
            _cyl(0.04, 0.11, 0.14, 0.06, 3),
            _box((0.15, 0.25, 0.05), 0.0, -0.16, rad(0), 4),
            Wedge(0.14, 0.03, 0.08, 0.09, _on_table(0.09, 0.15, -0.08, rad(60)), _PALETTE[5]),
            _box((0.035, 0.06, 0.09), -0.13, 0.10, rad(50), 6),
        ], sigma, 113),
        _spec("clutter_4", [
            _box((0.05, 0.06, 0.11), -0.10, -0.05, rad(5), 0),
            _box((0.05, 0.06, 0.11), -0.045, -0.05, rad(5), 1),  # ~0.5 cm gap
            _cyl(0.03, 0.12, 0.05, -0.06, 2),
            _cyl(0.028, 0.10, 0.115, -0.06, 3),  # ~0.7 cm gap to the previous one
            _box((0.045, 0.07, 0.12), 0.0, 0.09, rad(35), 4),
            _box((0.10, 0.16, 0.06), 0.14, 0.10, rad(-5), 5),
            _cyl(0.02, 0.16, -0.13, 0.08, 6),
            _box((0.035, 0.05, 0.09), 0.17, -0.14, rad(20), 7),
        ], sigma, 114),
        _spec("clutter_5", [
            _box((0.06, 0.08, 0.12), -0.11, 0.06, rad(-25), 0),
            _cyl(0.035, 0.12, -0.02, 0.09, 1),
            _box((0.05, 0.05, 0.10), 0.08, 0.08, rad(10), 2),
            _lying_cyl(0.045, 0.025, 0.0, -0.06, rad(90), 3),
            _box((0.14, 0.14, 0.06), -0.14, -0.10, rad(0), 4),
            _box((0.045, 0.07, 0.11), 0.14, -0.05, rad(30), 5),
        ], sigma, 115),
    ]
    # occlusion: a bar floating above a graspable box top, inside / outside the approach prism
    top = 0.12
    scenes.append(_spec("occlusion_in_prism", [
        _box((0.05, 0.08, top), 0.0, 0.0, 0.0, 0),
        Box((0.16, 0.012, 0.012), pose_matrix((0.0, 0.0, top + 0.03)), _PALETTE[3]),
    ], sigma, 116))
    scenes.append(_spec("occlusion_outside_prism", [
        _box((0.05, 0.08, top), 0.0, 0.0, 0.0, 0),
        Box((0.012, 0.16, 0.012), pose_matrix((0.075, 0.0, top + 0.03)), _PALETTE[3]),
    ], sigma, 117))
    return scenes


def standard_suite(sigma: float = 0.0015, gripper: GripperGeometry | None = None):
    """Render the catalogue; returns a list of (SceneSpec, Frame, GroundTruth)."""
    out = []
    for spec in standard_specs(sigma):
        frame, gt = render(spec, gripper)
        out.append((spec, frame, gt))
    return out


def write_scene(out_dir, spec: SceneSpec, frame: Frame, gt: GroundTruth) -> Path:
    """Write color.png, depth.png, intrinsics.json, scene.json, ground_truth.json."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_frame_images(frame, d / "color.png", d / "depth.png")
    save_intrinsics(frame.intrinsics, d / "intrinsics.json")
    (d / "scene.json").write_text(json.dumps(spec.to_dict(), indent=1) + "\n")
    (d / "ground_truth.json").write_text(json.dumps(gt.to_dict(), indent=1) + "\n")
    return d
