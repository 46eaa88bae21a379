"""Debug overlays: segment rims, validated boundary points, contact lines, handle frames."""

from __future__ import annotations

import cv2
import numpy as np

from .frame_io import Frame, project

_PLUS = (255, 60, 60)
_MINUS = (255, 0, 255)
_LINE = (255, 220, 0)
_RIM = (150, 150, 150)


def _line_segment(p0, u, half: float):
    p0, u = np.asarray(p0, float), np.asarray(u, float)
    a, b = p0 - half * u, p0 + half * u
    return tuple(int(round(v)) for v in a), tuple(int(round(v)) for v in b)


def draw_handle_frame(img: np.ndarray, c, n, a, f, r: float, intr, color=(0, 255, 0)) -> None:
    """Draw centre, closing axis (length r each way) and approach stub."""
    c = np.asarray(c, float)
    pts = np.stack([c, c + r * np.asarray(a), c - r * np.asarray(a), c + 0.03 * np.asarray(n),
                    c + 0.5 * r * np.asarray(f)])
    if np.any(pts[:, 2] <= 0):
        return
    uv = np.round(project(pts, intr)).astype(int)
    p = [tuple(int(v) for v in q) for q in uv]
    cv2.line(img, p[2], p[1], color, 1, cv2.LINE_AA)
    cv2.line(img, p[0], p[3], (0, 120, 255), 1, cv2.LINE_AA)
    cv2.line(img, p[0], p[4], (255, 255, 255), 1, cv2.LINE_AA)
    cv2.circle(img, p[0], 2, color, -1)


def draw_lines(img: np.ndarray, lines, half: float = 15.0) -> None:
    for p0, u in lines:
        a, b = _line_segment(p0, u, half)
        cv2.line(img, a, b, _LINE, 1, cv2.LINE_AA)


def detection_overlay(detection, ranked=None) -> np.ndarray:
    """RGB overlay of a :class:`~handlegrasp.grasp.Detection`.

    Rims of all segments in gray, validated boundary points of surviving
    handles in red / magenta, their fitted lines in yellow and the rank-1
    handle frame in green.
    """
    frame: Frame = detection.frame
    img = (frame.color.astype(np.float64) * 0.6).astype(np.uint8).copy()
    for seg in detection.segments:
        rim = seg.boundary
        img[rim[:, 0], rim[:, 1]] = _RIM
    handles = [rh.handle for rh in ranked] if ranked is not None else list(detection.handles)
    for h in handles:
        vb = h.boundary
        if vb is not None:
            img[vb.plus_pixels[:, 0], vb.plus_pixels[:, 1]] = _PLUS
            img[vb.minus_pixels[:, 0], vb.minus_pixels[:, 1]] = _MINUS
        draw_lines(img, [(h.line_plus.p0, h.line_plus.u), (h.line_minus.p0, h.line_minus.u)])
    if handles:
        top = handles[0].hypothesis
        draw_handle_frame(img, top.c, top.n, top.a, top.f, top.r, frame.intrinsics)
    return img


def handles_overlay(frame: Frame, handles_json: dict) -> np.ndarray:
    """Overlay of handles read back from a handles.json document."""
    img = (frame.color.astype(np.float64) * 0.6).astype(np.uint8).copy()
    hs = sorted(handles_json.get("handles", []), key=lambda h: h.get("rank", 0))
    for k, h in enumerate(hs):
        draw_lines(img, [(ln["p0"], ln["u"]) for ln in h.get("lines", [])])
        color = (0, 255, 0) if k == 0 else (0, 150, 0)
        draw_handle_frame(img, h["center"], h["n"], h["a"], h["f"], h["r"], frame.intrinsics, color)
    return img


def save_rgb(img: np.ndarray, path) -> None:
    if not cv2.imwrite(str(path), np.ascontiguousarray(img[..., ::-1])):
        raise OSError(f"could not write {path}")
