import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import frame_of, make_intrinsics
from handlegrasp import synth
from handlegrasp.config import DetectorConfig, GripperGeometry
from handlegrasp.evaluation import match
from handlegrasp.frame_io import project
from handlegrasp.grasp import (BoundaryLine, CloudIndex, DegenerateFrame, LineFitError,
                               axis_perpendicularity_check, darboux_frame, detect_handles,
                               extract_boundary_lines, fit_line, gap_check, occlusion_filter,
                               parallelism_check)
from handlegrasp.segmentation import SegmentFeatures, features_from_points
from oracles import gap_oracle, line_residual, prism_oracle, sweep_min_residual, valid_points

GR = GripperGeometry()


def _feats(normal, major, minor):
    return SegmentFeatures(centroid=np.zeros(3), mean_normal=np.asarray(normal, float),
                           axis_major=np.asarray(major, float), axis_minor=np.asarray(minor, float),
                           eigvals=np.array([2.0, 1.0, 0.0]), extent_major=0.1, extent_minor=0.05)


def _line(u, p0=(0.0, 0.0)):
    u = np.asarray(u, float)
    return BoundaryLine(p0=np.asarray(p0, float), u=u / np.linalg.norm(u), inlier_count=10, rms_residual=0.0)


def _check_frame(n, a, f):
    for v in (n, a, f):
        assert abs(np.linalg.norm(v) - 1) < 1e-6
    assert abs(n @ a) < 1e-6 and abs(n @ f) < 1e-6 and abs(a @ f) < 1e-6
    assert np.linalg.det(np.stack([n, a, f])) > 0
    assert np.allclose(np.cross(n, a), f, atol=1e-6)


# ---------------------------------------------------------------------------
# frame construction

def test_darboux_plane_frames():
    x, y = np.linspace(-0.05, 0.05, 21), np.linspace(-0.03, 0.03, 13)
    xx, yy = np.meshgrid(x, y)
    pts = np.stack([xx.ravel(), yy.ravel(), np.ones(xx.size)], axis=1)
    feats = features_from_points(pts)
    n, a, f = darboux_frame(feats, "major")
    assert np.allclose(n, (0, 0, -1)) and np.allclose(np.abs(a), (1, 0, 0))
    n, a, f = darboux_frame(feats, "minor")
    assert np.allclose(np.abs(a), (0, 1, 0))
    _check_frame(n, a, f)


@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_darboux_orthonormal(v):
    n, major, minor = np.array(v[:3]), np.array(v[3:6]), np.array(v[6:])
    if min(np.linalg.norm(n), np.linalg.norm(major), np.linalg.norm(minor)) < 1e-3:
        return
    for choice, ax in (("major", major), ("minor", minor)):
        cosang = abs(ax @ n) / (np.linalg.norm(ax) * np.linalg.norm(n))
        if cosang > math.cos(math.radians(5.0)):
            with pytest.raises(DegenerateFrame):
                darboux_frame(_feats(n, major, minor), choice)
        else:
            _check_frame(*darboux_frame(_feats(n, major, minor), choice))


def test_darboux_degenerate_and_bad_choice():
    with pytest.raises(DegenerateFrame):
        darboux_frame(_feats((0, 0, -1), (0.01, 0, 1), (1, 0, 0)), "major")
    with pytest.raises(ValueError):
        darboux_frame(_feats((0, 0, -1), (1, 0, 0), (0, 1, 0)), "diagonal")


# close enough that a finger-width strip of rim spans 20-30 px
CLOSE = synth.Camera(eye=(0.0, -0.30, 0.36), target=(0.0, 0.0, 0.05))


def _close_up(obj):
    spec = synth.SceneSpec(objects=[obj], name="close", camera=CLOSE, noise_sigma=0.0015, seed=5)
    frame, gt = synth.render(spec)
    return spec, frame, gt, detect_handles(frame)


@pytest.fixture(scope="module")
def close_box():
    return _close_up(synth._box((0.05, 0.08, 0.12), 0.0, 0.0, math.radians(25), 0))


@pytest.fixture(scope="module")
def close_wedge():
    return _close_up(synth.Wedge(0.14, 0.03, 0.08, 0.09, synth._on_table(0.09, 0.0, 0.0), synth._PALETTE[6]))


def test_darboux_tilted_box_face(close_box):
    # closing axis on a well-visible tilted box face follows one of the face's edges
    spec, frame, gt, det = close_box
    _, _, ids, nw = synth.render_raw(spec)
    rot = spec.objects[0].pose[:3, :3]
    edges = [spec.camera.dir_to_camera(rot[:, i]) for i in range(3)]
    faces = [(ids == 1) & (nw @ (s * rot[:, i]) > 0.99) for i in range(3) for s in (1, -1)]
    faces = [m for m in faces if m.sum() >= 1500]
    segs = {s.id: s for s in det.segments}
    checked = 0
    for rec in det.records:
        if rec.hypothesis is None:
            continue
        m = segs[rec.hypothesis.segment_id].mask
        if not any((m & face).sum() >= 0.9 * m.sum() and m.sum() >= 0.5 * face.sum() for face in faces):
            continue
        a = rec.hypothesis.a
        assert max(abs(a @ e) for e in edges) >= math.cos(math.radians(5))
        checked += 1
    assert checked > 0


# ---------------------------------------------------------------------------
# gap check

def _box_top_case(boxes):
    """Render boxes on the table; hypothesis on the first box's top face along its x edge."""
    spec = synth.SceneSpec(objects=boxes, name="gap")
    frame, gt = synth.render(spec)
    _, _, ids, nw = synth.render_raw(spec)
    box = boxes[0]
    rot, pos = box.pose[:3, :3], box.pose[:3, 3]
    top_c = pos + rot[:, 2] * box.extents[2] / 2
    cam = spec.camera
    c = cam.world_to_camera(top_c)[0]
    n = cam.dir_to_camera(rot[:, 2])
    a = cam.dir_to_camera(rot[:, 0])
    f = np.cross(n, a)
    mask = (ids == 1) & (nw[..., 2] > 0.99)
    return frame, c, (n, a, f), mask


def _top_box(ext, x, k=0):
    return synth.Box(ext, synth.pose_matrix((x, 0.0, ext[2] / 2)), synth._PALETTE[k])


def test_gap_isolated_box_capped():
    frame, c, axes, mask = _box_top_case([_top_box((0.06, 0.04, 0.10), 0.0)])
    res = gap_check(frame, c, axes, GR, segment_mask=mask)
    assert res.accepted
    assert res.gap_plus == pytest.approx(GR.d / 2) and res.gap_minus == pytest.approx(GR.d / 2)
    assert abs(res.r - 0.03) < 0.004
    assert gap_oracle(frame, c, axes, GR, mask, 1.5 * GR.d)


def test_gap_neighbour_half_centimetre():
    # second box 0.5 cm past the first one's +x face
    boxes = [_top_box((0.06, 0.04, 0.10), 0.0), _top_box((0.06, 0.04, 0.10), 0.065, 1)]
    frame, c, axes, mask = _box_top_case(boxes)
    res = gap_check(frame, c, axes, GR, segment_mask=mask)
    assert not res.accepted
    assert res.gap_plus <= 0.005 + 0.002
    assert res.gap_minus == pytest.approx(GR.d / 2)
    assert not gap_oracle(frame, c, axes, GR, mask, 1.5 * GR.d)
    # occupancy confirmed by counting points between the two boxes' facing walls
    pts = valid_points(frame)[1]
    q = pts - c
    al, ac, dp = q @ axes[1], q @ axes[2], -(q @ axes[0])
    between = (al > 0.031) & (al < 0.031 + GR.t) & (np.abs(ac) <= GR.w / 2) & (np.abs(dp) <= GR.l)
    assert between.sum() > 0


def test_gap_box_wider_than_opening():
    frame, c, axes, mask = _box_top_case([_top_box((0.12, 0.04, 0.08), 0.0)])
    res = gap_check(frame, c, axes, GR, segment_mask=mask)
    assert not res.accepted and res.reason == "too wide"


# ---------------------------------------------------------------------------
# boundary lines

def test_fit_line_exact():
    x = np.linspace(-3, 5, 9)
    line = fit_line(np.stack([x, 2 * x + 1], axis=1))
    assert np.allclose(line.u, np.array([1.0, 2.0]) / math.sqrt(5))
    assert line.rms_residual < 1e-12 and line.inlier_count == 9


def test_fit_line_degenerate():
    with pytest.raises(LineFitError):
        fit_line([[0, 0], [1, 0], [1, 1], [0, 1]])
    with pytest.raises(LineFitError):
        fit_line([[2, 2], [2, 2], [2, 2]])
    with pytest.raises(LineFitError):
        fit_line([[2, 2]])


def test_fit_line_sign_convention():
    assert fit_line([[0, 0], [-1, -3]]).u[1] > 0
    u = fit_line([[5, 1], [0, 1], [2, 1]]).u
    assert u[1] == 0 and u[0] > 0


def test_fit_line_monte_carlo():
    rng = np.random.default_rng(11)
    for _ in range(200):
        t = rng.uniform(0, math.pi)
        d = np.array([math.cos(t), math.sin(t)])
        s = rng.uniform(-40, 40, 50)
        pts = rng.uniform(0, 600, 2) + s[:, None] * d + rng.normal(0, 0.5, (50, 2))
        line = fit_line(pts)
        ang = math.degrees(math.acos(min(1.0, abs(line.u @ d))))
        assert ang <= 2.0
        assert line.rms_residual <= 1.0
        assert line_residual(pts, line.u) <= sweep_min_residual(pts, 0.5) * (1 + 1e-9)


def _line_angle_3d(vh, intr):
    """Angle between the two boundary lines back-projected onto the handle's tangent plane."""
    hyp = vh.hypothesis
    dirs = []
    for line in (vh.line_plus, vh.line_minus):
        ends = []
        for t in (-10.0, 10.0):
            x, y = line.point(t)
            ray = np.array([(x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0])
            ends.append(ray * (hyp.n @ hyp.c) / (hyp.n @ ray))
        d = ends[1] - ends[0]
        dirs.append(d / np.linalg.norm(d))
    return math.degrees(math.acos(min(1.0, abs(dirs[0] @ dirs[1]))))


def test_extract_lines_box_parallel(close_box):
    _, frame, _, det = close_box
    accepted = [r.handle for r in det.records if r.accepted]
    assert len(accepted) >= 3
    angles = [_line_angle_3d(h, frame.intrinsics) for h in accepted]
    assert float(np.median(angles)) <= 3.0
    assert max(angles) <= 5.0


def test_extract_lines_wedge_converge(close_wedge):
    spec, frame, gt, det = close_wedge
    assert det.handles == []
    up = spec.camera.dir_to_camera(np.array([0.0, 0.0, 1.0]))
    across = [r for r in det.records if r.handle is not None and abs(r.hypothesis.n @ up) > 0.95]
    assert across and all(r.stage == "parallel" for r in across)
    expect = math.degrees(spec.objects[0].side_angle)
    angles = [_line_angle_3d(r.handle, frame.intrinsics) for r in across]
    assert abs(float(np.median(angles)) - expect) <= 3.0


def test_extract_lines_one_side_empty():
    from handlegrasp.edges import BoundaryNotFound, ValidatedBoundary

    vb = ValidatedBoundary(e_s=np.array([[1, 1], [2, 2], [3, 3]]), levels=np.ones(3, int),
                           plus_pixels=np.array([[1, 1], [2, 2], [3, 3]]),
                           minus_pixels=np.zeros((0, 2), int))
    with pytest.raises(BoundaryNotFound):
        extract_boundary_lines(vb)


def test_parallelism_examples():
    th = math.radians(10)
    ok, raw = parallelism_check(_line((1, 1)), _line((1, 1)), th)
    assert ok and raw == pytest.approx(1.0)
    r20 = math.radians(20)
    assert not parallelism_check(_line((1, 0)), _line((math.cos(r20), math.sin(r20))), th)[0]
    r5 = math.radians(5)
    assert parallelism_check(_line((1, 0)), _line((math.cos(r5), -math.sin(r5))), th)[0]


def test_axis_check_examples():
    intr = make_intrinsics()
    frame = frame_of(np.ones(intr.shape), intr)
    c = np.array([0.0, 0.0, 1.0])
    a = np.array([1.0, 0.0, 0.0])
    tol = math.radians(15)
    ok, raw, degen = axis_perpendicularity_check(a, (_line((0, 1)), _line((0, -1))), frame, tol, c)
    assert ok and raw == pytest.approx(0.0, abs=1e-12) and not degen
    ok, raw, degen = axis_perpendicularity_check(a, (_line((1, 0)), _line((1, 0))), frame, tol, c)
    assert not ok and raw == pytest.approx(1.0)
    # axis along the viewing ray: degenerate, passes with a flag
    ok, raw, degen = axis_perpendicularity_check(np.array([0.0, 0.0, 1.0]), (_line((1, 0)), _line((1, 0))),
                                                 frame, tol, c)
    assert ok and degen and raw == 0.0


# ---------------------------------------------------------------------------
# occlusion

def _top_records(suite_run, name):
    spec, _, _ = suite_run.by_name(name)
    det = suite_run.detections[name]
    up = spec.camera.dir_to_camera(np.array([0.0, 0.0, 1.0]))
    return det, [r for r in det.records if r.hypothesis is not None and abs(r.hypothesis.n @ up) > 0.95]


def test_occlusion_bar_inside_prism(suite_run):
    det, top = _top_records(suite_run, "occlusion_in_prism")
    blocked = [r for r in top if r.stage == "occlusion"]
    assert blocked and not any(r.accepted for r in top)
    segs = {s.id: s for s in det.segments}
    cfg = DetectorConfig()
    for r in blocked:
        mask = segs[r.hypothesis.segment_id].mask
        ok, k = occlusion_filter(det.frame, r.handle, GR, cfg.occlusion_margin, segment_mask=mask)
        assert not ok and k > 0
        assert not prism_oracle(det.frame, r.handle, GR, mask, cfg.occlusion_margin,
                                cfg.occlusion_min_height, valid_points(det.frame))


def test_occlusion_bar_outside_prism(suite_run):
    spec, frame, gt = suite_run.by_name("occlusion_outside_prism")
    det, top = _top_records(suite_run, "occlusion_outside_prism")
    assert any(r.accepted for r in top)
    # the bar lies inside the gap check's search sphere of an accepted top handle
    bar = spec.camera.world_to_camera(spec.objects[1].pose[:3, 3])[0]
    acc = [r for r in top if r.accepted]
    assert min(np.linalg.norm(bar - r.hypothesis.c) for r in acc) < 1.5 * GR.d


# ---------------------------------------------------------------------------
# full pipeline

def test_empty_scene_no_handles():
    frame, _ = synth.render(synth.SceneSpec(objects=[], name="table", noise_sigma=0.0015, seed=3))
    det = detect_handles(frame)
    assert det.handles == []


def test_single_box_handles(suite_run):
    spec, frame, gt = suite_run.by_name("single_box_upright")
    det = suite_run.detections["single_box_upright"]
    assert det.handles
    _, _, ids, nw = synth.render_raw(spec)
    rot = spec.objects[0].pose[:3, :3]
    ext = spec.objects[0].extents
    found = False
    for i in range(3):
        for s in (1, -1):
            face = (ids == 1) & (nw @ (s * rot[:, i]) > 0.99)
            if face.sum() < 50:
                continue
            centroid = frame.cloud[face].mean(axis=0)
            # graspable width directions: in-face edges no wider than the opening
            widths = [spec.camera.dir_to_camera(rot[:, j]) for j in range(3) if j != i and ext[j] <= GR.d]
            for h in det.handles:
                if np.linalg.norm(h.c - centroid) > 0.01:
                    continue
                if any(abs(h.hypothesis.a @ w) >= math.cos(math.radians(10)) for w in widths):
                    found = True
    assert found


def test_clutter_six_objects_two_graspable():
    rad = math.radians
    objs = [synth._box((0.05, 0.07, 0.12), -0.12, 0.0, rad(15), 0),
            synth._cyl(0.03, 0.12, 0.10, 0.06, 1),
            synth._box((0.14, 0.14, 0.06), 0.0, -0.13, rad(5), 2),
            synth._cyl(0.065, 0.08, 0.02, 0.10, 3),
            synth._box((0.13, 0.16, 0.05), 0.15, -0.09, rad(-10), 4),
            synth._box((0.16, 0.12, 0.04), -0.14, 0.14, rad(20), 5)]
    frame, gt = synth.render(synth.SceneSpec(objects=objs, name="c6", noise_sigma=0.0015, seed=7))
    assert sorted({h.object_id for h in gt.handles}) == [0, 1]
    det = detect_handles(frame)
    assert det.handles
    for h in det.handles:
        u, v = np.round(project(h.c, frame.intrinsics)).astype(int)
        assert gt.mask[v, u] in (1, 2)
        assert match(h, gt.handles)


def test_output_invariants_and_idempotence(suite_run):
    cfg = DetectorConfig()
    for spec, _, _ in suite_run.scenes:
        det = suite_run.detections[spec.name]
        segs = {s.id: s for s in det.segments}
        index = CloudIndex(det.frame)
        for h in det.handles:
            hyp = h.hypothesis
            _check_frame(hyp.n, hyp.a, hyp.f)
            assert hyp.r <= GR.d / 2
            assert hyp.gap_plus > GR.t and hyp.gap_minus > GR.t
            assert 0 <= h.a_b_raw <= 1 and 0 <= h.a_axis_raw <= 1
            mask = segs[hyp.segment_id].mask
            res = gap_check(det.frame, hyp.c, (hyp.n, hyp.a, hyp.f), GR, segment_mask=mask, index=index)
            assert res.accepted
            assert parallelism_check(h.line_plus, h.line_minus, math.radians(cfg.theta_r_deg))[0]
            assert axis_perpendicularity_check(hyp.a, (h.line_plus, h.line_minus), det.frame,
                                               math.radians(cfg.theta_axis_tol_deg), hyp.c, hyp.f)[0]
            assert occlusion_filter(det.frame, h, GR, cfg.occlusion_margin, segment_mask=mask,
                                    index=index, min_height=cfg.occlusion_min_height)[0]


def test_theta_r_monotone(suite_run):
    _, frame, _ = suite_run.by_name("clutter_3")
    sets = {}
    for th in (3.0, 10.0, 25.0):
        det = detect_handles(frame, config=DetectorConfig(theta_r_deg=th))
        sets[th] = ({r.key for r in det.records if r.passed_gap},
                    {r.key for r in det.records if r.passed_parallel},
                    {r.key for r in det.records if r.accepted})
    assert sets[3.0][0] == sets[10.0][0] == sets[25.0][0]
    for lo, hi in ((3.0, 10.0), (10.0, 25.0)):
        assert sets[lo][1] <= sets[hi][1]
        assert sets[lo][2] <= sets[hi][2]


def test_gap_decisions_match_oracle_single_scene(suite_run):
    det = suite_run.detections["clutter_4"]
    segs = {s.id: s for s in det.segments}
    cache = valid_points(det.frame)
    cfg = DetectorConfig()
    n = 0
    for rec in det.records:
        if rec.hypothesis is None:
            continue
        h = rec.hypothesis
        ok = gap_oracle(det.frame, h.c, (h.n, h.a, h.f), GR, segs[h.segment_id].mask,
                        cfg.sphere_factor * GR.d, cfg.extension_step, cache=cache)
        assert ok == rec.passed_gap
        n += 1
    assert n > 0
