import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from handlegrasp import synth  # noqa: E402
from handlegrasp.frame_io import Intrinsics, frame_from_depth  # noqa: E402
from handlegrasp.grasp import detect_handles  # noqa: E402

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("repo")


# ---------------------------------------------------------------------------
# small frames

def make_intrinsics(w=64, h=48, f=60.0):
    return Intrinsics(fx=f, fy=f, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def plane_depth(intr, normal, offset):
    """Depth image of the plane n . p = offset seen through ``intr``."""
    v, u = np.mgrid[0:intr.height, 0:intr.width].astype(float)
    rays = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    den = rays @ np.asarray(normal, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = offset / den
    return np.where(np.isfinite(z) & (z > 0), z, 0.0)


def frame_of(depth, intr, color=None):
    if color is None:
        color = np.full(depth.shape + (3,), 128, dtype=np.uint8)
    return frame_from_depth(color, depth, intr)


@pytest.fixture
def small_intr():
    return make_intrinsics()


# ---------------------------------------------------------------------------
# standard suite, rendered and detected once per session

class SuiteRun:
    def __init__(self):
        self.render_s = 0.0
        self.detect_s = 0.0
        self.scenes = []  # (spec, frame, gt)
        self.detections = {}

    def by_name(self, name):
        for spec, frame, gt in self.scenes:
            if spec.name == name:
                return spec, frame, gt
        raise KeyError(name)


@pytest.fixture(scope="session")
def suite_run():
    run = SuiteRun()
    t0 = time.perf_counter()
    run.scenes = synth.standard_suite(sigma=0.0015)
    run.render_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    for spec, frame, _ in run.scenes:
        run.detections[spec.name] = detect_handles(frame)
    run.detect_s = time.perf_counter() - t0
    return run


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    n, title = crit
    props = dict(report.user_properties)
    prev = _CRITERIA.get(n, (title, True, ""))
    detail = "; ".join(x for x in (prev[2], props.get("detail", "")) if x)
    _CRITERIA[n] = (title, prev[1] and report.passed, detail)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="session")
def suite_dir(suite_run, tmp_path_factory):
    """The rendered suite written to disk in the CLI's scene layout."""
    root = tmp_path_factory.mktemp("suite")
    for i, (spec, frame, gt) in enumerate(suite_run.scenes):
        synth.write_scene(root / f"{i + 1:02d}_{spec.name}", spec, frame, gt)
    return root


@pytest.fixture(scope="session")
def eval_runs(suite_dir, tmp_path_factory):
    """Two full ``eval`` runs over the same scene directory."""
    from handlegrasp.cli import main

    out = tmp_path_factory.mktemp("eval")
    codes = []
    for k in (1, 2):
        codes.append(main(["eval", "--scenes-dir", str(suite_dir),
                           "--report", str(out / f"report{k}.json"),
                           "--predictions-dir", str(out / f"pred{k}")]))
    return out, codes
