"""Geometric matching of detected handles against synthetic ground truth."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DetectorConfig
from .frame_io import Frame, Intrinsics, load_frame, load_intrinsics

STAGES = ("hypotheses", "parallel", "axis", "overall")


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MatchCriteria:
    center: float = 0.02  # m
    axis: float = math.radians(15.0)
    width_tol: float = 0.25  # fraction of the true width

    def __post_init__(self):
        if min(self.center, self.axis, self.width_tol) <= 0:
            raise ValueError("match criteria must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MatchCriteria":
        """Keys: center_m, axis_deg, width_tol."""
        unknown = set(d) - {"center_m", "axis_deg", "width_tol"}
        if unknown:
            raise ValueError(f"unknown criteria keys: {sorted(unknown)}")
        base = cls()
        return cls(center=float(d.get("center_m", base.center)),
                   axis=math.radians(float(d.get("axis_deg", math.degrees(base.axis)))),
                   width_tol=float(d.get("width_tol", base.width_tol)))

    def to_dict(self) -> dict:
        return {"center_m": self.center, "axis_deg": round(math.degrees(self.axis), 9),
                "width_tol": self.width_tol}


def _pred_geometry(pred):
    """(center, axis, r) from a ValidatedHandle, HandleHypothesis or plain dict."""
    if isinstance(pred, dict):
        return np.asarray(pred["center"], float), np.asarray(pred["a"], float), float(pred["r"])
    hyp = getattr(pred, "hypothesis", pred)
    return np.asarray(hyp.c, float), np.asarray(hyp.a, float), float(hyp.r)


def match(pred, gt_handles, criteria: MatchCriteria = MatchCriteria()) -> bool:
    c, a, r = _pred_geometry(pred)
    a = a / np.linalg.norm(a)
    cos_ax = math.cos(criteria.axis)
    for g in gt_handles:
        if np.linalg.norm(c - g.center) > criteria.center:
            continue
        ga = g.axis / np.linalg.norm(g.axis)
        if abs(float(np.dot(a, ga))) < cos_ax - 1e-12:
            continue
        if abs(2 * r - g.width) > criteria.width_tol * g.width:
            continue
        return True
    return False


@dataclass(frozen=True)
class Precision:
    value: float
    matched: int
    total: int

    @property
    def vacuous(self) -> bool:
        return self.total == 0


def precision(preds, gts, criteria: MatchCriteria = MatchCriteria()) -> Precision:
    preds = list(preds)
    if not preds:
        return Precision(1.0, 0, 0)
    hits = sum(match(p, gts, criteria) for p in preds)
    return Precision(hits / len(preds), hits, len(preds))


def stage_predictions(detection, stage: str) -> list:
    """Predictions a stage emits: hypotheses carry the provisional r, later stages the final one."""
    recs = detection.stage_handles(stage)
    if stage == "hypotheses":
        return [r.hypothesis for r in recs]
    return [r.handle for r in recs]


@dataclass
class SceneResult:
    name: str
    counts: dict
    matched: dict
    runtime_ms: float
    gt_count: int

    def precisions(self) -> dict:
        return {s: (self.matched[s] / self.counts[s] if self.counts[s] else 1.0) for s in STAGES}

    def to_dict(self, with_runtime: bool = True) -> dict:
        d = {"name": self.name, "gt_handles": self.gt_count,
             "counts": {s: self.counts[s] for s in STAGES},
             "matched": {s: self.matched[s] for s in STAGES},
             "precision": {s: round(v, 6) for s, v in self.precisions().items()}}
        if with_runtime:
            d["runtime_ms"] = round(self.runtime_ms, 1)
        return d


@dataclass
class EvalReport:
    scenes: list = field(default_factory=list)
    criteria: MatchCriteria = field(default_factory=MatchCriteria)

    def totals(self) -> tuple[dict, dict]:
        counts = {s: sum(r.counts[s] for r in self.scenes) for s in STAGES}
        matched = {s: sum(r.matched[s] for r in self.scenes) for s in STAGES}
        return counts, matched

    def stage_precision(self) -> dict:
        counts, matched = self.totals()
        return {s: (matched[s] / counts[s] if counts[s] else 1.0) for s in STAGES}

    @property
    def overall(self) -> float:
        return self.stage_precision()["overall"]

    @property
    def vacuous(self) -> bool:
        return self.totals()[0]["overall"] == 0

    def to_dict(self, with_runtime: bool = False) -> dict:
        counts, matched = self.totals()
        d = {"criteria": self.criteria.to_dict(),
             "counts": counts, "matched": matched,
             "precision": {s: round(v, 6) for s, v in self.stage_precision().items()},
             "overall_precision": round(self.overall, 6),
             "vacuous": self.vacuous,
             "scenes": [r.to_dict(with_runtime) for r in sorted(self.scenes, key=lambda r: r.name)]}
        if with_runtime:
            d["mean_runtime_ms"] = round(float(np.mean([r.runtime_ms for r in self.scenes])), 1) \
                if self.scenes else 0.0
        return d

    def to_json(self, with_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(with_runtime), indent=2, sort_keys=True) + "\n"


def evaluate_detection(name: str, detection, gt_handles, criteria: MatchCriteria,
                       runtime_ms: float = 0.0) -> SceneResult:
    counts, matched = {}, {}
    for s in STAGES:
        p = precision(stage_predictions(detection, s), gt_handles, criteria)
        counts[s], matched[s] = p.total, p.matched
    return SceneResult(name, counts, matched, runtime_ms, len(gt_handles))


def evaluate_scene(name: str, frame: Frame, gt_handles, config: DetectorConfig | None = None,
                   criteria: MatchCriteria = MatchCriteria()) -> tuple[SceneResult, object]:
    from .grasp import detect_handles

    t0 = time.perf_counter()
    det = detect_handles(frame, config=config)
    ms = (time.perf_counter() - t0) * 1000
    return evaluate_detection(name, det, gt_handles, criteria, ms), det


def evaluate_suite(suite, config: DetectorConfig | None = None,
                   criteria: MatchCriteria = MatchCriteria()) -> EvalReport:
    """``suite`` yields (name, frame, gt_handles)."""
    report = EvalReport(criteria=criteria)
    for name, frame, gt in suite:
        res, _ = evaluate_scene(name, frame, gt, config, criteria)
        report.scenes.append(res)
    return report


def load_scene_dir(path) -> tuple[str, Frame, list]:
    """Read a scene directory as written by ``synth.write_scene``."""
    from .synth import GTHandle

    path = Path(path)
    intr: Intrinsics = load_intrinsics(path / "intrinsics.json")
    frame = load_frame(path / "color.png", path / "depth.png", intr)
    gt_file = path / "ground_truth.json"
    if not gt_file.exists():
        raise EvalError(f"{path} has no ground_truth.json")
    data = json.loads(gt_file.read_text())
    gts = [GTHandle.from_dict(h) for h in data.get("handles", [])]
    return path.name, frame, gts


def iter_scene_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise EvalError(f"not a directory: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "depth.png").exists())
    if not dirs:
        raise EvalError(f"no scenes under {root}")
    for d in dirs:
        yield load_scene_dir(d)
