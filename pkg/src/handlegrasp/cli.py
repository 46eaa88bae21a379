"""Command-line entry point: detect, synth, eval and viz subcommands."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, DetectorConfig, load_config, load_gripper
from .evaluation import (STAGES, EvalError, EvalReport, MatchCriteria, evaluate_detection,
                         iter_scene_dirs, stage_predictions)
from .frame_io import Frame, FrameError, load_frame, load_intrinsics, load_pcd
from .ranking import CostWeights, rank
from .synth import SceneError, render, standard_specs, write_scene

EXIT_OK = 0
EXIT_INPUT = 2


class InputError(ValueError):
    pass


def _r6(v) -> list:
    return [round(float(x), 6) for x in np.ravel(v)]


def handle_record(rh) -> dict:
    """JSON form of one ranked handle."""
    h = rh.handle
    hyp = h.hypothesis
    return {
        "center": _r6(hyp.c), "n": _r6(hyp.n), "a": _r6(hyp.a), "f": _r6(hyp.f),
        "r": round(float(hyp.r), 6),
        "gaps": [round(float(hyp.gap_plus), 6), round(float(hyp.gap_minus), 6)],
        "lines": [{"p0": _r6(ln.p0), "u": _r6(ln.u)} for ln in (h.line_plus, h.line_minus)],
        "features": {"a_b": round(rh.a_b, 6), "a_axis": round(rh.a_axis, 6), "c_z": round(rh.c_z, 6)},
        "f_c": round(rh.f_c, 6),
        "rank": rh.rank,
        "stage_flags": dict(h.stage_flags),
        "key": list(h.key),
    }


def handles_document(frame_id: str, ranked) -> dict:
    return {"frame_id": frame_id, "handles": [handle_record(rh) for rh in ranked]}


def _write_json(path, obj) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> DetectorConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else DetectorConfig()
    if getattr(args, "gripper", None):
        cfg = DetectorConfig.from_dict({**cfg.to_dict(), "gripper": load_gripper(args.gripper)})
    return cfg


def _load_input_frame(args) -> tuple[Frame, str]:
    if args.pcd:
        intr = load_intrinsics(args.intrinsics) if args.intrinsics else None
        return load_pcd(args.pcd, intr), Path(args.pcd).stem
    if not (args.color and args.depth and args.intrinsics):
        raise InputError("detect needs --pcd or all of --color, --depth, --intrinsics")
    frame = load_frame(args.color, args.depth, load_intrinsics(args.intrinsics))
    color = Path(args.color)
    frame_id = color.resolve().parent.name if color.stem == "color" else color.stem
    return frame, frame_id


def _load_frame_arg(path) -> Frame:
    """A scene directory (color.png, depth.png, intrinsics.json) or an organized .pcd."""
    p = Path(path)
    if p.is_dir():
        return load_frame(p / "color.png", p / "depth.png", load_intrinsics(p / "intrinsics.json"))
    if p.suffix.lower() == ".pcd":
        return load_pcd(p)
    raise InputError(f"--frame must be a scene directory or a .pcd file: {path}")


def cmd_detect(args) -> int:
    from .grasp import detect_handles
    from .viz import detection_overlay, save_rgb

    cfg = _config(args)
    frame, frame_id = _load_input_frame(args)
    if args.frame_id:
        frame_id = args.frame_id
    t0 = time.perf_counter()
    det = detect_handles(frame, config=cfg)
    ranked = rank(det.handles, CostWeights(*cfg.weights), cfg.top_k)
    ms = (time.perf_counter() - t0) * 1000
    _write_json(args.out, handles_document(frame_id, ranked))
    if args.overlay:
        save_rgb(detection_overlay(det, ranked), args.overlay)
    print(f"{frame_id}: {len(det.handles)} handles ({len(ranked)} written) in {ms:.0f} ms")
    return EXIT_OK


def cmd_synth(args) -> int:
    specs = standard_specs(args.sigma)
    if not args.suite:
        if not args.scene:
            raise InputError("synth needs --suite or at least one --scene")
        names = {s.name for s in specs}
        missing = sorted(set(args.scene) - names)
        if missing:
            raise InputError(f"unknown scenes: {missing}")
        specs = [s for s in specs if s.name in set(args.scene)]
    out = Path(args.out_dir)
    for i, spec in enumerate(specs):
        frame, gt = render(spec)
        d = write_scene(out / f"{i + 1:02d}_{spec.name}", spec, frame, gt)
        print(f"wrote {d}")
    return EXIT_OK


def _predictions_doc(name: str, det) -> dict:
    """Per-stage predicted geometry, enough for an external re-match."""
    stages = {}
    for s in STAGES:
        items = []
        for p in stage_predictions(det, s):
            hyp = getattr(p, "hypothesis", p)
            items.append({"center": _r6(hyp.c), "a": _r6(hyp.a), "r": round(float(hyp.r), 6)})
        stages[s] = items
    return {"scene": name, "stages": stages}


def cmd_eval(args) -> int:
    from .grasp import detect_handles

    cfg = _config(args)
    criteria = MatchCriteria()
    if args.criteria:
        try:
            criteria = MatchCriteria.from_dict(json.loads(Path(args.criteria).read_text()))
        except (OSError, json.JSONDecodeError, ValueError) as exc:
            raise InputError(f"bad criteria file {args.criteria}: {exc}") from exc
    report = EvalReport(criteria=criteria)
    for name, frame, gts in iter_scene_dirs(args.scenes_dir):
        t0 = time.perf_counter()
        det = detect_handles(frame, config=cfg)
        ms = (time.perf_counter() - t0) * 1000
        res = evaluate_detection(name, det, gts, criteria, ms)
        report.scenes.append(res)
        if args.predictions_dir:
            _write_json(Path(args.predictions_dir) / f"{name}.json", _predictions_doc(name, det))
        print(f"{name:32s} " + " ".join(f"{s}={res.matched[s]}/{res.counts[s]}" for s in STAGES)
              + f"  {ms:.0f} ms" + ("" if res.counts["overall"] else "  (vacuous)"))
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(report.to_json())
    if args.timings:
        _write_json(args.timings, {r.name: round(r.runtime_ms, 1) for r in report.scenes})
    sp = report.stage_precision()
    print("precision " + " ".join(f"{s}={sp[s]:.3f}" for s in STAGES))
    return EXIT_OK


def cmd_viz(args) -> int:
    from .viz import handles_overlay, save_rgb

    frame = _load_frame_arg(args.frame)
    try:
        doc = json.loads(Path(args.handles).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read handles {args.handles}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("handles"), list):
        raise InputError("handles file must hold {frame_id, handles: [...]}")
    save_rgb(handles_overlay(frame, doc), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handlegrasp", description="Single-view handle grasp detection.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="detect and rank handles in one RGB-D frame")
    d.add_argument("--color")
    d.add_argument("--depth")
    d.add_argument("--intrinsics")
    d.add_argument("--pcd", help="organized ASCII PCD instead of color/depth PNGs")
    d.add_argument("--gripper", help="JSON with l, t, w, d in metres")
    d.add_argument("--config", help="JSON detector config")
    d.add_argument("--out", required=True, help="handles.json")
    d.add_argument("--overlay", help="debug overlay PNG")
    d.add_argument("--frame-id")
    d.set_defaults(func=cmd_detect)

    s = sub.add_parser("synth", help="render synthetic scenes with ground truth")
    s.add_argument("--suite", action="store_true", help="all standard scenes")
    s.add_argument("--scene", action="append", help="scene name (repeatable)")
    s.add_argument("--sigma", type=float, default=0.0015, help="depth noise std (m)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="precision against ground truth for a directory of scenes")
    e.add_argument("--scenes-dir", required=True)
    e.add_argument("--criteria", help="JSON with center_m, axis_deg, width_tol")
    e.add_argument("--config", help="JSON detector config")
    e.add_argument("--gripper", help="JSON with l, t, w, d in metres")
    e.add_argument("--report", required=True)
    e.add_argument("--predictions-dir", help="write per-scene stage predictions here")
    e.add_argument("--timings", help="write per-scene runtimes (ms) here")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="overlay handles.json on a frame")
    v.add_argument("--frame", required=True, help="scene directory or .pcd")
    v.add_argument("--handles", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InputError, FrameError, ConfigError, EvalError, SceneError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
