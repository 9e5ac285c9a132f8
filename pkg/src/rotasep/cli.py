"""Command-line front end: run simulations, exploration, planning and
separation experiments from JSON configs."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .audio import write_wav
from .aoa import run_explore
from .metrics import match_angles
from .pipeline import (
    ExperimentConfig,
    MODES,
    build_scene,
    run_experiment,
    run_orientation_sweep,
    summarize_results,
    write_results_csv,
    write_summary_json,
)
from .planner import candidate_alignments, general_alignment, order_candidates
from .scene import ArrayPose, SessionCapturer, scene_to_json


def _add_common(parser: argparse.ArgumentParser, with_mode=True):
    parser.add_argument("--config", help="JSON file with experiment settings")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--out-dir", help="directory for output artifacts")
    if with_mode:
        parser.add_argument("--mode", choices=MODES,
                            help="override the experiment mode")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", dest="overrides",
                        help="override any config field (JSON-typed value)")


def _load_config(args, forced_mode=None) -> ExperimentConfig:
    doc = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc.update(json.load(fh))
    for item in getattr(args, "overrides", []):
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            doc[key] = json.loads(raw)
        except json.JSONDecodeError:
            doc[key] = raw
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        doc["mode"] = args.mode
    if forced_mode is not None:
        doc["mode"] = forced_mode
    return ExperimentConfig.from_dict(doc)


def _out_dir(args) -> str | None:
    out = getattr(args, "out_dir", None)
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _session(config: ExperimentConfig) -> SessionCapturer:
    scene = build_scene(config)
    pose = ArrayPose(orientation_deg=config.initial_orientation_deg)
    return SessionCapturer(scene, pose,
                          rotation_time_s=config.rotation_time_s)


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    session = _session(config)
    capture = session.capture(config.dwell_s)
    doc = {
        "ok": True,
        "rate": config.rate,
        "n_samples": len(capture.ch1),
        "orientation_deg": capture.pose.orientation_deg,
        "snr_db": config.snr_db,
        "t60_ms": config.t60_ms,
    }
    if out:
        write_wav(os.path.join(out, "capture_ch1.wav"), capture.ch1)
        write_wav(os.path.join(out, "capture_ch2.wav"), capture.ch2)
        meta = [{"seed": [config.seed, 100 + i],
                 "duration_s": config.duration_s}
                for i in range(config.n_sources)]
        with open(os.path.join(out, "scene.json"), "w") as fh:
            fh.write(scene_to_json(session.scene, synth_meta=meta))
            fh.write("\n")
        doc["out_dir"] = out
    _emit(doc)
    return 0


def _cmd_explore(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    session = _session(config)
    result = run_explore(
        session, rotation_step_deg=config.rotation_step_deg,
        dwell_s=config.dwell_s, frame_len=config.explore_frame_len,
    )
    doc = result.to_dict()
    doc["true_aoas_deg"] = config.aoas_deg
    doc["aoa_errors_deg"] = [
        {"estimate_deg": result.aoas_deg[i], "true_deg": config.aoas_deg[j],
         "error_deg": err}
        for i, j, err in match_angles(result.aoas_deg, config.aoas_deg)
    ]
    doc["ok"] = True
    if out:
        with open(os.path.join(out, "explore.json"), "w") as fh:
            json.dump(doc, fh, indent=2, default=_json_default)
            fh.write("\n")
        doc["out_dir"] = out
    _emit(doc)
    return 0


def _cmd_plan(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    pose = ArrayPose(orientation_deg=config.initial_orientation_deg)
    plans = order_candidates(
        candidate_alignments(config.target_index, config.aoas_deg,
                             pose.max_itd,
                             current_orientation_deg=pose.orientation_deg),
        pose.orientation_deg,
    )
    doc = {
        "ok": True,
        "target_index": config.target_index,
        "aoas_deg": config.aoas_deg,
        "current_orientation_deg": pose.orientation_deg,
        "candidates": [p.to_dict() for p in plans],
    }
    if config.n_sources >= 3:
        best = general_alignment(
            config.target_index, config.aoas_deg,
            max_itd_s=pose.max_itd,
            current_orientation_deg=pose.orientation_deg,
        )
        doc["best"] = best.to_dict()
    if out:
        with open(os.path.join(out, "plan.json"), "w") as fh:
            json.dump(doc, fh, indent=2, default=_json_default)
            fh.write("\n")
        doc["out_dir"] = out
    _emit(doc)
    return 0


def _run_and_write(config: ExperimentConfig, out: str | None) -> dict:
    result = run_experiment(config)
    doc = result.to_dict()
    doc["ok"] = True
    if out:
        with open(os.path.join(out, "result.json"), "w") as fh:
            json.dump(doc, fh, indent=2, default=_json_default)
            fh.write("\n")
        doc["out_dir"] = out
    return doc


def _cmd_separate(args) -> int:
    config = _load_config(args)
    doc = _run_and_write(config, _out_dir(args))
    _emit(doc)
    return 0


def _cmd_ross(args) -> int:
    config = _load_config(args, forced_mode="ross")
    doc = _run_and_write(config, _out_dir(args))
    _emit(doc)
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    results = run_orientation_sweep(
        config, n_orientations=args.n_orientations,
        mode=args.sweep_mode, include_planned=not args.no_planned,
    )
    rows = [
        {
            "initial_orientation_deg": r.initial_orientation_deg,
            "si_sdr_db": r.si_sdr_db,
            "si_sdri_db": r.si_sdri_db,
            "score": r.score,
        }
        for r in results
    ]
    doc = {"ok": True, "mode": args.sweep_mode, "rows": rows}
    if not args.no_planned:
        doc["planned"] = rows[-1]
        grid = rows[:-1]
        doc["grid_median_si_sdri_db"] = float(
            np.median([r["si_sdri_db"] for r in grid])
        )
        doc["peak_orientation_deg"] = max(
            grid, key=lambda r: r["si_sdri_db"]
        )["initial_orientation_deg"]
    if out:
        write_results_csv(results, os.path.join(out, "results.csv"))
        write_summary_json(results, os.path.join(out, "summary.json"),
                           config=config)
        doc["out_dir"] = out
    _emit(doc)
    return 0


def _cmd_report(args) -> int:
    import csv as _csv
    from types import SimpleNamespace

    rows = []
    with open(args.results) as fh:
        for rec in _csv.DictReader(fh):
            rows.append(SimpleNamespace(
                mode=rec["mode"],
                t60_ms=float(rec["t60_ms"]),
                si_sdri_db=float(rec["si_sdri_db"]),
                score=float(rec["score"]) if rec["score"] else float("nan"),
                fallback=rec["fallback"] == "1",
                wall_ms=0.0,
            ))
    doc = summarize_results(rows)
    doc.pop("total_wall_ms", None)
    doc["ok"] = True
    out = _out_dir(args)
    if out:
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        doc["out_dir"] = out
    _emit(doc)
    return 0


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so failures reach the JSON error reporter
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rotasep",
        description="Rotating two-microphone array separation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate",
                       help="render one capture and save channels + scene")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("explore",
                       help="estimate all source directions by rotating")
    _add_common(p)
    p.set_defaults(func=_cmd_explore)

    p = sub.add_parser("plan",
                       help="rank alignment orientations for the target")
    _add_common(p)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("separate",
                       help="run one separation experiment (any mode)")
    _add_common(p)
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("ross",
                       help="full rotational pipeline: explore, align, "
                            "separate")
    _add_common(p, with_mode=False)
    p.set_defaults(func=_cmd_ross)

    p = sub.add_parser("sweep",
                       help="separation quality versus fixed orientation")
    _add_common(p, with_mode=False)
    p.add_argument("--n-orientations", type=int, default=12,
                   help="uniformly spaced orientations to test")
    p.add_argument("--sweep-mode", default="static_iva",
                   choices=("static_iva", "static_duet", "static_mvdr"),
                   help="static mode run at each orientation")
    p.add_argument("--no-planned", action="store_true",
                   help="skip the extra run at the planned alignment")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate a results.csv")
    p.add_argument("--results", required=True, help="path to results.csv")
    p.add_argument("--out-dir", help="directory for report.json")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except _UsageError as exc:
        json.dump({"ok": False, "error": "UsageError", "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - single reporting point
        json.dump(
            {"ok": False, "error": type(exc).__name__, "message": str(exc)},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
