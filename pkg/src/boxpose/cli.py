"""Command-line interface for the synthetic pipeline.

Subcommands: simulate, encode, decode, evaluate, ablate-decode,
ablate-dims, noise-sweep. Every config field is exposed as a flag and
every randomized step takes --seed.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import mapio, metrics
from .decode import STRATEGIES, DecodeConfig, decode_objects
from .geometry import CameraIntrinsics
from .labelgen import Scene, encode_scene, load_scenes, save_scenes
from .pnp import resolve_scale, solve_keypoint_lifting, solve_pnp_lm
from .decode import build_correspondences
from .simharness import (
    BUILTIN_PROFILES,
    SOLVERS,
    NOISE_PRESETS,
    NoiseConfig,
    mean_ap_over_profiles,
    gt_records_for_scenes,
    noise_preset,
    run_pipeline,
    run_suite,
    sample_scenes,
)


def _add_noise_flags(p):
    p.add_argument("--noise-preset", choices=sorted(NOISE_PRESETS), default=None)
    p.add_argument("--keypoint-jitter-px", type=float, default=0.0)
    p.add_argument("--heat-dropout", type=float, default=0.0)
    p.add_argument("--dims-sigma", type=float, default=0.0)
    p.add_argument("--center-jitter-px", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)


def _noise_from_args(args):
    if args.noise_preset is not None:
        return noise_preset(args.noise_preset, seed=args.noise_seed)
    return NoiseConfig(
        keypoint_jitter_px=args.keypoint_jitter_px,
        heat_dropout=args.heat_dropout,
        dims_sigma=args.dims_sigma,
        center_jitter_px=args.center_jitter_px,
        seed=args.noise_seed,
    )


def _add_decode_flags(p):
    p.add_argument("--strategy", choices=STRATEGIES, default="combined")
    p.add_argument("--max-detections", type=int, default=10)
    p.add_argument("--score-threshold", type=float, default=0.3)
    p.add_argument("--margin-frac", type=float, default=0.1)
    p.add_argument("--sample-count", type=int, default=20)
    p.add_argument("--decode-seed", type=int, default=0)
    p.add_argument("--distance-tau-frac", type=float, default=0.15)
    p.add_argument("--sampling-sigma-frac", type=float, default=0.05)


def _decode_cfg_from_args(args, strategy=None):
    return DecodeConfig(
        strategy=strategy or args.strategy,
        max_detections=args.max_detections,
        score_threshold=args.score_threshold,
        margin_frac=args.margin_frac,
        sample_count=args.sample_count,
        seed=args.decode_seed,
        distance_tau_frac=args.distance_tau_frac,
        sampling_sigma_frac=args.sampling_sigma_frac,
    )


def cmd_simulate(args):
    scenes = []
    for name in args.profiles:
        scenes.extend(sample_scenes(BUILTIN_PROFILES[name], args.count, args.seed))
    save_scenes(args.out, scenes)
    if args.gt_out:
        metrics.write_jsonl(args.gt_out, gt_records_for_scenes(scenes))
    print(f"wrote {len(scenes)} scenes to {args.out}")


def cmd_encode(args):
    scenes = load_scenes(args.scenes)
    os.makedirs(args.out_dir, exist_ok=True)
    for idx, scene in enumerate(scenes):
        labels = encode_scene(scene)
        prefix = os.path.join(args.out_dir, f"maps_{idx:04d}")
        tensors = dict(labels.maps.fields())
        tensors["center_mask"] = labels.center_mask
        tensors["kp_mask"] = labels.kp_mask
        mapio.save_tensors(
            prefix, tensors, meta={"scene": idx, "camera": scene.camera.to_dict()}
        )
        for msg in labels.skipped:
            print(f"warning: scene {idx}: {msg}", file=sys.stderr)
    print(f"encoded {len(scenes)} scenes into {args.out_dir}")


def cmd_decode(args):
    from .labelgen import OutputMaps

    cfg = _decode_cfg_from_args(args)
    scenes = load_scenes(args.scenes) if args.scenes else None
    prefixes = sorted(
        os.path.join(args.maps_dir, f[: -len(".json")])
        for f in os.listdir(args.maps_dir)
        if f.startswith("maps_") and f.endswith(".json")
    )
    rows = []
    for prefix in prefixes:
        tensors, meta = mapio.load_tensors(prefix)
        cam = CameraIntrinsics.from_dict(meta["camera"])
        scene_idx = int(meta["scene"])
        maps = OutputMaps(**{k: tensors[k] for k in OutputMaps.zeros(1, 1).fields()})
        detections = decode_objects(maps, cfg, cam)
        for det in detections:
            try:
                if args.solver == "lifting":
                    lift = solve_keypoint_lifting(det.kps_disp, cam)
                    result, extents, rel = lift.result, lift.implied_extents, None
                else:
                    idx, pts, wts = build_correspondences(det, cfg)
                    result = solve_pnp_lm(idx, pts, wts, det.rel_dims, cam)
                    extents, rel = det.rel_dims.as_extents(1.0), det.rel_dims
                if scenes is not None and scenes[scene_idx].objects:
                    height = scenes[scene_idx].objects[0].height
                    pose, extents = resolve_scale(result, height, extents)
                else:
                    pose = result.pose
                rows.append(metrics.pred_record(scene_idx, det.score, pose, extents, rel))
            except Exception as exc:  # keep batch alive, record nothing
                print(f"warning: scene {scene_idx}: solve failed: {exc}", file=sys.stderr)
    metrics.write_jsonl(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")


def _load_gt_rows(path):
    if path.endswith(".jsonl"):
        return metrics.read_jsonl(path)
    scenes = load_scenes(path)
    return gt_records_for_scenes(scenes)


def cmd_evaluate(args):
    pred_rows = metrics.read_jsonl(args.pred)
    gt_rows = _load_gt_rows(args.gt)
    records, num_gt, aggregates = metrics.evaluate_rows(pred_rows, gt_rows)
    report = {
        "synthetic": True,
        "num_gt": num_gt,
        "aggregates": aggregates,
        "records": [r.to_dict() for r in records],
    }
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=1, sort_keys=True)
    print(metrics.format_report_table({"all": aggregates}, title="evaluation"))


def _suite_runner(args, configs, describe):
    """Shared sweep loop: configs is [(row_name, decode_cfg, solver)]."""
    out = {}
    rows = {}
    for row_name, decode_cfg, solver in configs:
        out[row_name] = {}
        for seed in args.seeds:
            noise = replace(_noise_from_args(args), seed=seed)
            reports = run_suite(
                args.profiles, args.scenes_per_profile, seed, noise, decode_cfg, solver
            )
            entry = {
                "per_profile": {k: rep.aggregates for k, rep in reports.items()},
                "mean_ap_iou_0.5": mean_ap_over_profiles(reports),
            }
            out[row_name][f"seed_{seed}"] = entry
            rows[f"{row_name} (seed {seed})"] = _mean_row(reports)
    print(metrics.format_report_table(rows, title=describe))
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"synthetic": True, "results": out}, f, indent=1, sort_keys=True)
        print(f"report written to {args.out}")
    return out


def _mean_row(reports):
    keys = [
        "ap_iou_0.5",
        "mean_pixel_error",
        "ap_azimuth_15deg",
        "ap_elevation_10deg",
        "mean_rel_dim_error",
    ]
    row = {}
    for key in keys:
        vals = [rep.aggregates[key] for rep in reports.values() if rep.aggregates[key] is not None]
        row[key] = float(np.mean(vals)) if vals else None
    return row


def cmd_ablate_decode(args):
    configs = [
        (strategy, _decode_cfg_from_args(args, strategy=strategy), args.solver)
        for strategy in args.strategies
    ]
    _suite_runner(args, configs, describe="decode strategies")


def cmd_ablate_dims(args):
    cfg = _decode_cfg_from_args(args)
    configs = [(solver, cfg, solver) for solver in args.solvers]
    _suite_runner(args, configs, describe="dimension strategies")


def cmd_noise_sweep(args):
    cfg = _decode_cfg_from_args(args)
    out = {}
    rows = {}
    for jitter in args.jitters:
        out[f"jitter_{jitter}"] = {}
        for seed in args.seeds:
            noise = NoiseConfig(
                keypoint_jitter_px=jitter,
                heat_dropout=args.heat_dropout,
                dims_sigma=args.dims_sigma,
                center_jitter_px=args.center_jitter_px,
                seed=seed,
            )
            reports = run_suite(
                args.profiles, args.scenes_per_profile, seed, noise, cfg, args.solver
            )
            out[f"jitter_{jitter}"][f"seed_{seed}"] = {
                "per_profile": {k: rep.aggregates for k, rep in reports.items()},
                "mean_ap_iou_0.5": mean_ap_over_profiles(reports),
            }
            rows[f"jitter {jitter}px (seed {seed})"] = _mean_row(reports)
    print(metrics.format_report_table(rows, title="keypoint jitter sweep"))
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"synthetic": True, "results": out}, f, indent=1, sort_keys=True)
        print(f"report written to {args.out}")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="boxpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample synthetic scenes to JSON")
    p.add_argument("--profiles", nargs="+", choices=sorted(BUILTIN_PROFILES), default=["cereal_box"])
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-out", default=None, help="also write ground-truth JSONL records")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("encode", help="scenes -> output-map tensor files")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="output maps -> prediction records")
    p.add_argument("--maps-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", default=None, help="scene file for metric scale resolution")
    p.add_argument("--solver", choices=("lifting", "lm_estimated_dims"), default="lm_estimated_dims")
    _add_decode_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="prediction records vs ground truth -> report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="gt JSONL records or a scenes JSON file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-decode", help="sweep keypoint decoding strategies")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    p.add_argument("--solver", choices=SOLVERS, default="lm_estimated_dims")
    _sweep_flags(p)
    p.set_defaults(func=cmd_ablate_decode)

    p = sub.add_parser("ablate-dims", help="sweep pose solvers (dimension strategies)")
    p.add_argument("--solvers", nargs="+", choices=SOLVERS, default=list(SOLVERS))
    _sweep_flags(p)
    p.set_defaults(func=cmd_ablate_dims)

    p = sub.add_parser("noise-sweep", help="sweep keypoint jitter")
    p.add_argument("--jitters", nargs="+", type=float, default=[0.0, 0.5, 1.0, 2.0, 4.0])
    p.add_argument("--solver", choices=SOLVERS, default="lm_estimated_dims")
    p.add_argument("--heat-dropout", type=float, default=0.0)
    p.add_argument("--dims-sigma", type=float, default=0.0)
    p.add_argument("--center-jitter-px", type=float, default=0.0)
    p.add_argument("--profiles", nargs="+", choices=sorted(BUILTIN_PROFILES), default=sorted(BUILTIN_PROFILES))
    p.add_argument("--scenes-per-profile", type=int, default=50)
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--out", default=None)
    _add_decode_flags(p)
    p.set_defaults(func=cmd_noise_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


def _sweep_flags(p):
    p.add_argument("--profiles", nargs="+", choices=sorted(BUILTIN_PROFILES), default=sorted(BUILTIN_PROFILES))
    p.add_argument("--scenes-per-profile", type=int, default=50)
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--out", default=None)
    _add_noise_flags(p)
    _add_decode_flags(p)


if __name__ == "__main__":
    sys.exit(main())
