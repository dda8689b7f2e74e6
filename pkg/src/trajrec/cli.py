"""Command-line pipeline driver.

Subcommands cover the full experiment loop: `gen` a synthetic dataset,
`match` raw traces, `train` a model, `recover` sparse trajectories,
`eval` predictions, run the `baseline-linear-hmm`, and export `plotdata`.
Every run writes a manifest (resolved config, seed, input/output
checksums) next to its primary output, so equal manifests imply equal
outputs.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Set TRAJREC_LOG=debug|info|warning|error for log verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics, synth
from .errors import TrajrecError, UnmatchedPointError
from .mapmatch import HmmConfig, hmm_match
from .model import RecoveryModel
from .roadnet import load_network, save_network
from .synth import SynthConfig, elevated_segment_ids
from .trajectory import (MatchedTrajectory, downsample, linear_interpolate,
                         load_matched, load_raw, save_matched, save_raw)
from .training import TrainConfig, build_samples, train

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(command: str, config: dict, seed: int,
                    inputs: list, outputs: list, primary_output) -> None:
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    path = str(primary_output) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path) -> dict[str, str]:
    """Flat key=value file; later lines win, '#' comments allowed."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrajrecError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(args: argparse.Namespace, spec: dict[str, tuple[type, object]]) -> dict:
    """Merge precedence: command-line flag > config file > default."""
    file_values = _load_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, (cast, default) in spec.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            raw = file_values[key]
            if cast is bool:
                resolved[key] = raw.lower() in ("1", "true", "yes")
            elif cast is str:
                resolved[key] = raw
            else:
                resolved[key] = cast(raw)
        else:
            resolved[key] = default
    unknown = set(file_values) - set(spec)
    if unknown:
        raise TrajrecError(f"unknown config keys: {sorted(unknown)}")
    return resolved


def _net_from_args(args):
    return load_network(args.segments, args.edges)


# -- subcommands ---------------------------------------------------------------


GEN_SPEC = {
    "nx": (int, 6), "ny": (int, 6), "block_len": (float, 250.0),
    "elevated_fraction": (float, 0.0), "diagonal_fraction": (float, 0.0),
    "speed_lo": (float, 6.0), "speed_hi": (float, 12.0),
    "noise_sigma": (float, 15.0), "interval": (float, 10.0),
    "n_points": (int, 17), "n_trajectories": (int, 50),
    "stride": (int, 8), "seed": (int, 0),
}


def cmd_gen(args) -> int:
    cfg = _resolve(args, GEN_SPEC)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scfg = SynthConfig(
        nx=cfg["nx"], ny=cfg["ny"], block_len_m=cfg["block_len"],
        elevated_fraction=cfg["elevated_fraction"],
        diagonal_fraction=cfg["diagonal_fraction"],
        speed_lo=cfg["speed_lo"], speed_hi=cfg["speed_hi"],
        gps_noise_sigma_m=cfg["noise_sigma"], interval_s=cfg["interval"],
        n_points=cfg["n_points"], n_trajectories=cfg["n_trajectories"],
        seed=cfg["seed"])
    net, elevated = synth.gen_network(scfg)
    pairs = synth.gen_trajectories(net, scfg)
    truth = {i: mt for i, (mt, _) in enumerate(pairs)}
    dense = {i: raw for i, (_, raw) in enumerate(pairs)}
    low = {i: downsample(raw, cfg["stride"]) for i, raw in dense.items()}

    seg_path, edge_path = out / "segments.txt", out / "edges.txt"
    truth_path, dense_path, low_path = out / "truth.matched", out / "dense.traj", out / "low.traj"
    save_network(net, seg_path, edge_path)
    save_matched(truth, truth_path)
    save_raw(dense, dense_path)
    save_raw(low, low_path)
    outputs = [seg_path, edge_path, truth_path, dense_path, low_path]
    _write_manifest("gen", cfg, cfg["seed"], [], outputs, seg_path)
    logger.info("generated %d segments, %d trajectories (%d elevated segments)",
                len(net), len(pairs), len(elevated))
    print(f"wrote dataset to {out} ({len(net)} segments, {len(pairs)} trajectories)")
    return 0


MATCH_SPEC = {
    "sigma_z": (float, 15.0), "beta_t": (float, 30.0),
    "candidate_radius": (float, 100.0), "max_candidates": (int, 8),
    "seed": (int, 0),
}


def cmd_match(args) -> int:
    cfg = _resolve(args, MATCH_SPEC)
    net = _net_from_args(args)
    trajs = load_raw(args.traj)
    hmm = HmmConfig(sigma_z=cfg["sigma_z"], beta_t=cfg["beta_t"],
                    candidate_radius=cfg["candidate_radius"],
                    max_candidates=cfg["max_candidates"])
    matched = {tid: hmm_match(tr, net, hmm) for tid, tr in sorted(trajs.items())}
    save_matched(matched, args.out)
    _write_manifest("match", cfg, cfg["seed"],
                    [args.segments, args.edges, args.traj], [args.out], args.out)
    print(f"matched {len(matched)} trajectories -> {args.out}")
    return 0


TRAIN_SPEC = {
    "epochs": (int, 30), "batch_size": (int, 64), "lr": (float, 1e-3),
    "seed": (int, 0), "d": (int, 64), "heads": (int, 8),
    "road_gat_depth": (int, 2), "blocks": (int, 2), "refine_depth": (int, 1),
    "delta": (float, 400.0), "gamma": (float, 30.0), "beta": (float, 15.0),
    "lambda1": (float, 10.0), "lambda2": (float, 0.1),
    "val_fraction": (float, 0.1), "ablate": (str, None),
}


def cmd_train(args) -> int:
    cfg = _resolve(args, TRAIN_SPEC)
    if cfg["ablate"] == "gcl":
        cfg["lambda2"] = 0.0
    net = _net_from_args(args)
    low = load_raw(args.low)
    truth = load_matched(args.truth)
    for tid, mt in truth.items():
        if not isinstance(mt, MatchedTrajectory):
            raise TrajrecError(f"trajectory {tid}: target is not uniformly sampled")
    samples = build_samples(net, low, truth)
    tc = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        seed=cfg["seed"], d=cfg["d"], heads=cfg["heads"],
        road_gat_depth=cfg["road_gat_depth"], blocks=cfg["blocks"],
        refine_depth=cfg["refine_depth"], receptive_radius=cfg["delta"],
        influence_scale=cfg["gamma"], mask_scale=cfg["beta"],
        lambda_rate=cfg["lambda1"], lambda_enc=cfg["lambda2"],
        ablate=cfg["ablate"], val_fraction=cfg["val_fraction"])
    log_path = args.log or (str(args.out) + ".log")
    model, history = train(samples, net, tc, log_path=log_path)
    interval = samples[0].target.interval
    model.save(args.out, extra_header={"interval_s": interval,
                                       "lambda_rate": cfg["lambda1"],
                                       "lambda_enc": cfg["lambda2"]})
    _write_manifest("train", cfg, cfg["seed"],
                    [args.segments, args.edges, args.low, args.truth],
                    [args.out, log_path], args.out)
    final = history[-1]
    print(f"trained {cfg['epochs']} epochs -> {args.out} "
          f"(val_acc={final.val_acc:.4f}, val_f1={final.val_f1:.4f})")
    return 0


def cmd_recover(args) -> int:
    net = _net_from_args(args)
    model, header = RecoveryModel.load(args.checkpoint, net)
    interval = args.interval or header.get("interval_s")
    if interval is None:
        raise TrajrecError("no interval in checkpoint header; pass --interval")
    low = load_raw(args.low)
    recovered = {tid: model.recover(tr, float(interval))
                 for tid, tr in sorted(low.items())}
    save_matched(recovered, args.out)
    _write_manifest("recover", {"interval": float(interval)},
                    header.get("seed", 0),
                    [args.segments, args.edges, args.low, args.checkpoint],
                    [args.out], args.out)
    print(f"recovered {len(recovered)} trajectories -> {args.out}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _resolve(args, MATCH_SPEC)
    net = _net_from_args(args)
    low = load_raw(args.low)
    hmm = HmmConfig(sigma_z=cfg["sigma_z"], beta_t=cfg["beta_t"],
                    candidate_radius=cfg["candidate_radius"],
                    max_candidates=cfg["max_candidates"])
    out = {}
    for tid, tr in sorted(low.items()):
        dense = linear_interpolate(tr, args.interval)
        # interpolated points may fall far from any street; widen the
        # candidate search until the whole trajectory matches
        mp = None
        last_exc: Exception | None = None
        for scale in (1.0, 2.0, 4.0):
            try:
                widened = HmmConfig(sigma_z=hmm.sigma_z, beta_t=hmm.beta_t,
                                    candidate_radius=hmm.candidate_radius * scale,
                                    max_candidates=hmm.max_candidates)
                mp = hmm_match(dense, net, widened)
                break
            except UnmatchedPointError as exc:
                last_exc = exc
        if mp is None:
            raise TrajrecError(f"trajectory {tid}: {last_exc}")
        out[tid] = MatchedTrajectory(mp.seg_ids, mp.ratios, mp.t, args.interval)
    save_matched(out, args.out)
    _write_manifest("baseline-linear-hmm", cfg, cfg["seed"],
                    [args.segments, args.edges, args.low], [args.out], args.out)
    print(f"baseline recovered {len(out)} trajectories -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    net = _net_from_args(args)
    truth = load_matched(args.truth)
    pred = load_matched(args.pred)
    missing = sorted(set(truth) - set(pred))
    if missing:
        raise TrajrecError(f"predictions missing for trajectories {missing[:5]}")
    labeled = elevated_segment_ids(net) or None
    pairs = [(tid, truth[tid], pred[tid]) for tid in sorted(truth)]
    report = metrics.evaluate(pairs, net, labeled_ids=labeled)

    kv_path = Path(str(args.out_prefix) + ".kv")
    csv_path = Path(str(args.out_prefix) + "_pertraj.csv")
    kv_path.write_text("\n".join(report.to_kv_lines()) + "\n", encoding="utf-8")
    cols = ["traj_id", "recall", "precision", "f1", "accuracy", "mae_m",
            "rmse_m", "subpath_f1"]
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.per_trajectory:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
    _write_manifest("eval", {}, 0,
                    [args.segments, args.edges, args.truth, args.pred],
                    [kv_path, csv_path], kv_path)
    print("\n".join(report.to_kv_lines()))
    return 0


def cmd_plotdata(args) -> int:
    lines = Path(args.pertraj).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("traj_id,metric,value\n")
        for line in lines[1:]:
            cells = line.split(",")
            for name, value in zip(header[1:], cells[1:]):
                fh.write(f"{cells[0]},{name},{value}\n")
    _write_manifest("plotdata", {}, 0, [args.pertraj], [args.out], args.out)
    print(f"wrote long-format plot data -> {args.out}")
    return 0


# -- argument wiring -------------------------------------------------------------


def _add_net_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--segments", required=True, help="segment file")
    p.add_argument("--edges", required=True, help="edge file")


def _add_spec_flags(p: argparse.ArgumentParser, spec: dict) -> None:
    for key, (cast, _default) in spec.items():
        flag = "--" + key.replace("_", "-")
        if cast is bool:
            p.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                           default=None)
        else:
            p.add_argument(flag, type=cast, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajrec",
        description="Road-network enhanced trajectory recovery pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key=value config file")
    _add_spec_flags(p, GEN_SPEC)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("match", help="HMM map matching of raw trajectories")
    _add_net_args(p)
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_spec_flags(p, MATCH_SPEC)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("train", help="train the recovery model")
    _add_net_args(p)
    p.add_argument("--low", required=True, help="sparse input trajectories")
    p.add_argument("--truth", required=True, help="dense matched targets")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log)")
    p.add_argument("--config")
    _add_spec_flags(p, TRAIN_SPEC)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recover", help="recover dense trajectories")
    _add_net_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--low", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--interval", type=float)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("baseline-linear-hmm",
                       help="linear interpolation + HMM baseline")
    _add_net_args(p)
    p.add_argument("--low", required=True)
    p.add_argument("--interval", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_spec_flags(p, MATCH_SPEC)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_net_args(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plotdata", help="per-trajectory CSV for plotting")
    p.add_argument("--pertraj", required=True, help="CSV written by eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("TRAJREC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrajrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
