"""Operator pipeline: gen-data, train, evaluate, report-flops, bench.

Every command reads an optional INI config file plus a --profile, snaps
the effective configuration into a run manifest next to its outputs, and
references every produced file by content hash.  Exit codes: 0 success,
2 bad configuration, 3 missing prerequisite, 4 incompatible inputs,
1 internal error.  Outputs are deterministic given identical inputs;
manifests differ only in their timestamps.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import complexity as cx
from . import dataset as ds
from . import detection as det
from . import training as tr
from .config import build_configs, profile_sample_counts
from .dataset import DatasetFormatError, DatasetVersionError
from .model import CheckpointError, ModelConfig, TieredModel, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_PREREQUISITE = 3
EXIT_INCOMPATIBLE = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def file_hash(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, configs, seed, inputs, outputs):
    """Content-addressed record of one command invocation."""
    manifest = {
        "command": command,
        "seed": seed,
        "config": configs,
        "inputs": {name: file_hash(p) for name, p in inputs.items()},
        "outputs": {name: file_hash(p) for name, p in outputs.items()},
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(out_dir) / f"manifest-{command}.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def manifests_equivalent(a, b):
    """Manifest equality modulo the wall-clock timestamp."""
    da = json.loads(Path(a).read_text())
    db = json.loads(Path(b).read_text())
    da.pop("created_utc", None)
    db.pop("created_utc", None)
    return da == db


def _out_dir(args):
    base = os.environ.get("SENSELAB_OUT")
    out = Path(args.out if getattr(args, "out", None) else (base or "."))
    if base and getattr(args, "out", None):
        out = Path(base) / args.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _configs_from_args(args, **kw):
    try:
        return build_configs(profile=args.profile, config_file=args.config,
                             seed=args.seed, **kw)
    except (ValueError, FileNotFoundError) as exc:
        raise CliError(f"configuration error: {exc}", EXIT_CONFIG) from exc


def cmd_gen_data(args):
    scenario, mconfig, _, _ = _configs_from_args(args)
    out = _out_dir(args)
    samples = args.samples if args.samples else profile_sample_counts(args.profile)["train"]
    planes, labels, starts = ds.generate_planes(
        scenario, samples, h_pad=mconfig.h_pad, channels=mconfig.channels)
    data_path = out / "dataset.bin"
    header = ds.save_dataset(data_path, scenario, planes, labels, starts,
                             extra={"profile": args.profile, "seed": args.seed})
    csv_path = out / "dataset-index.csv"
    ds.export_index_csv(csv_path, header, labels, starts)
    write_manifest(out, "gen-data",
                   {"scenario": scenario.to_dict(), "model": mconfig.to_dict(),
                    "profile": args.profile, "samples": samples},
                   args.seed, {}, {"dataset": data_path, "index_csv": csv_path})
    print(f"wrote {samples} samples to {data_path} "
          f"(scenario {scenario.content_hash()})")
    return EXIT_OK


def _load_dataset_or_fail(data_dir):
    path = Path(data_dir) / "dataset.bin"
    if not path.exists():
        raise CliError(f"no dataset at {path}; run gen-data first", EXIT_PREREQUISITE)
    try:
        return path, ds.load_dataset(path)
    except DatasetVersionError as exc:
        raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc
    except DatasetFormatError as exc:
        raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc


def _scenario_from_header(header):
    from .mobility import ScenarioConfig

    d = dict(header["scenario"])
    d["area"] = tuple(d["area"])
    d["sensing_fading_scale"] = tuple(d["sensing_fading_scale"])
    d["reporting_fading_scale"] = tuple(d["reporting_fading_scale"])
    return ScenarioConfig(**d)


def cmd_train(args):
    _, mconfig, tconfig, _ = _configs_from_args(args)
    if args.epochs:
        tconfig = tconfig.with_overrides(epochs=args.epochs)
    out = _out_dir(args)
    data_path, (header, planes, labels, _) = _load_dataset_or_fail(args.data)
    scenario = _scenario_from_header(header)
    if (header["lam"], header["H"], header["channels"]) != (
            mconfig.seq_len, mconfig.h_pad, mconfig.channels):
        raise CliError(
            f"dataset dims (lam={header['lam']}, H={header['H']}, "
            f"C={header['channels']}) do not fit the model config", EXIT_INCOMPATIBLE)

    ckpt_path = Path(args.ckpt) if args.ckpt else out / f"stage{args.stage}.ckpt"
    meta = {"stage": args.stage, "seed": args.seed, "profile": args.profile,
            "scenario_hash": scenario.content_hash(),
            "dataset_hash": file_hash(data_path)}

    if args.stage == 1:
        model = TieredModel(mconfig, seed=args.seed)
        try:
            report, stats = tr.train_stage1(planes, labels, model, tconfig)
        except tr.TrainingDiverged as exc:
            raise CliError(f"training diverged: {exc}", EXIT_INTERNAL) from exc
        inputs = {"dataset": data_path}
    else:
        prev = Path(args.init_ckpt) if args.init_ckpt else out / "stage1.ckpt"
        if not prev.exists():
            raise CliError(f"stage 2 needs a stage-1 checkpoint at {prev}",
                           EXIT_PREREQUISITE)
        try:
            loaded_config, params, stats, prev_header = load_checkpoint(prev, mconfig)
        except CheckpointError as exc:
            raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc
        if prev_header.get("meta", {}).get("stage") != 1:
            raise CliError(f"{prev} is not a stage-1 checkpoint", EXIT_PREREQUISITE)
        if prev_header.get("meta", {}).get("scenario_hash") != scenario.content_hash():
            raise CliError("stage-1 checkpoint was trained on a different scenario",
                           EXIT_INCOMPATIBLE)
        model = TieredModel(loaded_config, params=params)
        try:
            report = tr.train_stage2(planes, labels, model, tconfig, stats)
        except tr.TrainingDiverged as exc:
            raise CliError(f"training diverged: {exc}", EXIT_INTERNAL) from exc
        meta["stage1_checkpoint_hash"] = file_hash(prev)
        inputs = {"dataset": data_path, "stage1_checkpoint": prev}

    save_checkpoint(ckpt_path, mconfig, model.params, stats, meta=meta)
    report.checkpoint_hash = file_hash(ckpt_path)
    csv_path = out / f"train-stage{args.stage}.csv"
    json_path = out / f"train-stage{args.stage}.json"
    report.to_csv(csv_path)
    report.to_json(json_path)
    write_manifest(out, f"train-stage{args.stage}",
                   {"train": tconfig.to_dict(), "model": mconfig.to_dict()},
                   args.seed, inputs,
                   {"checkpoint": ckpt_path, "report_csv": csv_path,
                    "report_json": json_path})
    print(f"stage {args.stage} done: final loss {report.final_loss:.6f}, "
          f"checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_evaluate(args):
    _, _, _, econfig = _configs_from_args(args)
    out = _out_dir(args)
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise CliError(f"no checkpoint at {ckpt_path}", EXIT_PREREQUISITE)
    try:
        mconfig, params, stats, header = load_checkpoint(ckpt_path)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc
    if header.get("meta", {}).get("stage") != 2:
        raise CliError("evaluate needs a stage-2 checkpoint", EXIT_PREREQUISITE)
    data_path, (dheader, _, _, _) = _load_dataset_or_fail(args.data)
    if header.get("meta", {}).get("scenario_hash") != dheader["scenario_hash"]:
        raise CliError("checkpoint and dataset scenarios do not match",
                       EXIT_INCOMPATIBLE)
    scenario = _scenario_from_header(dheader)

    if args.pfa:
        econfig = econfig.with_overrides(pfa_grid=tuple(args.pfa))
    if args.n0:
        econfig = econfig.with_overrides(n0_list=tuple(args.n0))
    econfig = econfig.with_overrides(baseline_ed=(args.baseline == "ed"))

    model = TieredModel(mconfig, params=params)
    report = det.evaluate_detector(model, stats, scenario, econfig)

    csv_path = out / "detection.csv"
    json_path = out / "detection.json"
    report.to_csv(csv_path)
    report.to_json(json_path)
    outputs = {"detection_csv": csv_path, "detection_json": json_path}
    for method, n0 in report.rocs:
        roc_path = out / f"roc-{method}-n0_{n0:+.1f}.csv"
        report.roc_csv(roc_path, method, n0)
        outputs[f"roc_{method}_{n0:+.1f}"] = roc_path

    pd_table = out / "pd-vs-n0.csv"
    with open(pd_table, "w") as f:
        f.write("method,n0_dbm_per_hz,pd_at_pfa_0.09,sensing_error,accuracy,auc\n")
        for s in report.summaries:
            f.write(f"{s['method']},{s['n0_dbm_per_hz']!r},{s['pd_at_operating']!r},"
                    f"{s['sensing_error']!r},{s['accuracy']!r},{s['auc']!r}\n")
    outputs["pd_vs_n0"] = pd_table
    write_manifest(out, "evaluate", {"eval": econfig.to_dict()}, args.seed,
                   {"checkpoint": ckpt_path, "dataset": data_path}, outputs)
    for s in report.summaries:
        print(f"{s['method']:>6} @ N0={s['n0_dbm_per_hz']:8.1f} dBm/Hz: "
              f"AUC={s['auc']:.4f} Pd@0.09={s['pd_at_operating']:.4f} "
              f"err={s['sensing_error']:.4f} acc={s['accuracy']:.4f}")
    return EXIT_OK


def cmd_report_flops(args):
    _, mconfig, _, _ = _configs_from_args(args)
    out = _out_dir(args)
    breakdown = cx.count_model_flops(mconfig)
    inputs = cx.ComplexityInputs()
    print(breakdown.to_text())
    print()
    print("closed-form dominant terms (standard symbol values):")
    print(f"  cnn-lstm:            {cx.complexity_cnn_lstm(inputs):,} "
          f"(reference total {cx.REFERENCE_BASELINE_TOTALS['cnn_lstm']:,})")
    print(f"  3d-cnn:              {cx.complexity_3dcnn(inputs):,} "
          f"(reference total {cx.REFERENCE_BASELINE_TOTALS['cnn_3d']:,})")
    print(f"  two-tier transformer: {cx.complexity_two_tier(inputs):,} "
          f"(reference total {cx.REFERENCE_TOTAL_FLOPS:,})")
    csv_path = out / "flops.csv"
    breakdown.to_csv(csv_path)
    write_manifest(out, "report-flops", {"model": mconfig.to_dict()}, args.seed,
                   {}, {"flops_csv": csv_path})
    return EXIT_OK


def cmd_bench(args):
    scenario, mconfig, _, _ = _configs_from_args(args)
    out = _out_dir(args)
    if args.ckpt:
        try:
            mconfig, params, stats, _ = load_checkpoint(Path(args.ckpt))
        except CheckpointError as exc:
            raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc
        model = TieredModel(mconfig, params=params)
    else:
        model = TieredModel(mconfig, seed=args.seed)
        stats = {"mean": [0.0] * mconfig.channels, "std": [1.0] * mconfig.channels}
    result = cx.bench_inference(model, stats, scenario, repetitions=args.reps)
    payload = result.to_dict()
    payload["evacuation_bound_ms"] = cx.EVACUATION_BOUND_MS
    bench_path = out / "bench.json"
    with open(bench_path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"preprocess: median {result.preprocess_median_ms:.3f} ms "
          f"(p95 {result.preprocess_p95_ms:.3f})")
    print(f"inference:  median {result.inference_median_ms:.3f} ms "
          f"(p95 {result.inference_p95_ms:.3f})")
    verdict = "PASS" if result.meets_evacuation_bound else "FAIL"
    print(f"2000 ms evacuation bound: {verdict}"
          + (" [low confidence: single repetition]" if result.low_confidence else ""))
    write_manifest(out, "bench", {"model": mconfig.to_dict(), "reps": args.reps},
                   args.seed, {}, {"bench_json": bench_path})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="senselab",
        description="cooperative spectrum sensing lab: simulate, train, "
                    "calibrate, evaluate, benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--profile", default="desk", choices=("desk", "paper"))
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("gen-data", help="simulate a labeled dataset container")
    common(p)
    p.add_argument("--samples", type=int, default=None,
                   help="sample count (default: profile's train size)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train stage 1 (per-SU) or stage 2 (fusion)")
    common(p)
    p.add_argument("--stage", type=int, required=True, choices=(1, 2))
    p.add_argument("--data", required=True, help="directory with dataset.bin")
    p.add_argument("--ckpt", default=None, help="checkpoint output path")
    p.add_argument("--init-ckpt", default=None,
                   help="stage-1 checkpoint to start stage 2 from")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="calibrate thresholds and score detectors")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pfa", type=float, nargs="*", default=None,
                   help="target false-alarm grid (default 0.01..0.30)")
    p.add_argument("--n0", type=float, nargs="*", default=None,
                   help="noise power densities in dBm/Hz")
    p.add_argument("--baseline", default="ed", choices=("ed", "none"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report-flops", help="per-layer FLOPs and parameter table")
    common(p)
    p.set_defaults(func=cmd_report_flops)

    p = sub.add_parser("bench", help="per-sample latency microbenchmark")
    common(p)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
