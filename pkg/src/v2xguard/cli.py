"""
Command line front end.

    v2xguard simulate --config cfg.json --out run/train --seed 100
    v2xguard train    --config cfg.json --out run/train
    v2xguard simulate --config cfg.json --out run/test --seed 1
    v2xguard detect   --config cfg.json --out run/test --model run/train/model.json
    v2xguard evaluate --out run/eval run/test/abnormality_communication.csv

Exit codes: 0 normal, 2 abnormality detected (detect only), 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import load_config
from .errdyn import COMMUNICATION, MODALITIES
from .errors import ConfigError, StreamError, V2XGuardError
from .evalkit import detection_summary, roc
from .immjpf import write_snapshots
from .radio import read_graph_stream, write_graph_stream
from .scenario import Scenario, load_trajectories, write_trajectories
from .sentinel import AbnormalitySeries
from .vocabulary import load_model, save_model

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABNORMAL = 2

TRAJECTORY = "trajectory.csv"
SCENARIO_JSON = "scenario.json"
GRAPHS_CLEAN = "graphs_clean.jsonl"
GRAPHS_JAMMED = "graphs_jammed.jsonl"
MODEL = "model.json"
SNAPSHOTS = "snapshots.jsonl"


class UsageError(V2XGuardError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> dict:
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else None
    return load_config(args.config, overrides)


def _load_scenario(path: Path, cfg: dict) -> Scenario:
    json_path = path.with_name(SCENARIO_JSON)
    if path.name == TRAJECTORY and json_path.exists():
        return Scenario.load(json_path)
    sc = cfg["scenario"]
    return load_trajectories(path, dt=sc["dt"], bs_position=tuple(sc["bs_position"]))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    scenario, streams, jammer = pipeline.simulate(cfg)
    out = _out_dir(args, cfg)
    write_trajectories(scenario, out / TRAJECTORY)
    scenario.save(out / SCENARIO_JSON)
    write_graph_stream(streams.clean, out / GRAPHS_CLEAN)
    write_graph_stream(streams.observed, out / GRAPHS_JAMMED, streams.truth)
    meta = {"seed": cfg["seed"], "n_vehicles": scenario.n_vehicles, "n_frames": scenario.n_frames,
            "jammer": None if jammer is None else {"position": list(jammer.position), "power_dbm": jammer.power_dbm,
                                                   "windows": [list(w) for w in jammer.attack_windows],
                                                   "mode": jammer.mode}}
    (out / "simulation.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"simulated {scenario.n_vehicles} vehicles x {scenario.n_frames} frames -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    traj = Path(args.trajectory) if args.trajectory else out / TRAJECTORY
    graphs_path = Path(args.graphs) if args.graphs else out / GRAPHS_CLEAN
    try:
        scenario = _load_scenario(traj, cfg)
    except V2XGuardError as exc:
        raise type(exc)(f"train: loading trajectory: {exc}") from exc
    try:
        graphs, _ = read_graph_stream(graphs_path)
    except V2XGuardError as exc:
        raise type(exc)(f"train: loading graphs: {exc}") from exc
    try:
        bundle = pipeline.train(scenario, graphs, cfg)
    except V2XGuardError as exc:
        raise type(exc)(f"train: {exc}") from exc
    model_path = Path(args.model) if args.model else out / MODEL
    save_model(bundle, model_path)
    cal = bundle.calibration
    print(f"model -> {model_path}: {len(bundle.pos.letters)}/{len(bundle.comm.letters)} letters, "
          f"{bundle.pos.n_words}/{bundle.comm.n_words} words (positional/communication); "
          f"xi = {cal['positional']['threshold']:.4f} / {cal['communication']['threshold']:.4f}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    if not args.model:
        raise UsageError("detect needs --model")
    bundle = load_model(args.model)
    out = _out_dir(args, cfg)
    traj = Path(args.trajectory) if args.trajectory else out / TRAJECTORY
    graphs_path = Path(args.graphs) if args.graphs else out / GRAPHS_JAMMED
    scenario = _load_scenario(traj, cfg)
    graphs, truth = read_graph_stream(graphs_path)
    if len(graphs) != scenario.n_frames:
        raise StreamError(f"{graphs_path} has {len(graphs)} frames, {traj} has {scenario.n_frames}")
    series, snaps = pipeline.detect(bundle, scenario.positions, graphs, truth)
    for modality, s in series.items():
        s.to_csv(out / f"abnormality_{modality}.csv")
    write_snapshots(snaps, out / SNAPSHOTS)
    for modality in MODALITIES:
        s = series[modality]
        print(f"{modality:>13}: {s.n_alarms} H1 frame(s) of {len(s.values)}, xi = {s.threshold:.4f}")
    return EXIT_ABNORMAL if series[COMMUNICATION].n_alarms else EXIT_OK


def cmd_evaluate(args) -> int:
    if not args.series:
        raise UsageError("evaluate needs at least one abnormality CSV")
    cfg = _config(args)
    out = _out_dir(args, cfg)
    rows = []
    used = set()
    for path in args.series:
        s = AbnormalitySeries.from_csv(path)
        if s.attack_truth is None:
            raise ConfigError(f"{path}: series has no truth column; cannot evaluate")
        name = Path(path).stem
        if name in used:
            name = f"{Path(path).parent.name}_{name}"
        used.add(name)
        curve = roc(s.values, s.attack_truth)
        curve.to_csv(out / f"roc_{name}.csv")
        curve.to_json(out / f"roc_{name}.json")
        summ = detection_summary(s)
        rows.append((name, curve.auc, curve.best_tpr_at(0.05), summ))
    aggregate = {name: {"auc": auc, "tpr_at_fpr_0.05": tpr5, **summ} for name, auc, tpr5, summ in rows}
    (out / "summary.json").write_text(json.dumps(aggregate, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"{'series':<40} {'AUC':>6} {'TPR@5%':>7} {'TPR':>6} {'FPR':>6} {'prec':>6} {'latency':>8}")
    for name, auc, tpr5, s in rows:
        print(f"{name:<40} {auc:6.3f} {tpr5:7.3f} {s['tpr']:6.3f} {s['fpr']:6.3f} "
              f"{s['precision']:6.3f} {s['detection_latency_frames']:8.1f}")
    if len(rows) > 1:
        print(f"{'mean':<40} {np.mean([r[1] for r in rows]):6.3f} {np.mean([r[2] for r in rows]):7.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="v2xguard", description="V2X jamming detection via coupled world models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON config (defaults are built in)")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--model", help="model file path")
        return p

    p = common(sub.add_parser("simulate", help="generate a scenario plus clean and jammed graph streams"))
    p.set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("train", help="learn dictionaries, transitions and thresholds"))
    p.add_argument("--trajectory", help="trajectory CSV (default: <out>/trajectory.csv)")
    p.add_argument("--graphs", help="clean graph stream (default: <out>/graphs_clean.jsonl)")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("detect", help="score a test stream; exit 2 if any frame is abnormal"))
    p.add_argument("--trajectory", help="trajectory CSV (default: <out>/trajectory.csv)")
    p.add_argument("--graphs", help="observed graph stream (default: <out>/graphs_jammed.jsonl)")
    p.set_defaults(func=cmd_detect)
    p = common(sub.add_parser("evaluate", help="ROC and summary table for abnormality CSVs"))
    p.add_argument("series", nargs="*", help="abnormality CSV files with a truth column")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"v2xguard: usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(f"v2xguard: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_ERROR
    except (V2XGuardError, OSError) as exc:
        print(f"v2xguard: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
