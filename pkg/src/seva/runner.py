"""Experiment execution and artifacts.

One cell = one (method, seed) pair on the shared world/model/stream derived
from the master seed, so cells are paired comparisons. Each cell writes a
JSONL trace (deterministic bytes: no wall-clock fields), and every grid
writes one CSV summary. The resolved config is emitted next to the
artifacts; re-running it reproduces the traces byte for byte.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapt import AdaptEngine, MethodConfig, RunTrace, run_stream
from .config import RunConfig, canonical_json, config_hash
from .model import ToyNetwork, build_network
from .oracle import BoundGapReport, bound_sweep
from .rng import derive_seed, substream
from .scenarios import (
    InfeasibleWorldError,
    SelectionScore,
    World,
    fit_head,
    generate_stream,
    make_world,
    selection_f1,
)

__all__ = [
    "CellResult",
    "SUMMARY_COLUMNS",
    "TIMING_COLUMNS",
    "ABLATION_COLUMNS",
    "build_world_and_model",
    "run_cell",
    "execute_run",
    "execute_verify_bounds",
    "execute_ablate",
    "execute_time",
    "TIMING_ROSTER",
    "ablation_cells",
    "SIGMA_SCALE_SWEEP",
    "RHO_SWEEP",
]

TRACE_SCHEMA_VERSION = 1

SUMMARY_COLUMNS = [
    "method",
    "kind",
    "seed",
    "n_samples",
    "batch_size",
    "accuracy",
    "clean_accuracy",
    "mean_loss",
    "n_selected",
    "n_updates",
    "selection_precision",
    "selection_recall",
    "selection_f1",
    "n_forward",
    "n_backward",
    "n_optimizer_steps",
    "n_calibration_forward",
    "config_hash",
    "calib_wall_time",
    "stream_wall_time",
]

ABLATION_COLUMNS = ["cell", "param", "value", "seed", "accuracy", "selection_f1", "n_selected"]

TIMING_COLUMNS = [
    "method",
    "rounds",
    "accuracy",
    "n_forward",
    "n_backward",
    "n_optimizer_steps",
    "total_wall_time",
    "mean_step_ms",
]

# Component-ablation grid and hyperparameter sweep axes.
SIGMA_SCALE_SWEEP = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
RHO_SWEEP = [0.5, 0.75, 1.0, 1.25, 1.5]


@dataclass
class CellResult:
    name: str
    method: MethodConfig
    seed: int
    trace: RunTrace
    selection: SelectionScore
    clean_accuracy: float
    counters: dict
    calib_wall_time: float
    config_hash: str

    @property
    def accuracy(self) -> float:
        return self.trace.accuracy

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.trace.concat("losses")))

    @property
    def n_selected(self) -> int:
        return int(self.trace.concat("selected").sum())


def build_world_and_model(cfg: RunConfig) -> tuple[World, ToyNetwork, float]:
    """World + network + fitted head, deterministic per master seed.

    Retries with a fresh world substream until the fitted head reaches the
    clean-accuracy floor; raises InfeasibleWorldError when retries run out.
    """
    w = cfg.world
    nw = cfg.network
    hf = nw["head_fit"]
    clean_acc = 0.0
    for attempt in range(cfg.max_world_retries):
        world = make_world(
            seed=derive_seed(cfg.master_seed, "world", attempt),
            C=w["n_classes"],
            d_in=w["d_in"],
            within_scale=w["within_scale"],
            proto_scale=w["proto_scale"],
            min_separation=w["min_separation"],
            max_retries=w["max_retries"],
            cluster_size=w["cluster_size"],
            cluster_spread=w["cluster_spread"],
        )
        net = build_network(
            seed=derive_seed(cfg.master_seed, "network"),
            d_in=w["d_in"],
            d=nw["feature_dim"],
            C=w["n_classes"],
            n_layers=nw["n_layers"],
            groups=nw["groups"],
            activation=nw["activation"],
        )
        head, clean_acc = fit_head(
            net,
            world,
            seed=derive_seed(cfg.master_seed, "head-fit", attempt),
            n_train_per_class=hf["n_train_per_class"],
            n_eval_per_class=hf["n_eval_per_class"],
            refine_steps=hf["refine_steps"],
            lr=hf["lr"],
            momentum=hf["momentum"],
            weight_decay=hf["weight_decay"],
        )
        if clean_acc >= cfg.min_clean_accuracy:
            net.head = head
            return world, net, clean_acc
    raise InfeasibleWorldError(
        f"could not reach clean accuracy {cfg.min_clean_accuracy} in "
        f"{cfg.max_world_retries} world attempts (best attempt ended at {clean_acc:.3f})"
    )


def run_cell(cfg: RunConfig, name: str, method: MethodConfig, run_seed: int) -> CellResult:
    """Execute one (method, seed) cell end to end."""
    world, net, clean_acc = build_world_and_model(cfg)
    spec = cfg.stream_spec(seed=derive_seed(cfg.master_seed, "stream", run_seed))
    stream = generate_stream(world, spec)
    engine = AdaptEngine(
        net,
        method,
        seed=derive_seed(cfg.master_seed, "engine", run_seed, name),
    )
    calib_wall = 0.0
    if method.needs_sigma:
        inputs = np.concatenate([b.inputs for b in stream])
        n_calib = min(cfg.calibration_samples, inputs.shape[0])
        t0 = time.perf_counter()
        engine.calibrate(inputs[:n_calib])
        calib_wall = time.perf_counter() - t0
    trace = run_stream(engine, stream)
    score = selection_f1(trace)
    counters = {
        "n_forward": engine.counters.n_forward,
        "n_backward": engine.counters.n_backward,
        "n_optimizer_steps": engine.counters.n_optimizer_steps,
        "n_calibration_forward": engine.counters.n_calibration_forward,
    }
    return CellResult(
        name=name,
        method=method,
        seed=run_seed,
        trace=trace,
        selection=score,
        clean_accuracy=clean_acc,
        counters=counters,
        calib_wall_time=calib_wall,
        config_hash=config_hash(cfg),
    )


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def trace_lines(result: CellResult, cfg: RunConfig) -> list[str]:
    """Deterministic JSONL records for one cell (no wall-clock fields)."""
    header = {
        "record": "header",
        "schema": TRACE_SCHEMA_VERSION,
        "config_hash": result.config_hash,
        "method": result.name,
        "kind": result.method.kind,
        "seed": result.seed,
        "batch_size": cfg.tree["stream"]["batch_size"],
        "n_batches": cfg.tree["stream"]["n_batches"],
        "clean_accuracy": result.clean_accuracy,
    }
    lines = [_json_line(header)]
    for i, (step, labels) in enumerate(zip(result.trace.steps, result.trace.labels)):
        lines.append(
            _json_line(
                {
                    "record": "step",
                    "step": i,
                    "losses": [float(v) for v in step.losses],
                    "selected": [bool(v) for v in step.selected],
                    "predicted": [int(v) for v in step.predicted],
                    "confidence": [float(v) for v in step.confidence],
                    "labels": [int(v) for v in labels],
                    "n_selected": step.n_selected,
                    "updated": step.updated,
                }
            )
        )
    lines.append(
        _json_line(
            {
                "record": "summary",
                "accuracy": result.accuracy,
                "mean_loss": result.mean_loss,
                "n_selected": result.n_selected,
                "n_updates": sum(1 for s in result.trace.steps if s.updated),
                "selection_precision": result.selection.precision,
                "selection_recall": result.selection.recall,
                "selection_f1": result.selection.f1,
            }
        )
    )
    return lines


def write_trace(result: CellResult, cfg: RunConfig, path: Path) -> None:
    path.write_text("\n".join(trace_lines(result, cfg)) + "\n", encoding="utf-8")


def summary_row(result: CellResult, cfg: RunConfig) -> dict:
    spec_tree = cfg.tree["stream"]
    return {
        "method": result.name,
        "kind": result.method.kind,
        "seed": result.seed,
        "n_samples": spec_tree["batch_size"] * spec_tree["n_batches"],
        "batch_size": spec_tree["batch_size"],
        "accuracy": result.accuracy,
        "clean_accuracy": result.clean_accuracy,
        "mean_loss": result.mean_loss,
        "n_selected": result.n_selected,
        "n_updates": sum(1 for s in result.trace.steps if s.updated),
        "selection_precision": result.selection.precision,
        "selection_recall": result.selection.recall,
        "selection_f1": result.selection.f1,
        "n_forward": result.counters["n_forward"],
        "n_backward": result.counters["n_backward"],
        "n_optimizer_steps": result.counters["n_optimizer_steps"],
        "n_calibration_forward": result.counters["n_calibration_forward"],
        "config_hash": result.config_hash,
        "calib_wall_time": result.calib_wall_time,
        "stream_wall_time": result.trace.wall_time,
    }


def write_csv(rows: list[dict], columns: list[str], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_resolved_config(cfg: RunConfig, out: Path) -> Path:
    path = out / "resolved_config.json"
    path.write_text(json.dumps(cfg.tree, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def execute_run(cfg: RunConfig, out_dir: str | Path) -> dict:
    """All (method x seed) cells; one JSONL trace per cell plus one summary CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    rows = []
    trace_paths = []
    for name, method in cfg.methods():
        for seed in cfg.seeds:
            result = run_cell(cfg, name, method, seed)
            path = out / f"trace_{name}_seed{seed}.jsonl"
            write_trace(result, cfg, path)
            trace_paths.append(path)
            rows.append(summary_row(result, cfg))
    summary_path = out / "summary.csv"
    write_csv(rows, SUMMARY_COLUMNS, summary_path)
    return {"summary": summary_path, "traces": trace_paths, "rows": rows}


def format_bound_report(i: int, report: BoundGapReport) -> str:
    status = "ok" if report.satisfied else "VIOLATED"
    return (
        f"instance {i:02d}: l_ae={report.l_ae:.6f} "
        f"mc={report.mc.mean:.6f}+-{report.mc.stderr:.6f} "
        f"(n={report.mc.n_samples}) gap={report.gap:+.6f} {status}"
    )


def execute_verify_bounds(cfg: RunConfig, fast: bool = False) -> tuple[list[BoundGapReport], bool]:
    mc = cfg.mc
    n_samples = mc["fast_n_samples"] if fast else mc["n_samples"]
    reports = bound_sweep(
        mc["seed"],
        n_instances=mc["n_instances"],
        n_samples=n_samples,
        c_max=mc["c_max"],
        d_max=mc["d_max"],
        sigma_scale=mc["sigma_scale"],
    )
    return reports, all(r.satisfied for r in reports)


def _seva_template(cfg: RunConfig) -> MethodConfig:
    for _, method in cfg.methods():
        if method.kind == "seva":
            return method
    # fall back to defaults with the first method's optimizer settings
    first = cfg.methods()[0][1]
    return MethodConfig(kind="seva", lr=first.lr, momentum=first.momentum)


def ablation_cells(cfg: RunConfig) -> list[tuple[str, MethodConfig]]:
    """The 4-cell component grid: entropy, +selection, +augmented loss, +both."""
    t = _seva_template(cfg)
    common = dict(lr=t.lr, momentum=t.momentum, sigma_scale=t.sigma_scale)
    return [
        ("entropy", MethodConfig(kind="tent", **common)),
        ("selection", MethodConfig(kind="entropy_select", threshold_rho=t.threshold_rho, **common)),
        ("l_ae", MethodConfig(kind="seva", threshold_rho=float("inf"), **common)),
        ("selection_l_ae", MethodConfig(kind="seva", threshold_rho=t.threshold_rho, **common)),
    ]


def execute_ablate(cfg: RunConfig, out_dir: str | Path, sweep: str = "components") -> list[dict]:
    """Component grid or hyperparameter sweep, every cell on paired streams."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    t = _seva_template(cfg)
    if sweep == "components":
        cells = [(name, "cell", name, m) for name, m in ablation_cells(cfg)]
        csv_name = "ablation.csv"
    elif sweep == "sigma_scale":
        cells = [
            (f"sigma_scale_{v:g}", "sigma_scale", v,
             MethodConfig(kind="seva", threshold_rho=t.threshold_rho, sigma_scale=v,
                          lr=t.lr, momentum=t.momentum))
            for v in SIGMA_SCALE_SWEEP
        ]
        csv_name = "sweep_sigma_scale.csv"
    elif sweep == "rho":
        cells = [
            (f"rho_{v:g}", "rho", v,
             MethodConfig(kind="seva", threshold_rho=v, sigma_scale=t.sigma_scale,
                          lr=t.lr, momentum=t.momentum))
            for v in RHO_SWEEP
        ]
        csv_name = "sweep_rho.csv"
    else:
        raise ValueError(f"unknown sweep '{sweep}'")
    rows = []
    for name, param, value, method in cells:
        for seed in cfg.seeds:
            result = run_cell(cfg, name, method, seed)
            rows.append(
                {
                    "cell": name,
                    "param": param,
                    "value": value,
                    "seed": seed,
                    "accuracy": result.accuracy,
                    "selection_f1": result.selection.f1,
                    "n_selected": result.n_selected,
                }
            )
    write_csv(rows, ABLATION_COLUMNS, out / csv_name)
    return rows


TIMING_ROSTER = [
    ("no_adapt", 1),
    ("tent", 1),
    ("entropy_select", 1),
    ("seva", 1),
    ("explicit_va_5", 5),
    ("explicit_va_7", 7),
]


def execute_time(cfg: RunConfig, out_dir: str | Path) -> list[dict]:
    """Wall time and work counters for the fixed method roster on one stream."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    t = _seva_template(cfg)
    seed = cfg.seeds[0]
    rows = []
    for name, rounds in TIMING_ROSTER:
        kind = "explicit_va" if name.startswith("explicit_va") else name
        method = MethodConfig(
            kind=kind,
            threshold_rho=t.threshold_rho,
            sigma_scale=t.sigma_scale,
            lr=t.lr,
            momentum=t.momentum,
            rounds=rounds,
        )
        result = run_cell(cfg, name, method, seed)
        steps = result.trace.steps
        rows.append(
            {
                "method": name,
                "rounds": rounds if kind == "explicit_va" else 0,
                "accuracy": result.accuracy,
                "n_forward": result.counters["n_forward"],
                "n_backward": result.counters["n_backward"],
                "n_optimizer_steps": result.counters["n_optimizer_steps"],
                "total_wall_time": sum(s.step_wall_time for s in steps),
                "mean_step_ms": 1000.0 * float(np.mean([s.step_wall_time for s in steps])),
            }
        )
    write_csv(rows, TIMING_COLUMNS, out / "timing.csv")
    return rows
