"""Seeded ablation benchmark over synthetic scenarios.

The grid crosses target selection (RM random vertices, AM
uncertainty-driven with reach checks) with belief updating (CS
closest-sample re-flagging, SF offset-plus-pose fusion) over a sweep of
measurement counts. Every cell of every scenario draws from its own
seed stream, so results are reproducible bit for bit from the config
alone and independent of worker scheduling. Reports carry no clocks;
wall time goes to a separate sidecar so repeated runs stay
byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .belief import EstimatorConfig, ml_joints
from .body import (
    JOINT_NAMES,
    PoseParams,
    REPORTED_JOINTS,
    ShapeParams,
    default_body,
    regress_joints,
    skin_mesh,
)
from .kinematics import lidar_cart_chain, touch_probe_chain
from .metrics import mpjpe, pa_mpjpe
from .planner import run_acquisition, run_camera_phase
from .scenario import Scenario, ScenarioConfig, make_scenario

SCHEMA_VERSION = "proximesh-bench/1"

# Cell order fixes the row sort and the seed derivation; never reorder.
METHODS = ("RM+CS", "RM+SF", "AM+CS", "AM+SF")

# Stream tags keeping the camera phase and the per-cell draws apart.
_CAMERA_STREAM = 1
_CELL_STREAM = 2

_METRIC_COLUMNS = ("mpjpe", "pa_mpjpe") + REPORTED_JOINTS
_CSV_COLUMNS = ("scenario", "family", "method", "n") + _METRIC_COLUMNS


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent benchmark configs."""


@dataclass(frozen=True)
class BenchConfig:
    """Resolved benchmark parameters.

    Attributes:
        seed: root seed of every random draw in the run.
        scenarios: number of ground-truth bodies.
        n_points: measurement-count sweep.
        jobs: worker processes; results never depend on this.
        lidar: whether the range-sensor sweep seeds the measurements.
        touch_sigma: per-axis touch noise std, m.
        lidar_sigma: radial range noise std, m.
        fusion_iters: per-update iteration budget of the pose fusion.
        fusion_tol: per-sample loss-drop threshold ending an update.
        scenario: ground-truth prior parameters.
        estimator: camera-estimator noise model; noise levels are the
            estimator defaults, with a reduced sample count so a full
            sweep stays inside a single-core time box.
    """

    seed: int = 0
    scenarios: int = 50
    n_points: tuple = (3, 5, 10, 30)
    jobs: int = 1
    lidar: bool = True
    touch_sigma: float = 0.02
    lidar_sigma: float = 0.01
    fusion_iters: int = 12
    fusion_tol: float = 1e-3
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    estimator: EstimatorConfig = field(
        default_factory=lambda: EstimatorConfig(n_samples=32))


def _coerce_section(cls, data, label):
    if not isinstance(data, dict):
        raise ConfigError(f"{label} section must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown {label} keys: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {label} values: {exc}") from exc


def config_from_mapping(data: dict) -> BenchConfig:
    """Builds a BenchConfig from a parsed mapping, rejecting unknowns."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    scenario = _coerce_section(ScenarioConfig, data.pop("scenario", {}),
                               "scenario")
    estimator = _coerce_section(EstimatorConfig, data.pop("estimator", {}),
                                "estimator")
    if "n_points" in data:
        points = data["n_points"]
        if not isinstance(points, (list, tuple)) \
                or not all(isinstance(n, int) and n >= 0 for n in points):
            raise ConfigError("n_points must be a list of counts")
        data["n_points"] = tuple(points)
    config = _coerce_section(BenchConfig,
                             {**data, "scenario": {}, "estimator": {}},
                             "config")
    return replace(config, scenario=scenario, estimator=estimator)


def load_config(path) -> BenchConfig:
    """Reads a JSON config file; any field may be omitted."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_mapping(data)


def scenario_truth(scenario: Scenario, skeleton, template) -> np.ndarray:
    """(J, 3) world joint positions of a scenario's ground truth."""
    local = skin_mesh(skeleton, template, PoseParams(scenario.theta),
                      ShapeParams(scenario.beta))
    return regress_joints(local, template, scenario.pose)


def _evaluate(belief, skeleton, template, gt_joints: np.ndarray) -> dict:
    estimate = ml_joints(belief, skeleton, template)
    row = {
        "mpjpe": mpjpe(estimate, gt_joints),
        "pa_mpjpe": pa_mpjpe(estimate, gt_joints),
    }
    for name in REPORTED_JOINTS:
        j = JOINT_NAMES.index(name)
        row[name] = float(1000.0 * np.linalg.norm(estimate[j] - gt_joints[j]))
    return row


def run_scenario_cells(config: BenchConfig, index: int, skeleton,
                       template) -> tuple:
    """All ablation rows of one scenario.

    The camera phase runs once and is shared by every cell; each
    (method, n) cell then draws from its own stream. A failing cell is
    recorded and skipped, never fatal.

    Returns:
        (rows, failures) lists of dicts.
    """
    scenario = make_scenario(config.seed, index, config.scenario)
    gt_joints = scenario_truth(scenario, skeleton, template)
    phase = run_camera_phase(
        skeleton, template, scenario.theta, scenario.beta, scenario.pose,
        initial_index=scenario.initial_viewpoint,
        seed=[config.seed, index, _CAMERA_STREAM],
        config=config.estimator)
    touch_chain = touch_probe_chain()
    lidar_chain = lidar_cart_chain() if config.lidar else None
    fusion_options = {"max_iters": config.fusion_iters,
                      "tol": config.fusion_tol}

    rows, failures = [], []
    for mi, method in enumerate(METHODS):
        for n in config.n_points:
            seed = [config.seed, index, _CELL_STREAM, mi, n]
            try:
                result = run_acquisition(
                    phase, skeleton, template, scenario.theta, scenario.beta,
                    scenario.pose, n_steps=n, active=method.startswith("AM"),
                    fuse=method.endswith("SF"), seed=seed,
                    touch_chain=touch_chain, lidar_chain=lidar_chain,
                    touch_sigma=config.touch_sigma,
                    lidar_sigma=config.lidar_sigma,
                    fusion_options=fusion_options)
                row = {"scenario": index, "family": scenario.family,
                       "method": method, "n": n}
                row.update(_evaluate(result.belief, skeleton, template,
                                     gt_joints))
                rows.append(row)
            except Exception as exc:
                failures.append({"scenario": index, "method": method,
                                 "n": n, "error": f"{type(exc).__name__}: {exc}"})
    return rows, failures


_WORKER_BODY = None


def _worker_body():
    global _WORKER_BODY
    if _WORKER_BODY is None:
        _WORKER_BODY = default_body()
    return _WORKER_BODY


def _scenario_worker(args) -> tuple:
    config, index = args
    skeleton, template = _worker_body()
    return run_scenario_cells(config, index, skeleton, template)


@dataclass
class BenchReport:
    """Outcome of one ablation run.

    Attributes:
        summary: schema-versioned aggregate document, clock-free.
        rows: per-cell metric rows in canonical order.
        runtime_seconds: wall time, reported only via the sidecar.
    """

    summary: dict
    rows: list
    runtime_seconds: float


def _aggregate(rows: list, config: BenchConfig) -> dict:
    cells = {}
    for method in METHODS:
        per_n = {}
        for n in config.n_points:
            group = [r for r in rows
                     if r["method"] == method and r["n"] == n]
            entry = {"count": len(group)}
            for column in _METRIC_COLUMNS:
                entry[column] = float(np.mean([r[column] for r in group])) \
                    if group else None
            per_n[str(n)] = entry
        cells[method] = per_n
    return cells


def run_ablation(config: BenchConfig) -> BenchReport:
    """Runs the full grid and aggregates the rows.

    Scenario order, worker count and completion order never affect the
    output: rows are re-sorted into (scenario, method, n) order before
    aggregation.
    """
    start = time.perf_counter()
    tasks = [(config, i) for i in range(config.scenarios)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(_scenario_worker, tasks))
    else:
        outcomes = [_scenario_worker(task) for task in tasks]

    rows, failures = [], []
    for scenario_rows, scenario_failures in outcomes:
        rows.extend(scenario_rows)
        failures.extend(scenario_failures)
    order = {method: i for i, method in enumerate(METHODS)}
    rows.sort(key=lambda r: (r["scenario"], order[r["method"]], r["n"]))
    failures.sort(key=lambda r: (r["scenario"], order[r["method"]], r["n"]))

    for row in rows:
        if row["pa_mpjpe"] > row["mpjpe"] + 1e-9:
            raise RuntimeError(
                f"aligned error exceeds raw error in {row}")

    # The worker count is an execution detail, not a result determinant;
    # keeping it out of the document makes reports byte-identical across
    # parallelism degrees.
    config_doc = asdict(config)
    del config_doc["jobs"]
    summary = {
        "schema": SCHEMA_VERSION,
        "config": config_doc,
        "cells": _aggregate(rows, config),
        "failures": failures,
    }
    return BenchReport(summary, rows, time.perf_counter() - start)


def render_table(rows: list) -> str:
    """Flat delimiter-separated table of the per-cell rows."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(("schema", SCHEMA_VERSION))
    writer.writerow(_CSV_COLUMNS)
    for row in rows:
        writer.writerow([row[c] for c in _CSV_COLUMNS])
    return buffer.getvalue()


def render_summary(summary: dict) -> str:
    """Canonical JSON text of the summary document."""
    return json.dumps(summary, indent=2) + "\n"


def write_report(report: BenchReport, out_dir) -> dict:
    """Writes summary, table and the runtime sidecar.

    Returns:
        {"summary": path, "table": path, "runtime": path}; only the
        sidecar contains timing, keeping the reports reproducible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out_dir / "summary.json",
        "table": out_dir / "table.csv",
        "runtime": out_dir / "runtime.json",
    }
    paths["summary"].write_text(render_summary(report.summary))
    paths["table"].write_text(render_table(report.rows))
    paths["runtime"].write_text(json.dumps(
        {"runtime_seconds": report.runtime_seconds}) + "\n")
    return paths
