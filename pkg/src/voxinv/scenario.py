"""Experiment pipeline: forward solve, measurement, filtering, inversion, fusion.

Each scenario holds one or more configurations (a source paired with receiver
blocks). Configurations are independent until fusion. Every stage writes its
products under the output directory::

    config.cfg                 effective scenario
    truth_k.csv                ground truth on the truth grid
    runs/<name>/u_forward.csv  total field in the box (truth grid)
    runs/<name>/J_forward.csv  current (truth grid)
    runs/<name>/measurements.csv, .meta
    runs/<name>/J_rec.csv
    runs/<name>/reconstruction.csv, .diag
    fused/reconstruction.csv, .diag, J_rec.csv   (two or more configurations)
    slices/k_slice_<i3>.csv    final reconstruction, one file per x3 layer
    report.json                metrics and diagnostics (deterministic)
    timings.json               wall times per stage
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .config import RunConfig, ScenarioConfig, load
from .forward import (
    ComplexVoxelField,
    ForwardSolution,
    RefractiveField,
    current_from_solution,
    solve_forward,
    write_voxel_csv,
)
from .geometry import Grid
from .inverse import (
    FirstKindSystem,
    NothingToRefine,
    Reconstruction,
    adaptive_refine,
    assemble_first_kind,
    filter_measurements,
    invert,
    rotation_fuse,
    write_reconstruction,
)
from .measurement import MeasurementSet, corrupt_outliers, read_measurements, synthesize, write_measurements


class StageError(RuntimeError):
    """A pipeline stage failed; ``original`` holds the underlying exception."""

    def __init__(self, stage: str, run: Optional[str], original: BaseException):
        where = f"{stage}" if run is None else f"{stage} [{run}]"
        super().__init__(f"{where}: {type(original).__name__}: {original}")
        self.stage, self.run, self.original = stage, run, original


class _Stage:
    """Times a stage and relabels its failures."""

    def __init__(self, name, run, timings):
        self.name, self.run, self.timings = name, run, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, self.run, exc) from exc
        return False


@dataclass
class Simulation:
    """Forward products and data for one configuration."""

    run: RunConfig
    source: np.ndarray
    solution: Optional[ForwardSolution]
    J_forward: Optional[ComplexVoxelField]
    measurements: Optional[MeasurementSet] = None
    outlier_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    timings: Dict[str, float] = field(default_factory=dict)


@dataclass
class RunReport:
    name: str
    grid: Grid
    output_dir: Path
    runs: Dict[str, dict] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)
    fused_path: Optional[str] = None
    timings: Dict[str, Dict[str, float]] = field(default_factory=dict)
    rounds: List[dict] = field(default_factory=list)
    stopped: Optional[str] = None
    final: Optional[Reconstruction] = None
    reconstructions: Dict[str, Reconstruction] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "grid": {"a": self.grid.box.a.tolist(), "b": self.grid.box.b.tolist(), "n": list(self.grid.n)},
            "runs": self.runs,
            "metrics": self.metrics,
            "fused_path": self.fused_path,
        }
        if self.rounds:
            out["rounds"] = self.rounds
            out["stopped"] = self.stopped
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _as_config(config: Union[str, Path, ScenarioConfig]) -> ScenarioConfig:
    return config if isinstance(config, ScenarioConfig) else load(config)


# ground truth and metrics -------------------------------------------------------


def truth_field(cfg: ScenarioConfig, grid: Optional[Grid] = None) -> RefractiveField:
    """Ground truth rasterised on ``grid`` (default: the truth grid) by voxel centers."""
    g = cfg.truth_grid if grid is None else grid
    return RefractiveField.from_inclusions(g, cfg.k0, [(i.lo, i.hi, i.k) for i in cfg.inclusions])


def contrast_scale(cfg: ScenarioConfig) -> float:
    """Smallest inclusion contrast ``|k - k0|``; ``0.1 |k0|`` without inclusions."""
    if not cfg.inclusions:
        return 0.1 * abs(cfg.k0)
    return min(abs(complex(i.k) - cfg.k0) for i in cfg.inclusions)


def reconstruction_metrics(cfg: ScenarioConfig, rec: Reconstruction, region=None) -> Dict[str, float]:
    """Errors of ``rec`` against the declared truth sampled at its voxel centers.

    ``artifact_count`` counts trusted background voxels that deviate from
    ``k0`` by more than half the smallest inclusion contrast. ``region`` is an
    optional box restricting the voxels that enter the error averages.
    """
    k_true = truth_field(cfg, rec.grid).values
    sel = rec.mask.copy()
    if region is not None:
        sel &= region.contains(rec.grid.centers(), closed=True)
    rel = np.abs(rec.k_rec.values - k_true) / np.abs(k_true)
    background = k_true == complex(cfg.k0)
    artifacts = rec.mask & background & (np.abs(rec.k_rec.values - cfg.k0) > 0.5 * contrast_scale(cfg))
    return {
        "max_rel_err_k": float(rel[sel].max()) if sel.any() else float("nan"),
        "mean_rel_err_k": float(rel[sel].mean()) if sel.any() else float("nan"),
        "artifact_count": int(np.count_nonzero(artifacts)),
        "masked_count": rec.masked_count,
        "voxels": int(np.count_nonzero(sel)),
    }


# stages ------------------------------------------------------------------------------


def _noise_for(cfg: ScenarioConfig, index: int):
    # configurations draw independent noise: seed offset by position in the run list
    return None if cfg.noise is None else replace(cfg.noise, seed=cfg.noise.seed + index)


def simulate_run(cfg: ScenarioConfig, run: RunConfig, index: int, truth: RefractiveField,
                 measure: bool = True) -> Simulation:
    timings: Dict[str, float] = {}
    with _Stage("forward", run.name, timings):
        src = cfg.source_point(run)
        sol = solve_forward(truth, cfg.k0, src, cfg.quadrature)
        J = current_from_solution(sol.u_in, truth, cfg.k0)
    sim = Simulation(run, src, sol, J, timings=timings)
    if measure:
        with _Stage("measure", run.name, timings):
            receivers = cfg.receiver_array(run)
            meas = synthesize(truth, cfg.k0, src, receivers, cfg.quadrature, _noise_for(cfg, index), sol)
            if cfg.outliers is not None and cfg.outliers.fraction > 0:
                meas, idx = corrupt_outliers(meas, cfg.outliers.fraction, cfg.outliers.scale,
                                             cfg.outliers.seed + index)
                sim.outlier_idx = idx
            sim.measurements = meas
    return sim


def invert_run(cfg: ScenarioConfig, run: RunConfig, meas: MeasurementSet,
               system: Optional[FirstKindSystem] = None, timings: Optional[dict] = None,
               filter_enabled: Optional[bool] = None) -> Reconstruction:
    """First-kind solve and recovery of ``k`` for one configuration, with optional filtering."""
    timings = {} if timings is None else timings
    grid = cfg.grid
    if system is None:
        with _Stage("assemble", run.name, timings):
            system = assemble_first_kind(grid, cfg.k0, meas.receivers, cfg.quadrature)
    enabled = cfg.filter.enabled if filter_enabled is None else filter_enabled
    with _Stage("invert", run.name, timings):
        used, sys_used = meas, system
        if enabled:
            if cfg.filter.order == "before":
                reference = MeasurementSet.from_total(meas.source, cfg.k0, meas.receivers, meas.u_incident)
            else:
                first = invert(system, meas, cfg.regularization, cfg.quadrature, cfg.guard_eps)
                predicted = system.B @ first.J_rec.values + meas.u_incident
                reference = MeasurementSet.from_total(meas.source, cfg.k0, meas.receivers, predicted)
            used = filter_measurements(meas, reference, cfg.filter.max_rel_dev, cfg.filter.max_rough,
                                       min_receivers=grid.size)
            sys_used = system.restrict(used.receivers)
        rec = invert(sys_used, used, cfg.regularization, cfg.quadrature, cfg.guard_eps)
        rec.diagnostics["receivers_used"] = len(used)
        rec.diagnostics["receivers_removed"] = len(meas) - len(used)
    return rec


# writers -----------------------------------------------------------------------------


def _write_slices(cfg: ScenarioConfig, rec: Reconstruction, outdir: Path) -> List[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    grid = rec.grid
    k = rec.k_rec.as_array()
    kt = truth_field(cfg, grid).as_array()
    masked = (~rec.mask).reshape(grid.n)
    centers = grid.centers().reshape(*grid.n, 3)
    paths = []
    width = max(3, len(str(grid.n[2] - 1)))
    for i3 in range(grid.n[2]):
        path = outdir / f"k_slice_{i3:0{width}d}.csv"
        lines = ["i1,i2,x1,x2,x3,re_k,im_k,re_true,im_true,masked"]
        for i1 in range(grid.n[0]):
            for i2 in range(grid.n[1]):
                c = centers[i1, i2, i3]
                v, t = k[i1, i2, i3], kt[i1, i2, i3]
                lines.append(",".join([str(i1), str(i2)] + ["{:.17g}".format(x) for x in
                                       (c[0], c[1], c[2], v.real, v.imag, t.real, t.imag)]
                                      + [str(int(masked[i1, i2, i3]))]))
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def _run_dir(out: Path, run: RunConfig) -> Path:
    d = out / "runs" / run.name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_forward(out: Path, sim: Simulation):
    d = _run_dir(out, sim.run)
    write_voxel_csv(sim.solution.u_in, d / "u_forward.csv")
    write_voxel_csv(sim.J_forward, d / "J_forward.csv")
    if sim.measurements is not None:
        write_measurements(sim.measurements, d / "measurements.csv")
        if sim.outlier_idx.size:
            (d / "outliers.txt").write_text("".join(f"{i}\n" for i in sim.outlier_idx))


def _prepare_output(cfg: ScenarioConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps())
    return out


def _map(cfg: ScenarioConfig, fn, items):
    if cfg.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# entry points ----------------------------------------------------------------------------


def run_forward(config, measure: bool = False) -> List[Simulation]:
    """Forward solves (and, with ``measure``, synthetic data) for every configuration."""
    cfg = _as_config(config)
    out = _prepare_output(cfg)
    timings: Dict[str, float] = {}
    with _Stage("truth", None, timings):
        truth = truth_field(cfg)
        write_voxel_csv(truth, out / "truth_k.csv")
    sims = _map(cfg, lambda p: simulate_run(cfg, p[1], p[0], truth, measure), list(enumerate(cfg.runs)))
    for sim in sims:
        _write_forward(out, sim)
    return sims


def run_measure(config) -> List[Simulation]:
    return run_forward(config, measure=True)


def load_measurements(cfg: ScenarioConfig) -> Dict[str, MeasurementSet]:
    """Measurement sets written by an earlier ``measure`` step, keyed by configuration."""
    out = Path(cfg.output_dir)
    data = {}
    for run in cfg.runs:
        path = out / "runs" / run.name / "measurements.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run the measure step first")
        data[run.name] = read_measurements(path, cfg.receiver_array(run))
    return data


def reconstruct(cfg: ScenarioConfig, data: Dict[str, MeasurementSet], timings=None) -> RunReport:
    """Invert every configuration's data, fuse, and write reconstructions and the report."""
    out = _prepare_output(cfg)
    timings = {} if timings is None else timings
    report = RunReport(cfg.name, cfg.grid, out, timings=timings)

    def one(run):
        t = timings.setdefault(run.name, {})
        return invert_run(cfg, run, data[run.name], timings=t)

    recs = _map(cfg, one, list(cfg.runs))
    for run, rec in zip(cfg.runs, recs):
        d = _run_dir(out, run)
        write_voxel_csv(rec.J_rec, d / "J_rec.csv")
        write_reconstruction(rec, d / "reconstruction.csv")
        report.reconstructions[run.name] = rec
        report.runs[run.name] = {
            "source": run.source,
            "receivers": list(run.receivers),
            "diagnostics": dict(rec.diagnostics),
            "metrics": reconstruction_metrics(cfg, rec),
        }
    final = recs[0]
    if cfg.fusion and len(recs) >= 2:
        t = timings.setdefault("fused", {})
        with _Stage("fuse", None, t):
            final = rotation_fuse(recs)
        d = out / "fused"
        d.mkdir(exist_ok=True)
        write_voxel_csv(final.J_rec, d / "J_rec.csv")
        path, _ = write_reconstruction(final, d / "reconstruction.csv")
        report.fused_path = str(path.relative_to(out))
    report.final = final
    report.metrics = reconstruction_metrics(cfg, final)
    _write_slices(cfg, final, out / "slices")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps(_jsonable(timings), indent=2, sort_keys=True) + "\n")
    return report


def run_invert(config) -> RunReport:
    """Inversion from measurement files already present in the output directory."""
    cfg = _as_config(config)
    return reconstruct(cfg, load_measurements(cfg))


def run_scenario(config) -> RunReport:
    """Full pipeline for a scenario file or :class:`ScenarioConfig`."""
    cfg = _as_config(config)
    sims = run_forward(cfg, measure=True)
    timings = {s.run.name: dict(s.timings) for s in sims}
    report = reconstruct(cfg, {s.run.name: s.measurements for s in sims}, timings)
    for s in sims:
        entry = report.runs[s.run.name]
        entry["forward"] = {"residual": s.solution.residual, "cond_estimate": s.solution.cond_estimate}
        if s.outlier_idx.size:
            entry["outliers"] = [int(i) for i in s.outlier_idx]
    (report.output_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (report.output_dir / "timings.json").write_text(json.dumps(_jsonable(timings), indent=2, sort_keys=True) + "\n")
    return report


def run_refinement_loop(config, max_rounds: int = 2) -> RunReport:
    """Alternate :func:`run_scenario` and adaptive refinement.

    Round ``r`` writes to ``<output_dir>/round_<r>``. Each round records the
    refinement it proposes and the error of its own reconstruction inside
    the proposed box, so that consecutive rounds can be compared on the same
    region. Stops on nothing-to-refine or after ``max_rounds``.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    cfg = _as_config(config)
    base = Path(cfg.output_dir)
    current = cfg
    loop = RunReport(cfg.name, cfg.grid, base)
    loop.stopped = "max-rounds"
    for r in range(1, max_rounds + 1):
        current = current.with_output_dir(base / f"round_{r}")
        rep = run_scenario(current)
        entry = {"round": r, "grid": rep.to_dict()["grid"], "metrics": rep.metrics, "proposal": None}
        loop.timings[f"round_{r}"] = rep.timings
        loop.final, loop.metrics, loop.runs = rep.final, rep.metrics, rep.runs
        try:
            nxt = adaptive_refine(current, rep.final, current.refine.threshold)
        except NothingToRefine:
            loop.rounds.append(entry)
            loop.stopped = "nothing-to-refine"
            break
        entry["proposal"] = {
            "a": nxt.box.a.tolist(),
            "b": nxt.box.b.tolist(),
            "n": list(nxt.n),
            "region_metrics": reconstruction_metrics(current, rep.final, region=nxt.box),
        }
        loop.rounds.append(entry)
        current = nxt
    base.mkdir(parents=True, exist_ok=True)
    (base / "loop_report.json").write_text(json.dumps(loop.to_dict(), indent=2, sort_keys=True) + "\n")
    return loop
