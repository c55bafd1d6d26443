"""Single runs, ensembles and checkpoint resume."""
from __future__ import annotations

import csv
import json
import logging
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .config import ScenarioConfig, derive_seed
from .diagnostics import (
    NO_OUTCOME,
    BornReport,
    CollapseDetector,
    CollapseOutcome,
    EnsembleResult,
    RunRecord,
    born_statistics,
)
from .errors import CheckpointError, CollapseError, ConfigError, NumericalFailure
from .scenarios import make_simulation

log = logging.getLogger(__name__)


@dataclass
class RunOutput:
    record: RunRecord
    summary: dict
    columns: list[str]
    rows: np.ndarray
    wall_time: float


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def dump_json(obj, path) -> None:
    text = json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CheckpointError(f"cannot write {path}: {exc.strerror}") from exc


def write_timeseries(columns, rows, out: Path, emit: str) -> None:
    try:
        if emit in ("csv", "both"):
            with open(out / "timeseries.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(columns)
                for r in rows:
                    w.writerow([repr(float(v)) for v in r])
        if emit in ("json", "both"):
            dump_json({"columns": list(columns), "rows": np.asarray(rows).tolist()},
                      out / "timeseries.json")
    except OSError as exc:
        raise CheckpointError(f"cannot write time series in {out}: {exc.strerror}") from exc


def _prepare_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CheckpointError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _checkpoint_header(cfg: ScenarioConfig, sim, seed: int, det: CollapseDetector,
                       meta: dict) -> dict:
    return {
        "config": cfg.to_dict(),
        "grid": {"n_points": cfg.n_points, "length": cfg.length},
        "particle_count": cfg.particles,
        "params": {"gamma_L": cfg.gamma_L, "a_L": cfg.a_L, "kernel": cfg.kernel, "s": cfg.s,
                   "variant": cfg.variant, "n_eff": cfg.n_eff},
        "time": sim.time,
        "step": sim.step,
        "seed": seed,
        "detector": {"label": det.outcome.label, "time": det.outcome.time},
        "columns": sim.columns,
        "meta": meta,
    }


def _loop(cfg: ScenarioConfig, sim, seed: int, det: CollapseDetector, rows: list,
          out: Path | None) -> None:
    total = cfg.steps
    while sim.step < total:
        sim.advance()
        step = sim.step
        if not sim.is_finite():
            log.error("non-finite values after step %d", step)
            raise NumericalFailure(f"NaN or Inf detected at step {step}", step)
        if sim.packets:
            det.update(sim.time, sim.weights())
        last = step == total or (cfg.stop_on_collapse and det.outcome.collapsed)
        if step % cfg.record_every == 0 or last:
            rows.append(sim.row())
        if last:
            break
        if out is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            amps, pos, meta = sim.to_arrays()
            write_checkpoint(out / f"checkpoint_{step:08d}.bin",
                             _checkpoint_header(cfg, sim, seed, det, meta), amps, pos,
                             np.array(rows))


def _finish(cfg: ScenarioConfig, sim, seed: int, det: CollapseDetector, rows: list,
            out: Path | None, emit: str | None, started: float) -> RunOutput:
    arr = np.array(rows, dtype=float)
    final_weights = [float(w) for w in sim.weights()]
    outcome = det.outcome
    record = RunRecord(seed, outcome.label, outcome.time, final_weights,
                       [float(v) for v in sim.initial_positions])
    sep = cfg.packet_separation()
    summary = {
        "scenario": cfg.scenario,
        "seed": seed,
        "config_sha256": cfg.source_hash,
        "steps": sim.step,
        "final_time": sim.time,
        "outcome": outcome.label,
        "collapse_time": outcome.time,
        "final_weights": final_weights,
        "initial_positions": record.initial_positions,
        "packet_separation": sep,
        "separation_over_a_L": None if sep is None else sep / cfg.a_L,
        "columns": sim.columns,
    }
    summary.update(sim.summary(arr))
    wall = _time.perf_counter() - started
    if out is not None:
        emit = emit or cfg.emit
        write_timeseries(sim.columns, arr, out, emit)
        dump_json(summary, out / "summary.json")
        dump_json({"wall_time_s": wall, "steps": sim.step}, out / "timing.json")
    return RunOutput(record, _clean(summary), sim.columns, arr, wall)


def run_single(cfg: ScenarioConfig, seed: int | None = None, out_dir=None,
               emit: str | None = None) -> RunOutput:
    """Run one trajectory; with ``out_dir`` the time series and summary are written there.

    Deterministic in ``(cfg, seed)``; wall time goes only to ``timing.json``.
    """
    started = _time.perf_counter()
    seed = cfg.seed if seed is None else seed
    out = _prepare_dir(out_dir) if out_dir is not None else None
    sim = make_simulation(cfg, seed)
    det = CollapseDetector(sim.packets, cfg.collapse_threshold) if sim.packets else None
    if det is None:
        det = _NullDetector()
    if sim.packets:
        det.update(sim.time, sim.weights())
    rows = [sim.row()]
    if not (cfg.stop_on_collapse and det.outcome.collapsed):
        _loop(cfg, sim, seed, det, rows, out)
    return _finish(cfg, sim, seed, det, rows, out, emit, started)


class _NullDetector:
    outcome = CollapseOutcome(NO_OUTCOME, None)

    def update(self, *_):
        return self.outcome


def resume(checkpoint_path, config: ScenarioConfig | None = None, out_dir=None,
           emit: str | None = None) -> RunOutput:
    """Continue a run from a checkpoint written by :func:`run_single`."""
    started = _time.perf_counter()
    ck = read_checkpoint(checkpoint_path)
    head = ck.header
    try:
        saved = ScenarioConfig.from_dict(head["config"])
        grid = head["grid"]
        seed = int(head["seed"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{checkpoint_path}: header does not describe a run ({exc})") from exc
    cfg = saved if config is None else config
    if (cfg.n_points, cfg.length) != (grid["n_points"], grid["length"]):
        raise CheckpointError(
            f"checkpoint grid has {grid['n_points']} points (length {grid['length']}), "
            f"config grid has {cfg.n_points} points (length {cfg.length})")
    if cfg.scenario != saved.scenario:
        raise CheckpointError(
            f"checkpoint is a {saved.scenario} run, config is {cfg.scenario}")
    sim = make_simulation(cfg, seed)
    if ck.amplitudes.size != sim.to_arrays()[0].size:
        raise CheckpointError(f"{checkpoint_path}: state size does not match the configuration")
    sim.load_arrays(ck.amplitudes, ck.positions, float(head["time"]), int(head["step"]),
                    head["meta"])
    if sim.packets:
        det = CollapseDetector(sim.packets, cfg.collapse_threshold)
        d = head["detector"]
        det.outcome = CollapseOutcome(d["label"], d["time"])
    else:
        det = _NullDetector()
    rows = [list(r) for r in ck.rows]
    out = _prepare_dir(out_dir if out_dir is not None else Path(checkpoint_path).parent)
    _loop(cfg, sim, seed, det, rows, out)
    return _finish(cfg, sim, seed, det, rows, out, emit, started)


# -- ensembles ----------------------------------------------------------------

def _ensemble_task(args):
    cfg_dict, index, seed = args
    cfg = ScenarioConfig.from_dict(cfg_dict)
    try:
        out = run_single(cfg, seed)
    except CollapseError as exc:
        return index, None, {"index": index, "seed": seed, "error": str(exc),
                             "step": getattr(exc, "step", None)}
    return index, out.record.to_dict(), None


@dataclass
class EnsembleOutput:
    result: EnsembleResult
    report: BornReport
    failures: list[dict]
    summary: dict


def _record_path(out: Path, index: int) -> Path:
    return out / "runs" / f"run_{index:06d}.json"


def run_ensemble(cfg: ScenarioConfig, out_dir=None, workers: int = 1,
                 emit: str | None = None) -> EnsembleOutput:
    """Run ``cfg.ensemble_size`` independent trajectories and compare with the Born weights.

    With ``out_dir`` each finished run is stored as ``runs/run_NNNNNN.json``;
    rerunning into the same directory skips those runs, so an interrupted
    ensemble resumes where it stopped. The aggregate does not depend on the
    number of workers or on completion order.
    """
    if cfg.scenario == "equilibrium_relaxation":
        raise ConfigError("scenario", "equilibrium_relaxation is itself an ensemble; use `run`")
    M = cfg.ensemble_size
    seeds = [derive_seed(cfg.seed, i, cfg.seed_mode) for i in range(M)]
    out = _prepare_dir(out_dir) if out_dir is not None else None
    if out is not None:
        _prepare_dir(out / "runs")
    records: dict[int, dict] = {}
    pending = []
    for i, s in enumerate(seeds):
        if out is not None and _record_path(out, i).exists():
            try:
                rec = json.loads(_record_path(out, i).read_text())
                if rec.get("seed") == s and rec.get("config_sha256") == cfg.source_hash:
                    records[i] = rec
                    continue
            except (OSError, ValueError):
                pass
        pending.append((cfg.to_dict(), i, s))
    failures = []

    def collect(index, rec, err):
        if err is not None:
            log.error("run %d (seed %d) failed: %s", index, err["seed"], err["error"])
            failures.append(err)
            return
        rec["config_sha256"] = cfg.source_hash
        records[index] = rec
        if out is not None:
            dump_json(rec, _record_path(out, index))

    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, rec, err in pool.map(_ensemble_task, pending,
                                            chunksize=max(1, len(pending) // (4 * workers))):
                collect(index, rec, err)
    else:
        for task in pending:
            collect(*_ensemble_task(task))
    ordered = [RunRecord.from_dict(records[i]) for i in sorted(records)]
    labels = [f"p{i}" for i in range(cfg.packet_count)]
    result = EnsembleResult(labels, ordered)
    failures.sort(key=lambda f: f["index"])
    report = born_statistics(result, cfg.weights) if ordered else None
    times = [r.collapse_time for r in ordered if r.collapse_time is not None]
    summary = {
        "scenario": cfg.scenario,
        "ensemble_size": M,
        "completed": len(ordered),
        "seed": cfg.seed,
        "seed_mode": cfg.seed_mode,
        "config_sha256": cfg.source_hash,
        "counts": result.counts(),
        "born": report.to_dict() if report else None,
        "collapse_time_mean": float(np.mean(times)) if times else None,
        "collapse_time_std": float(np.std(times)) if times else None,
        "failures": failures,
    }
    if out is not None:
        dump_json(summary, out / "ensemble.json")
        emit = emit or cfg.emit
        if emit in ("csv", "both"):
            try:
                with open(out / "ensemble_runs.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["index", "seed", "outcome", "collapse_time"]
                               + [f"w_{lab}" for lab in labels])
                    for i in sorted(records):
                        r = records[i]
                        ct = r["collapse_time"]
                        w.writerow([i, r["seed"], r["outcome"], "" if ct is None else repr(ct)]
                                   + [repr(float(v)) for v in r["final_weights"]])
            except OSError as exc:
                raise CheckpointError(f"cannot write ensemble table: {exc.strerror}") from exc
    return EnsembleOutput(result, report, failures, _clean(summary))
