"""Monte-Carlo campaigns: scenarios, repeated runs, divergence filtering, metrics."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bp import AGENT, ANCHOR, Aperture, BpConfig, run_loopy_bp
from .channel import synthesize_all_pairs
from .geometry import SPEED_OF_LIGHT, STATE_DIM, ApertureState, ArrayConfig

log = logging.getLogger(__name__)

RUN_COLUMNS = ["run_id", "diverged", "p", "agent_id", "pos_err_m", "ori_err_rad", "clk_err_m"]
AGGREGATE_COLUMNS = ["p", "agent_id", "rmse_pos_m", "rmse_ori_rad", "rmse_clk_m",
                     "n_runs", "divergence_rate"]
ERROR_KINDS = ("pos", "ori", "clk")


class ConfigError(ValueError):
    """Scenario file is malformed or violates an invariant."""


@dataclass
class ScenarioConfig:
    apertures: list[Aperture]
    array: ArrayConfig
    snr_db: float = 10.0
    bp: BpConfig = field(default_factory=BpConfig)
    n_runs: int = 20
    master_seed: int = 0
    divergence_threshold_m: float = 0.20

    def __post_init__(self):
        ids = [ap.id for ap in self.apertures]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"aperture ids must be unique, got {ids}")
        roles = {ap.role for ap in self.apertures}
        if ANCHOR not in roles or AGENT not in roles:
            raise ConfigError("need at least one anchor and one agent")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not math.isfinite(self.snr_db) and self.snr_db != math.inf:
            raise ConfigError(f"invalid snr_db {self.snr_db!r}")
        if not self.divergence_threshold_m > 0:
            raise ConfigError("divergence_threshold_m must be positive")
        pos = np.array([ap.state.position for ap in self.apertures])
        for i in range(len(pos)):
            for k in range(i + 1, len(pos)):
                if np.array_equal(pos[i], pos[k]):
                    raise ConfigError(f"apertures {ids[i]} and {ids[k]} share a position")

    @property
    def agents(self) -> list[Aperture]:
        return [ap for ap in self.apertures if ap.role == AGENT]

    @property
    def states(self) -> list[ApertureState]:
        return [ap.state for ap in self.apertures]


def default_scenario() -> ScenarioConfig:
    """Four 4x4 URAs at 6.175 GHz, 10 bins over 500 MHz; anchors 1, 4 and agents 2, 3."""
    array = ArrayConfig.ura(n_freqs=10, bandwidth=500e6, carrier=6.175e9, n_y=4, n_z=4)
    positions = np.array([[0.0, 0.0, 1.0], [4.0, 0.5, 1.5], [4.2, 4.0, 0.8], [0.3, 3.8, 1.8]])
    centroid = positions.mean(axis=0)
    # each aperture looks roughly at the centroid, with a twist so none is exactly aligned
    yaw_twist = [0.15, -0.2, 0.1, -0.1]
    pitch = [0.05, -0.1, 0.12, -0.05]
    roll = [0.1, -0.15, 0.2, 0.05]
    clock_m = [0.0, 0.30, -0.25, 0.10]
    roles = [ANCHOR, AGENT, AGENT, ANCHOR]
    half_width = np.array([2.5, 2.5, 1.0, 1.2, 0.6, 0.8, 0.87])
    box_shift = {
        2: np.array([0.5, -0.4, 0.2, 0.2, -0.1, 0.15, 0.2]),
        3: np.array([-0.4, 0.5, -0.2, -0.15, 0.1, -0.2, -0.25]),
    }
    apertures = []
    for k, pos in enumerate(positions):
        d = centroid - pos
        yaw = math.atan2(d[1], d[0]) + yaw_twist[k]
        state = ApertureState(pos, [yaw, pitch[k], roll[k]], clock_m[k])
        ap_id = k + 1
        if roles[k] == AGENT:
            center = state.to_vector() + box_shift[ap_id]
            apertures.append(Aperture(ap_id, AGENT, state, center - half_width, center + half_width))
        else:
            apertures.append(Aperture(ap_id, ANCHOR, state))
    return ScenarioConfig(apertures, array, snr_db=10.0,
                          bp=BpConfig(n_particles=10000, n_iterations=50),
                          n_runs=10000, master_seed=2025)


# -- config files ----------------------------------------------------------

def _bounds_to_dict(lo, hi, c):
    return {
        "position_m": {"lower": lo[:3].tolist(), "upper": hi[:3].tolist()},
        "orientation_rad": {"lower": lo[3:6].tolist(), "upper": hi[3:6].tolist()},
        "clock_offset_s": {"lower": lo[6] / c, "upper": hi[6] / c},
    }


def _bounds_from_dict(d, c):
    try:
        lo = np.concatenate([d["position_m"]["lower"], d["orientation_rad"]["lower"],
                             [d["clock_offset_s"]["lower"] * c]]).astype(float)
        hi = np.concatenate([d["position_m"]["upper"], d["orientation_rad"]["upper"],
                             [d["clock_offset_s"]["upper"] * c]]).astype(float)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed bounds: {exc}") from exc
    if lo.shape != (STATE_DIM,) or hi.shape != (STATE_DIM,):
        raise ConfigError("bounds must give 3 position, 3 orientation and 1 clock entry")
    return lo, hi


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    c = cfg.array.propagation_speed
    aps = []
    for ap in cfg.apertures:
        d = {
            "id": ap.id,
            "role": ap.role,
            "position_m": ap.state.position.tolist(),
            "orientation_rad": ap.state.orientation.tolist(),
            "clock_offset_s": ap.state.clock_offset_m / c,
        }
        if ap.role == AGENT:
            d["bounds"] = _bounds_to_dict(ap.lower, ap.upper, c)
        aps.append(d)
    return {
        "array": {
            "freqs_hz": cfg.array.freqs.tolist(),
            "pos_y_m": cfg.array.pos_y.tolist(),
            "pos_z_m": cfg.array.pos_z.tolist(),
            "wavelength_m": cfg.array.wavelength,
            "propagation_speed_mps": c,
        },
        "apertures": aps,
        "snr_db": cfg.snr_db,
        "bp": asdict(cfg.bp),
        "n_runs": cfg.n_runs,
        "master_seed": cfg.master_seed,
        "divergence_threshold_m": cfg.divergence_threshold_m,
    }


def _array_from_dict(d) -> ArrayConfig:
    if "ura" in d:
        u = d["ura"]
        return ArrayConfig.ura(u["n_freqs"], u["bandwidth_hz"], u["carrier_hz"], u["n_y"], u["n_z"],
                               u.get("spacing_wavelengths", 0.5),
                               u.get("propagation_speed_mps", SPEED_OF_LIGHT))
    return ArrayConfig(d["freqs_hz"], d["pos_y_m"], d["pos_z_m"], d["wavelength_m"],
                       d.get("propagation_speed_mps", SPEED_OF_LIGHT))


def scenario_from_dict(d: dict) -> ScenarioConfig:
    try:
        array = _array_from_dict(d["array"])
        c = array.propagation_speed
        aps = []
        for a in d["apertures"]:
            state = ApertureState(a["position_m"], a["orientation_rad"], a.get("clock_offset_s", 0.0) * c)
            if a["role"] == AGENT:
                if "bounds" not in a:
                    raise ConfigError(f"agent {a['id']} has no bounds")
                lo, hi = _bounds_from_dict(a["bounds"], c)
                aps.append(Aperture(int(a["id"]), AGENT, state, lo, hi))
            else:
                aps.append(Aperture(int(a["id"]), a["role"], state))
        return ScenarioConfig(
            apertures=aps,
            array=array,
            snr_db=float(d.get("snr_db", 10.0)),
            bp=BpConfig(**d.get("bp", {})),
            n_runs=int(d.get("n_runs", 1)),
            master_seed=int(d.get("master_seed", 0)),
            divergence_threshold_m=float(d.get("divergence_threshold_m", 0.20)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(cfg), indent=2) + "\n")


def load_scenario(path) -> ScenarioConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(d)


def with_overrides(cfg: ScenarioConfig, *, n_runs=None, n_particles=None, n_iterations=None,
                   snr_db=None, seed=None, divergence_threshold_m=None) -> ScenarioConfig:
    """Copy of ``cfg`` with the given fields replaced and re-validated."""
    bp_changes = {k: v for k, v in (("n_particles", n_particles), ("n_iterations", n_iterations))
                  if v is not None}
    changes = {k: v for k, v in (("n_runs", n_runs), ("snr_db", snr_db), ("master_seed", seed),
                                 ("divergence_threshold_m", divergence_threshold_m))
               if v is not None}
    try:
        bp = replace(cfg.bp, **bp_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return replace(cfg, bp=bp, **changes)


# -- runs --------------------------------------------------------------------

@dataclass
class RunMetrics:
    """Per-iteration errors of one run; ``errors[p-1, k]`` = (pos m, ori rad, clk m) of agent k."""

    run_id: int
    diverged: bool
    agent_ids: list[int]
    errors: np.ndarray
    reason: str = ""

    @property
    def n_iterations(self) -> int:
        return len(self.errors)


def state_errors(estimate: np.ndarray, truth: np.ndarray) -> tuple[float, float, float]:
    """Position, Euler-angle (plain Euclidean, no wrapping) and clock errors."""
    d = estimate - truth
    return float(np.linalg.norm(d[:3])), float(np.linalg.norm(d[3:6])), float(abs(d[6]))


def run_single(cfg: ScenarioConfig, run_id: int, seed) -> RunMetrics:
    rng = np.random.default_rng(seed)
    ids = [ap.id for ap in cfg.apertures]
    agent_ids = [ap.id for ap in cfg.agents]
    truth = {ap.id: ap.state.to_vector() for ap in cfg.apertures}
    try:
        obs = synthesize_all_pairs(cfg.states, cfg.array, cfg.snr_db, rng, ids=ids)
        result = run_loopy_bp(cfg.apertures, obs, cfg.array, cfg.bp, rng)
    except (ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("run %d failed: %s", run_id, exc)
        return RunMetrics(run_id, True, agent_ids, np.empty((0, len(agent_ids), 3)), str(exc))
    errors = np.array([[state_errors(beliefs[j].mean, truth[j]) for j in agent_ids]
                       for beliefs in result.trace]).reshape(-1, len(agent_ids), 3)
    diverged = result.diverged
    reason = result.reason
    if not diverged and len(errors) and np.any(errors[-1, :, 0] > cfg.divergence_threshold_m):
        diverged = True
        reason = f"final position error above {cfg.divergence_threshold_m} m"
    return RunMetrics(run_id, diverged, agent_ids, errors, reason)


def run_seeds(master_seed: int, n_runs: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(n_runs)


def _run_task(args):
    return run_single(*args)


@dataclass
class CampaignResult:
    runs: list[RunMetrics]
    agent_ids: list[int]
    n_iterations: int
    wall_time_s: float = 0.0

    @property
    def converged(self) -> list[RunMetrics]:
        return [r for r in self.runs if not r.diverged]

    @property
    def divergence_rate(self) -> float:
        return sum(r.diverged for r in self.runs) / len(self.runs)

    def rmse(self) -> np.ndarray:
        """RMSE over non-diverged runs, shape ``(P, n_agents, 3)``; NaN if none."""
        good = [r.errors for r in self.converged]
        if not good:
            return np.full((self.n_iterations, len(self.agent_ids), 3), np.nan)
        return np.sqrt(np.mean(np.square(np.stack(good)), axis=0))

    def final_medians(self) -> np.ndarray:
        good = [r.errors[-1] for r in self.converged]
        if not good:
            return np.full((len(self.agent_ids), 3), np.nan)
        return np.median(np.stack(good), axis=0)


def run_campaign(cfg: ScenarioConfig, workers: int = 1, progress=None) -> CampaignResult:
    """Execute ``cfg.n_runs`` independent runs; failures are recorded, never raised.

    ``progress(run_metrics, done, total)`` is called after each run.
    """
    t0 = time.perf_counter()
    tasks = [(cfg, k, s) for k, s in enumerate(run_seeds(cfg.master_seed, cfg.n_runs))]
    runs = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for m in pool.map(_run_task, tasks):
                runs.append(m)
                if progress:
                    progress(m, len(runs), len(tasks))
    else:
        for t in tasks:
            runs.append(_run_task(t))
            if progress:
                progress(runs[-1], len(runs), len(tasks))
    return CampaignResult(runs, [ap.id for ap in cfg.agents], cfg.bp.n_iterations,
                          time.perf_counter() - t0)


# -- output ------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_runs_csv(result: CampaignResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in result.runs:
            for p, row in enumerate(r.errors, start=1):
                for j, (pe, oe, ce) in zip(r.agent_ids, row):
                    w.writerow([r.run_id, int(r.diverged), p, j, _fmt(pe), _fmt(oe), _fmt(ce)])


def write_aggregate_csv(result: CampaignResult, path) -> None:
    rmse = result.rmse()
    n_good = len(result.converged)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for p in range(result.n_iterations):
            for k, j in enumerate(result.agent_ids):
                w.writerow([p + 1, j, *(_fmt(v) for v in rmse[p, k]), n_good,
                            _fmt(result.divergence_rate)])


def summary_dict(result: CampaignResult) -> dict:
    rmse = result.rmse()
    med = result.final_medians()
    agents = {}
    for k, j in enumerate(result.agent_ids):
        agents[str(j)] = {
            "rmse_pos_m": float(rmse[-1, k, 0]),
            "rmse_ori_rad": float(rmse[-1, k, 1]),
            "rmse_clk_m": float(rmse[-1, k, 2]),
            "median_pos_m": float(med[k, 0]),
            "median_ori_rad": float(med[k, 1]),
            "median_clk_m": float(med[k, 2]),
        }
    return {
        "n_runs": len(result.runs),
        "n_converged": len(result.converged),
        "divergence_rate": result.divergence_rate,
        "n_iterations": result.n_iterations,
        "final": agents,
        "wall_time_s": result.wall_time_s,
    }


def write_outputs(result: CampaignResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"runs": out / "runs.csv", "aggregate": out / "aggregate.csv", "summary": out / "summary.json"}
    write_runs_csv(result, paths["runs"])
    write_aggregate_csv(result, paths["aggregate"])
    paths["summary"].write_text(json.dumps(summary_dict(result), indent=2, allow_nan=True) + "\n")
    return paths


def read_runs_csv(path) -> list[RunMetrics]:
    """Rebuild per-run metrics from a runs CSV written by :func:`write_runs_csv`."""
    rows: dict[int, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RUN_COLUMNS:
            raise ConfigError(f"{path}: expected columns {RUN_COLUMNS}, got {reader.fieldnames}")
        for row in reader:
            rid = int(row["run_id"])
            rec = rows.setdefault(rid, {"diverged": bool(int(row["diverged"])), "cells": {}})
            key = (int(row["p"]), int(row["agent_id"]))
            rec["cells"][key] = [float(row["pos_err_m"]), float(row["ori_err_rad"]),
                                 float(row["clk_err_m"])]
    runs = []
    for rid in sorted(rows):
        cells = rows[rid]["cells"]
        agent_ids = sorted({j for _, j in cells})
        n_p = max((p for p, _ in cells), default=0)
        errors = np.array([[cells[(p, j)] for j in agent_ids] for p in range(1, n_p + 1)])
        runs.append(RunMetrics(rid, rows[rid]["diverged"], agent_ids,
                               errors.reshape(n_p, len(agent_ids), 3)))
    return runs


@dataclass
class CdfResult:
    status: str
    iteration: int | None
    curves: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def error_cdf(runs: list[RunMetrics], iteration: int | None = None) -> CdfResult:
    """Empirical CDF per (agent, error kind) over non-diverged runs at ``iteration``.

    ``iteration`` is 1-based and defaults to the last one. Returns status
    ``"empty"`` when every run diverged.
    """
    good = [r for r in runs if not r.diverged and r.n_iterations]
    if not good:
        return CdfResult("empty", iteration)
    n_p = good[0].n_iterations
    p = n_p if iteration is None else iteration
    if not 1 <= p <= n_p:
        raise ValueError(f"iteration {p} outside 1..{n_p}")
    curves = {}
    for k, j in enumerate(good[0].agent_ids):
        for e, kind in enumerate(ERROR_KINDS):
            vals = np.sort([r.errors[p - 1, k, e] for r in good])
            curves[(j, kind)] = (vals, np.arange(1, len(vals) + 1) / len(vals))
    return CdfResult("ok", p, curves)


def cdf_median(values: np.ndarray, freqs: np.ndarray) -> float:
    """Median read off an empirical CDF (averaging the two middle order statistics)."""
    n = len(values)
    lo = values[np.searchsorted(freqs, 0.5 - 1e-12)]
    if n % 2:
        return float(lo)
    return float(0.5 * (lo + values[n // 2]))


def write_cdf_csv(cdf: CdfResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "error_type", "error", "cum_freq"])
        for (j, kind), (vals, freqs) in cdf.curves.items():
            for v, f in zip(vals, freqs):
                w.writerow([j, kind, _fmt(v), _fmt(f)])
