"""Scenario orchestration, metrics and file output.

A scenario runs up to three closed loops on the same grid and noise draw:
attack-free, attacked without recovery, and attacked with recovery. The
detector is calibrated on the attack-free run before any attacked run
starts, so all three runs share identical histories up to attack onset.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .attack import stealth_probe
from .closedloop import COLUMNS, LoopResult, LoopSetup, run_loop
from .config import ScenarioConfig, set_path
from .detector import CalibratedDetector, calibrate
from .errors import ConfigError
from .plant import (FourTankPlant, OperatingPoint, PIController, four_tank_actual, four_tank_nominal,
                    solve_operating_point)
from .recovery import gamma_index
from .simcore import TimeGrid, Trajectory

SETTLE_TIME = 50.0


@dataclass
class Bench:
    """Objects derived from a configuration, shared by all runs of a scenario."""

    cfg: ScenarioConfig
    plant: FourTankPlant
    nominal: FourTankPlant
    controller: PIController
    grid: TimeGrid
    noise: np.ndarray
    op_start: OperatingPoint
    op_attack: OperatingPoint

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "Bench":
        cfg.validate()
        plant = four_tank_actual(cfg.plant_params())
        nominal = four_tank_nominal(cfg.nominal_params())
        c = cfg.controller
        controller = PIController(cfg.plant_params(), kp=c.kp, ki=c.ki, feedback_sign=c.feedback_sign)
        grid = TimeGrid(cfg.grid.t0, cfg.grid.t_end, cfg.grid.dt)
        noise = cfg.noise.samples(len(grid))
        ref = cfg.reference
        op_start = solve_operating_point(plant, nominal, controller, ref(cfg.grid.t0))
        x_att = cfg.attack.x_star
        if x_att is None:
            x_att = [ref.level_at(cfg.attack.t_on)] * 2
        op_attack = solve_operating_point(plant, nominal, controller, x_att)
        return cls(cfg, plant, nominal, controller, grid, noise, op_start, op_attack)

    def setup(self, *, attack: bool, recovery: bool, detector: Optional[CalibratedDetector],
              angle: float = 0.0) -> LoopSetup:
        cfg = self.cfg
        return LoopSetup(
            plant=self.plant, nominal=self.nominal, controller=self.controller,
            reference=cfg.reference, grid=self.grid, op_start=self.op_start,
            op_attack=self.op_attack, noise=self.noise,
            attack_enabled=attack, t_on=cfg.attack.t_on, t_off=cfg.attack.t_off,
            delta0=np.asarray(cfg.attack.delta0, float), injection_angle=angle,
            recovery_enabled=recovery, lam=cfg.recovery.lam, form=cfg.recovery.form,
            drift_center=cfg.recovery.drift_center, detector=detector)

    def run(self, **kw) -> LoopResult:
        return run_loop(self.setup(**kw), self.cfg.engine)


def calibrate_on(bench: Bench, clean_raw: LoopResult) -> CalibratedDetector:
    traj = clean_raw.trajectory
    cfg = bench.cfg
    t_on = cfg.attack.t_on
    if not cfg.attack.enabled and not traj.window(t_on - cfg.detector.calibration_window, t_on, closed=False).any():
        # nothing precedes the unused onset: calibrate on the tail of the run instead
        t_on = float(traj.t[-1]) + cfg.grid.dt
    try:
        return calibrate(cfg.detector, traj.t, traj.stack(["r1", "r2"]), traj.stack(["y1", "y2"]), t_on)
    except ValueError as exc:
        raise ConfigError(f"detector calibration: {exc}") from exc


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    bench: Bench
    detector: CalibratedDetector
    runs: dict
    metrics: dict
    trajectory: Trajectory = field(repr=False)


def _maxabs(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Run the clean / attacked / recovered protocol and compute the metrics."""
    bench = Bench.from_config(cfg)
    det = calibrate_on(bench, bench.run(attack=False, recovery=False, detector=None))
    runs = {"clean": bench.run(attack=False, recovery=False, detector=det)}
    if cfg.attack.enabled:
        runs["attacked"] = bench.run(attack=True, recovery=False, detector=det)
        if cfg.recovery.enabled:
            runs["recovered"] = bench.run(attack=True, recovery=True, detector=det)
    metrics = compute_metrics(bench, det, runs)
    return ScenarioResult(cfg, bench, det, runs, metrics, combined_trajectory(runs))


def compute_metrics(bench: Bench, det: CalibratedDetector, runs: dict) -> dict:
    cfg = bench.cfg
    t_on, t_off = cfg.attack.t_on, cfg.attack.t_off
    clean = runs["clean"].trajectory
    win = clean.window(t_on, t_off)
    late = clean.window(t_on + SETTLE_TIME, t_off, closed=False)
    quiet = clean.window(t_on - cfg.detector.calibration_window, t_on, closed=False)
    active = clean.window(t_on, t_off, closed=False)
    z_cols, x_cols = ["z1", "z2"], ["x1", "x2"]

    def tracking(tr):
        return _maxabs(tr.stack(x_cols)[win] - tr.stack(["ref1", "ref2"])[win])

    main = runs.get("recovered") or runs.get("attacked") or runs["clean"]
    flag = main.flag_time
    clean_flag = runs["clean"].flag_time
    false_alarm = (clean_flag is not None and clean_flag < t_on) or (flag is not None and flag < t_on)

    m = {
        "scenario": cfg.name,
        "engine": cfg.engine,
        "seed": cfg.noise.seed,
        "dt": cfg.grid.dt,
        "config_hash": cfg.hash(),
        "version": __version__,
        "detection_time": _num(flag - t_on) if (cfg.attack.enabled and flag is not None) else None,
        "flag_time": _num(flag),
        "false_alarm_before_onset": bool(false_alarm),
        "clean_run_flag_time": _num(clean_flag),
        "threshold": _num(det.threshold),
        "hold": det.hold,
        "arm_time": _num(det.arm_time),
        "offset_model": det.offset.kind,
        "offset_coefficients": det.offset.coef.round(12).tolist(),
        "gamma": None,
        "residual_steady_norm": _num(np.max(clean["r_norm"][quiet])) if quiet.any() else None,
        "residual_steady_norm_compensated": _num(np.max(clean["rc_norm"][quiet])) if quiet.any() else None,
        "max_output_deviation": None,
        "max_output_deviation_recovered": None,
        "zero_dynamics_deviation_no_recovery": None,
        "zero_dynamics_deviation_relative": None,
        "tracking_error_clean": tracking(clean),
        "tracking_error_recovered": None,
        "residual_attack_gap": None,
        "residual_attack_gap_compensated": None,
        "estimator_error": None,
        "estimator_error_window_max": None,
        "plant_clamp_samples": {k: v.plant_clamps for k, v in runs.items()},
        "attacker_clamp_samples": runs["attacked"].attack_clamps if "attacked" in runs else 0,
        "gradient_skips": runs["recovered"].gradient_skips if "recovered" in runs else 0,
        "operating_point_start": bench.op_start.to_dict(),
        "operating_point_attack": bench.op_attack.to_dict(),
    }
    if "attacked" in runs:
        att = runs["attacked"].trajectory
        z_gap = att.stack(z_cols)[win] - clean.stack(z_cols)[win]
        m["max_output_deviation"] = _maxabs(att.stack(x_cols)[win] - clean.stack(x_cols)[win])
        m["zero_dynamics_deviation_no_recovery"] = _maxabs(z_gap)
        m["zero_dynamics_deviation_relative"] = _maxabs(z_gap) / _maxabs(bench.op_attack.z_star)
        alpha = att.stack(["alpha1", "alpha2"])
        a_max = _maxabs(alpha[active])
        if a_max > 0:
            m["residual_attack_gap"] = _maxabs(att.stack(["r1", "r2"])[late] - alpha[late]) / a_max
            m["residual_attack_gap_compensated"] = _maxabs(att.stack(["rc1", "rc2"])[late] - alpha[late]) / a_max
    if "recovered" in runs:
        rec = runs["recovered"].trajectory
        m["max_output_deviation_recovered"] = _maxabs(rec.stack(x_cols)[win] - clean.stack(x_cols)[win])
        m["tracking_error_recovered"] = tracking(rec)
        try:
            m["gamma"] = gamma_index(rec, runs["attacked"].trajectory, clean, (t_on, t_off))
        except ZeroDivisionError:
            m["gamma"] = None
        alpha = rec.stack(["alpha1", "alpha2"])
        a_max = _maxabs(alpha[active])
        err = rec.stack(["zr1", "zr2"]) - alpha
        if a_max > 0:
            m["estimator_error"] = _maxabs(err[late]) / a_max
            m["estimator_error_window_max"] = _maxabs(err[active]) / a_max
    return m


def combined_trajectory(runs: dict) -> Trajectory:
    """Main run (most complete protocol) with clean and no-recovery overlays."""
    main = (runs.get("recovered") or runs.get("attacked") or runs["clean"]).trajectory
    traj = Trajectory(main.grid, {name: main[name] for name in COLUMNS})
    for tag, key in (("clean", "clean"), ("norec", "attacked")):
        if key in runs and runs[key].trajectory is not main:
            for name in ("z1", "z2", "x1", "x2"):
                traj.add(f"{name}_{tag}", runs[key].trajectory[name])
    return traj


# ---------------------------------------------------------------------------
# Stealth probe with random injection directions


def direction_probe(cfg: ScenarioConfig, n_directions: int = 8, seed: int = 0) -> dict:
    """Compare the attack with equal-norm injections rotated to random directions.

    Each probe rotates the attack vector by a fixed random angle, which keeps
    its norm at every instant. The report gives the undefended output
    deviation of the attack and of each probe, and the median probe over
    attack ratio.
    """
    bench = Bench.from_config(cfg)
    window = (cfg.attack.t_on, cfg.attack.t_off)
    clean = bench.run(attack=False, recovery=False, detector=None).trajectory
    base = stealth_probe(bench.run(attack=True, recovery=False, detector=None).trajectory, clean, np.inf, window)
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, n_directions)
    devs = [stealth_probe(bench.run(attack=True, recovery=False, detector=None, angle=a).trajectory,
                          clean, np.inf, window).deviation for a in angles]
    ratio = float(np.median(devs) / base.deviation) if base.deviation > 0 else float("inf")
    return {"attack_deviation": base.deviation, "probe_deviations": [float(d) for d in devs],
            "angles": angles.tolist(), "median_ratio": ratio, "min_ratio": float(min(devs) / base.deviation)}


# ---------------------------------------------------------------------------
# Output files


def metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=False) + "\n"


def emit_outputs(result: ScenarioResult, out_dir) -> list:
    """Write trajectory CSV, metrics JSON and SVG plots into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    outs = result.config.outputs
    written = []
    if outs.csv:
        path = os.path.join(out_dir, "trajectory.csv")
        result.trajectory.to_csv(path)
        written.append(path)
    if outs.metrics:
        path = os.path.join(out_dir, "metrics.json")
        with open(path, "w") as fh:
            fh.write(metrics_json(result.metrics))
        written.append(path)
    if outs.svg:
        from .plots import write_plots
        written += write_plots(result, out_dir)
    return written


# ---------------------------------------------------------------------------
# Sweeps


SWEEP_FIELDS = ["detection_time", "gamma", "threshold", "false_alarm_before_onset", "max_output_deviation",
                "tracking_error_recovered", "estimator_error", "residual_steady_norm"]


def sweep(cfg: ScenarioConfig, path: str, values: list) -> list:
    """Run one scenario per value of the dotted config ``path``; bad values are reported, not fatal."""
    base = cfg.to_dict()
    set_path(base, path, None)  # fail fast on unknown paths
    rows = []
    for value in values:
        row = {"param": path, "value": value, "error": ""}
        try:
            res = run_scenario(ScenarioConfig.from_dict(set_path(base, path, value)))
            row.update({k: res.metrics.get(k) for k in SWEEP_FIELDS})
        except ConfigError as exc:
            row.update({k: None for k in SWEEP_FIELDS})
            row["error"] = str(exc)
        rows.append(row)
    return rows


def sweep_csv(rows: list, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["param", "value", *SWEEP_FIELDS, "error"]
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if row.get(k) is None else (f"{row[k]:.9g}" if isinstance(row[k], float) else row[k])
                         for k in header])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
