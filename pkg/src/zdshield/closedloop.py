"""Closed-loop assembly: plant, controller, attacker, replica detector and estimator.

Per grid step the measurement ``y = x + noise`` and the attack/estimator
switches are latched, the detector is updated from the signals at the start
of the step, and the joint state is advanced by one RK4 step with those
values held. Two engines implement this: :class:`BlockLoop` composes the
block functions from the other modules and works for any normal-form plant;
the compiled kernel covers the four-tank plant with diagonal PI gains and is
about three orders of magnitude faster.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernel
from .attack import _call, attack_signal, attacker_rate, in_window, rotate
from .detector import CalibratedDetector, OffsetModel, replica_input, replica_rates
from .errors import NonFiniteState
from .plant import FourTankPlant, OperatingPoint, PIController, PlantNormalForm
from .recovery import initial_weights, recovery_output, recovery_rate
from .simcore import TimeGrid, Trajectory, check_finite, simulate

STATE_COLUMNS = ["z1", "z2", "x1", "x2", "c1", "c2", "zm1", "zm2", "xm1", "xm2",
                 "cm1", "cm2", "delta1", "delta2", "w1", "w2"]
SIGNAL_COLUMNS = ["y1", "y2", "ref1", "ref2", "uc1", "uc2", "umc1", "umc2", "alpha1", "alpha2",
                  "zr1", "zr2", "up1", "up2", "r1", "r2", "rc1", "rc2", "r_norm", "rc_norm",
                  "flag", "engaged"]
COLUMNS = STATE_COLUMNS + SIGNAL_COLUMNS
ENGINES = ("auto", "compiled", "blocks")


@dataclass
class LoopSetup:
    """Everything one closed-loop run needs.

    ``op_start`` seeds the warm start of plant and replica. ``op_attack`` is
    the operating point the attacker and estimator are built around.
    ``detector`` may be ``None`` for a run without threshold logic.
    """

    plant: PlantNormalForm
    nominal: PlantNormalForm
    controller: PIController
    reference: Callable
    grid: TimeGrid
    op_start: OperatingPoint
    op_attack: OperatingPoint
    noise: np.ndarray
    attack_enabled: bool = False
    t_on: float = np.inf
    t_off: float = np.inf
    delta0: np.ndarray = field(default_factory=lambda: np.array([-0.1, -0.1]))
    injection_angle: float = 0.0
    recovery_enabled: bool = False
    lam: float = 0.5
    form: str = "attack_matched"
    drift_center: str = "z_star_n"
    detector: Optional[CalibratedDetector] = None

    def initial_state(self) -> np.ndarray:
        op, ctrl = self.op_start, self.controller
        c_m = ctrl.integrator_for(op.u_n_star, op.x_star)
        delta = self.op_attack.z_star - self.op_attack.z_star_n + np.asarray(self.delta0, float)
        return np.concatenate([op.z_star, op.x_star, np.zeros(2), op.z_star_n, op.x_star, c_m,
                               delta, initial_weights(self.op_attack)])

    @property
    def offset(self) -> OffsetModel:
        return self.detector.offset if self.detector is not None else OffsetModel("none")


@dataclass
class LoopResult:
    trajectory: Trajectory
    flag_time: Optional[float]
    plant_clamps: int
    attack_clamps: int
    gradient_skips: int


# ---------------------------------------------------------------------------
# Generic engine


class BlockLoop:
    """Closed loop assembled from the block functions (any normal-form plant)."""

    labels = STATE_COLUMNS

    def __init__(self, setup: LoopSetup):
        self.s = setup
        self.y = None
        self.att = False
        self.eng = False
        self.flag_time = None
        self.run = 0
        self.plant_clamps = 0
        self.attack_clamps = 0
        self.gradient_skips = 0

    def initial_state(self):
        return self.s.initial_state()

    def _signals(self, t, S):
        s = self.s
        z, x, c = S[0:2], S[2:4], S[4:6]
        xm, cm = S[8:10], S[10:12]
        delta, w = S[12:14], S[14:16]
        r = s.reference(t)
        uc = s.controller.output(self.y, r, c)
        um = replica_input(s.controller, xm, cm, self.y)
        alpha = np.zeros(2)
        if self.att:
            alpha = attack_signal(s.nominal, s.op_attack, delta)
            if s.injection_angle:
                alpha = rotate(alpha, s.injection_angle)
        zr = recovery_output(s.nominal, s.op_attack, w, s.form) if self.eng else np.zeros(2)
        up = uc + alpha - zr
        r_raw = up - um
        rc = r_raw - s.offset(self.y)
        return r, uc, um, alpha, zr, up, r_raw, rc

    def derivative(self, t, S):
        s = self.s
        z, x = S[0:2], S[2:4]
        r, uc, um, alpha, zr, up, r_raw, rc = self._signals(t, S)
        dz = _call(s.plant.H, z, x, True)
        dx = _call(s.plant.F, z, x, True) + s.plant.G(up)
        dc = s.controller.integrator_rate(self.y, r)
        drep, _ = replica_rates(s.nominal, s.controller, S[6:12], self.y)
        ddelta = attacker_rate(s.nominal, s.op_attack, S[12:14]) if self.att else np.zeros(2)
        if self.eng:
            dw = recovery_rate(s.nominal, s.op_attack, S[14:16], rc, s.lam, s.form, s.drift_center)[0]
        else:
            dw = np.zeros(2)
        return np.concatenate([dz, dx, dc, drep, ddelta, dw])

    def sample(self, k, t, S):
        s = self.s
        self.y = S[2:4] + s.noise[k]
        self.att = s.attack_enabled and in_window(t, s.t_on, s.t_off)
        if not s.plant.guard(S[0:2], S[2:4]):
            self.plant_clamps += 1
        if self.att and not s.nominal.guard(S[12:14] + s.op_attack.z_star_n, s.op_attack.x_star):
            self.attack_clamps += 1
        sig = self._signals(t, S)
        det = s.detector
        eps = 1e-9 * max(1.0, abs(t))
        if det is not None and self.flag_time is None and t >= det.arm_time - eps:
            self.run = self.run + 1 if np.linalg.norm(sig[7]) > det.threshold else 0
            if self.run >= det.hold:
                self.flag_time = t
                if s.recovery_enabled:
                    self.eng = True
                    S[14:16] = initial_weights(s.op_attack)
                    sig = self._signals(t, S)
        if self.eng:
            _, skipped = recovery_rate(s.nominal, s.op_attack, S[14:16], sig[7], s.lam, s.form, s.drift_center)
            self.gradient_skips += int(skipped)
        r, uc, um, alpha, zr, up, r_raw, rc = sig
        vals = [*self.y, *r, *uc, *um, *alpha, *zr, *up, *r_raw, *rc,
                np.linalg.norm(r_raw), np.linalg.norm(rc),
                float(self.flag_time is not None), float(self.eng)]
        return dict(zip(SIGNAL_COLUMNS, vals))


def _run_blocks(setup: LoopSetup) -> LoopResult:
    loop = BlockLoop(setup)
    traj = simulate(loop, setup.grid)
    traj = Trajectory(setup.grid, {name: traj[name] for name in COLUMNS})
    return LoopResult(traj, loop.flag_time, loop.plant_clamps, loop.attack_clamps, loop.gradient_skips)


# ---------------------------------------------------------------------------
# Compiled engine


def compiled_supported(setup: LoopSetup) -> bool:
    ctrl = setup.controller
    return (isinstance(setup.plant, FourTankPlant) and isinstance(setup.nominal, FourTankPlant)
            and np.allclose(ctrl.kp, np.diag(np.diag(ctrl.kp)))
            and np.allclose(ctrl.ki, np.diag(np.diag(ctrl.ki))))


def reference_samples(reference: Callable, grid: TimeGrid):
    """Reference at grid points and at the three RK4 stage times of each step."""
    n = grid.n_steps
    tk = grid.t0 + np.arange(n + 1) * grid.dt
    ref_grid = np.asarray(reference(tk), dtype=float).reshape(n + 1, 2)
    stage_t = np.stack([tk[:n], tk[:n] + 0.5 * grid.dt, tk[:n] + grid.dt], axis=1)
    ref_stage = np.asarray(reference(stage_t.ravel()), dtype=float).reshape(n, 3, 2)
    return ref_grid, np.ascontiguousarray(ref_stage)


def _run_compiled(setup: LoopSetup) -> LoopResult:
    s, grid = setup, setup.grid
    n = grid.n_steps
    ctrl = s.controller
    opa = s.op_attack
    F_ref = np.asarray(s.nominal.F(opa.z_star, opa.x_star))
    opv = np.concatenate([opa.x_star, opa.z_star, opa.z_star_n, F_ref]).astype(float)
    center = opa.z_star_n if s.drift_center == "z_star_n" else opa.z_star
    gains = np.array([ctrl.kp[0, 0], ctrl.kp[1, 1], ctrl.ki[0, 0], ctrl.ki[1, 1], ctrl.feedback_sign])
    det = s.detector
    tau = det.threshold if det is not None else np.inf
    arm = det.arm_time if det is not None else np.inf
    hold = det.hold if det is not None else 1
    cfg = np.zeros(10)
    cfg[kernel.LAM] = s.lam
    cfg[kernel.THETA] = s.injection_angle
    cfg[kernel.T_ON] = s.t_on
    cfg[kernel.T_OFF] = s.t_off
    cfg[kernel.TAU] = tau
    cfg[kernel.ARM] = arm
    cfg[kernel.HOLD] = hold
    cfg[kernel.ATTACK] = float(s.attack_enabled)
    cfg[kernel.RECOVER] = float(s.recovery_enabled)
    cfg[kernel.FORM] = 0.0 if s.form == "attack_matched" else 1.0
    ref_grid, ref_stage = reference_samples(s.reference, grid)
    S = s.initial_state().astype(float)
    check_finite(S, STATE_COLUMNS, grid.t0)
    rec = np.zeros((n + 1, len(COLUMNS)))
    stats = np.zeros(4)
    bad_step, bad_col = kernel.run_kernel(
        S, s.plant.kernel_coeffs(), s.nominal.kernel_coeffs(), gains, ctrl.M_ff_inv, ctrl.outflow,
        opv, np.asarray(center, float), initial_weights(opa).astype(float), s.offset.padded(2), cfg,
        float(grid.t0), float(grid.dt), int(n), ref_grid, ref_stage,
        np.ascontiguousarray(s.noise, dtype=float), rec, stats)
    if bad_step >= 0:
        t_bad = grid.t0 + bad_step * grid.dt
        raise NonFiniteState(f"non-finite {STATE_COLUMNS[bad_col]} at t={t_bad:.9g}",
                             t=t_bad, column=STATE_COLUMNS[bad_col])
    traj = Trajectory(grid, {name: rec[:, i] for i, name in enumerate(COLUMNS)})
    flag = None if np.isnan(stats[kernel.FLAG_T]) else float(stats[kernel.FLAG_T])
    return LoopResult(traj, flag, int(stats[kernel.PLANT_CLAMPS]), int(stats[kernel.ATTACK_CLAMPS]),
                      int(stats[kernel.GRAD_SKIPS]))


def run_loop(setup: LoopSetup, engine: str = "auto") -> LoopResult:
    """Simulate one closed-loop run with the chosen engine."""
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    if engine == "auto":
        engine = "compiled" if compiled_supported(setup) else "blocks"
    if engine == "compiled":
        if not compiled_supported(setup):
            raise ValueError("compiled engine needs four-tank plants and diagonal PI gains")
        return _run_compiled(setup)
    return _run_blocks(setup)
