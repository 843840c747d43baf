"""Nominal closed-loop replica, residual generation and threshold logic.

The replica is the nominal plant under a copy of the controller whose
reference is the measured plant output. Its control effort is compared with
the input that actually reaches the plant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import NonFiniteState
from .plant import OperatingPoint, PIController, PlantNormalForm
from .simcore import rk4_step

LEVEL_FLOOR = 1e-6
OFFSET_MODELS = ("none", "constant", "sqrt_affine")
CALIBRATION_MODES = ("auto", "fixed")


# ---------------------------------------------------------------------------
# Replica


@dataclass
class ReplicaState:
    z_mp: np.ndarray
    x_mp: np.ndarray
    s_mc: np.ndarray
    u_mc: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def at_operating_point(cls, op: OperatingPoint, controller: PIController):
        """Replica resting at the nominal equilibrium for output level ``x*``."""
        s = controller.integrator_for(op.u_n_star, op.x_star)
        return cls(op.z_star_n.copy(), op.x_star.copy(), s, op.u_n_star.copy())

    def vector(self):
        return np.concatenate([self.z_mp, self.x_mp, self.s_mc])


def replica_input(controller: PIController, x_mp, s_mc, y) -> np.ndarray:
    """Replica control effort with the measured output as reference.

    Measured levels are floored at a small positive value before the
    feedforward square roots so that noisy readings near zero stay valid.
    """
    y = np.asarray(y, dtype=float)
    ff = controller.feedforward(np.maximum(y, LEVEL_FLOOR))
    return ff + controller.feedback_sign * (controller.kp @ (np.asarray(x_mp) - y) + controller.ki @ s_mc)


def replica_rates(nominal: PlantNormalForm, controller: PIController, state_vec, y, clamp=True):
    nz, nx = nominal.n_z, nominal.n_x
    z, x, s = state_vec[:nz], state_vec[nz:nz + nx], state_vec[nz + nx:]
    u = replica_input(controller, x, s, y)
    try:
        dz = nominal.H(z, x, clamp=clamp)
        dx = nominal.F(z, x, clamp=clamp) + nominal.G(u)
    except TypeError:
        dz, dx = nominal.rates(z, x, u)
    return np.concatenate([dz, dx, controller.integrator_rate(x, y)]), u


def replica_step(rep: ReplicaState, nominal: PlantNormalForm, y, dt: float,
                 controller: PIController) -> np.ndarray:
    """Return the replica effort for measurement ``y`` and advance the replica one step.

    ``y`` is held over the step.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteState("non-finite measurement fed to the replica")
    s0 = rep.vector()
    _, u = replica_rates(nominal, controller, s0, y)
    s1 = rk4_step(lambda _t, s: replica_rates(nominal, controller, s, y)[0], 0.0, s0, dt)
    nz, nx = nominal.n_z, nominal.n_x
    rep.z_mp, rep.x_mp, rep.s_mc = s1[:nz], s1[nz:nz + nx], s1[nz + nx:]
    rep.u_mc = u
    return u


# ---------------------------------------------------------------------------
# Residual


@dataclass(frozen=True)
class ResidualSample:
    t: float
    r: np.ndarray
    norm: float
    flagged: bool = False


def residual(u_plant_measured, u_mc, t: float = 0.0, flagged: bool = False) -> ResidualSample:
    """Measured plant input minus replica effort."""
    r = np.asarray(u_plant_measured, dtype=float) - np.asarray(u_mc, dtype=float)
    return ResidualSample(float(t), r, float(np.linalg.norm(r)), flagged)


@dataclass
class OffsetModel:
    """Static residual offset as a function of the measured output.

    ``sqrt_affine`` regresses on ``(1, sqrt(y1), sqrt(y2))``, ``constant`` on
    ``1`` alone and ``none`` leaves the residual untouched. Parameter mismatch
    between plant and replica leaves a level-dependent steady offset in the
    raw residual, which this model removes.
    """

    kind: str = "none"
    coef: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        if self.kind not in OFFSET_MODELS:
            raise ValueError(f"unknown offset model {self.kind!r}")
        self.coef = np.asarray(self.coef, dtype=float)

    @staticmethod
    def features(kind: str, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        ones = np.ones((y.shape[0], 1))
        if kind == "none":
            return np.zeros((y.shape[0], 0))
        if kind == "constant":
            return ones
        return np.hstack([ones, np.sqrt(np.maximum(y, LEVEL_FLOOR))])

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "none":
            return np.zeros(y.shape)
        out = self.features(self.kind, y) @ self.coef
        return out[0] if y.ndim == 1 else out

    def padded(self, n_out: int = 2) -> np.ndarray:
        """Coefficients as a (3, n_out) block in ``sqrt_affine`` layout."""
        full = np.zeros((3, n_out))
        full[: self.coef.shape[0]] = self.coef
        return full

    @classmethod
    def fit(cls, kind: str, r, y):
        r = np.atleast_2d(np.asarray(r, dtype=float))
        if kind == "none":
            return cls("none", np.zeros((0, r.shape[1])))
        X = cls.features(kind, y)
        coef = np.linalg.lstsq(X, r, rcond=None)[0]
        return cls(kind, coef)


# ---------------------------------------------------------------------------
# Threshold logic


@dataclass
class DetectorConfig:
    """Sustained-threshold detector settings.

    With ``calibration="auto"`` the threshold is ``threshold_factor`` times the
    largest compensated residual norm over the ``calibration_window`` seconds
    before attack onset, plus ``threshold_floor``. The detector is armed from
    ``arm_time`` (default: start of the calibration window).
    """

    threshold: Optional[float] = None
    hold: int = 10
    calibration: str = "auto"
    offset_model: str = "sqrt_affine"
    calibration_window: float = 100.0
    threshold_factor: float = 3.0
    threshold_floor: float = 1e-3
    arm_time: Optional[float] = None

    def problems(self) -> list:
        out = []
        if self.calibration not in CALIBRATION_MODES:
            out.append(f"detector.calibration must be one of {CALIBRATION_MODES}")
        if self.offset_model not in OFFSET_MODELS:
            out.append(f"detector.offset_model must be one of {OFFSET_MODELS}")
        if self.calibration == "fixed" and not (self.threshold is not None and self.threshold > 0):
            out.append("detector.threshold must be positive in fixed calibration")
        if not (isinstance(self.hold, int) and self.hold >= 1):
            out.append("detector.hold must be an integer >= 1")
        if not self.calibration_window > 0:
            out.append("detector.calibration_window must be positive")
        return out


@dataclass
class CalibratedDetector:
    threshold: float
    hold: int
    arm_time: float
    offset: OffsetModel


def calibrate(cfg: DetectorConfig, t, r, y, t_on: float) -> CalibratedDetector:
    """Fit the offset model and threshold on attack-free data before ``t_on``."""
    t = np.asarray(t, dtype=float)
    start = t_on - cfg.calibration_window
    mask = (t >= start - 1e-9) & (t < t_on - 1e-9)
    if not mask.any():
        raise ValueError("calibration window holds no samples")
    r = np.asarray(r, dtype=float)[mask]
    y = np.asarray(y, dtype=float)[mask]
    offset = OffsetModel.fit(cfg.offset_model, r, y)
    if cfg.calibration == "auto":
        spread = np.linalg.norm(r - offset(y), axis=1).max()
        tau = cfg.threshold_factor * float(spread) + cfg.threshold_floor
    else:
        tau = float(cfg.threshold)
    arm = start if cfg.arm_time is None else float(cfg.arm_time)
    return CalibratedDetector(tau, cfg.hold, arm, offset)


def first_flag(t, norms, tau: float, hold: int, arm_time: float = -np.inf) -> Optional[float]:
    """Time of the ``hold``-th consecutive armed sample whose norm exceeds ``tau``."""
    t = np.asarray(t, dtype=float)
    above = (np.asarray(norms) > tau) & (t >= arm_time - 1e-9)
    run = 0
    for i, a in enumerate(above):
        run = run + 1 if a else 0
        if run >= hold:
            return float(t[i])
    return None


def detect(samples: Iterable[ResidualSample], cfg: DetectorConfig, t_on: float,
           tau: float | None = None, arm_time: float | None = None) -> Optional[float]:
    """Detection delay relative to ``t_on``, or ``None`` if the flag never latches.

    A negative value is a false alarm raised before the attack started.
    """
    samples = list(samples)
    tau = cfg.threshold if tau is None else tau
    if tau is None:
        raise ValueError("threshold not calibrated")
    if arm_time is None:
        arm_time = cfg.arm_time if cfg.arm_time is not None else -np.inf
    flag = first_flag([s.t for s in samples], [s.norm for s in samples], tau, cfg.hold, arm_time)
    return None if flag is None else flag - t_on
