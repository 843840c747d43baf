"""Online attack estimator and input correction.

The estimator weights ``w`` live in the attacker's replica coordinates. They
follow the nominal zero dynamics and are pulled by a normalized gradient of
the compensated residual, so the estimator output converges to the injected
signal and can be subtracted at the plant input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import _call
from .errors import AttackHadNoEffect
from .plant import OperatingPoint, PlantNormalForm
from .simcore import Trajectory, finite_diff_jacobian, rk4_step, same_grid

FORMS = ("attack_matched", "literal")
DRIFT_CENTERS = ("z_star_n", "z_star")
GRADIENT_FLOOR = 1e-12


def initial_weights(op: OperatingPoint) -> np.ndarray:
    """Weights at which the estimator output is zero."""
    return op.z_star - op.z_star_n


def recovery_output(nominal: PlantNormalForm, op: OperatingPoint, w, form: str = "attack_matched",
                    clamp: bool = True) -> np.ndarray:
    """Estimator output for weights ``w``, centred so it vanishes at :func:`initial_weights`.

    ``attack_matched`` reproduces the attack's functional form. ``literal``
    keeps the opposite sign, ``G^-1 F(w + z*_n) - G^-1 F(z*)``; its output is
    bounded on one side by the square roots and cannot follow large attacks.
    """
    w = np.asarray(w, dtype=float)
    drift = nominal.G_inv(_call(nominal.F, w + op.z_star_n, op.x_star, clamp))
    ref = nominal.G_inv(_call(nominal.F, op.z_star, op.x_star, clamp))
    sign = -1.0 if form == "attack_matched" else 1.0
    return sign * (np.asarray(drift) - np.asarray(ref))


def recovery_gradient(nominal: PlantNormalForm, op: OperatingPoint, w, form: str = "attack_matched",
                      clamp: bool = True) -> np.ndarray:
    """Jacobian of :func:`recovery_output` with respect to ``w``.

    Uses the plant's analytic slope when available and central differences
    otherwise.
    """
    w = np.asarray(w, dtype=float)
    sign = -1.0 if form == "attack_matched" else 1.0
    arg = w + op.z_star_n
    if hasattr(nominal, "dF_dz"):
        return sign * nominal.dginvF_dz(arg, op.x_star, clamp=clamp)
    return finite_diff_jacobian(lambda v: recovery_output(nominal, op, v, form, clamp), w)


def recovery_rate(nominal: PlantNormalForm, op: OperatingPoint, w, e, lam: float,
                  form: str = "attack_matched", drift_center: str = "z_star_n",
                  clamp: bool = True) -> tuple:
    """Weight rate ``lam J^T e / |J|_F^2 + H_n(w + center, x*)``.

    Returns ``(rate, skipped)`` where ``skipped`` tells that the gradient was
    too small to normalize and only the drift term was applied.
    """
    w = np.asarray(w, dtype=float)
    J = recovery_gradient(nominal, op, w, form, clamp)
    nrm2 = float(np.sum(J * J))
    skipped = nrm2 < GRADIENT_FLOOR ** 2
    grad = np.zeros_like(w) if skipped else lam * (J.T @ np.asarray(e, dtype=float)) / nrm2
    center = op.z_star_n if drift_center == "z_star_n" else op.z_star
    return grad + _call(nominal.H, w + center, op.x_star, clamp), skipped


@dataclass
class RecoveryState:
    """Estimator weights and switches. The output stays zero until engaged."""

    w: np.ndarray
    lam: float = 0.5
    engaged: bool = False
    z_r: np.ndarray = field(default_factory=lambda: np.zeros(2))
    form: str = "attack_matched"
    drift_center: str = "z_star_n"
    singular_events: int = 0

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if self.drift_center not in DRIFT_CENTERS:
            raise ValueError(f"drift_center must be one of {DRIFT_CENTERS}")
        if not self.lam > 0:
            raise ValueError("learning rate must be positive")
        self.w = np.asarray(self.w, dtype=float).copy()

    def engage(self, op: OperatingPoint):
        """Latch on and reset the weights so the output starts from zero."""
        self.engaged = True
        self.w = initial_weights(op)
        self.z_r = np.zeros_like(self.z_r)


def recovery_step(rec: RecoveryState, nominal: PlantNormalForm, op: OperatingPoint, e, dt: float) -> np.ndarray:
    """Output for the current weights, then one RK4 step of the adaptation law with ``e`` held."""
    if not rec.engaged:
        rec.z_r = np.zeros(nominal.n_u)
        return rec.z_r
    rec.z_r = recovery_output(nominal, op, rec.w, rec.form)
    skipped = []

    def rate(_t, w):
        d, s = recovery_rate(nominal, op, w, e, rec.lam, rec.form, rec.drift_center)
        skipped.append(s)
        return d

    rec.w = rk4_step(rate, 0.0, rec.w, dt)
    rec.singular_events += int(skipped[0])
    return rec.z_r


def apply_recovery(u_c, alpha, z_r, engaged: bool = True) -> np.ndarray:
    """Input reaching the plant: controller effort plus injection minus the correction."""
    u = np.asarray(u_c, dtype=float) + np.asarray(alpha, dtype=float)
    return u - np.asarray(z_r, dtype=float) if engaged else u


def gamma_index(traj_recovered: Trajectory, traj_no_recovery: Trajectory, traj_clean: Trajectory,
                window: tuple, columns=("z1", "z2")) -> float:
    """Attack success index: internal-state gap with recovery over the gap without it."""
    same_grid(traj_recovered, traj_clean)
    same_grid(traj_no_recovery, traj_clean)
    mask = traj_clean.window(*window)
    clean = traj_clean.stack(columns)[mask]
    num = np.max(np.abs(traj_recovered.stack(columns)[mask] - clean))
    den = np.max(np.abs(traj_no_recovery.stack(columns)[mask] - clean))
    if den < 1e-9:
        raise AttackHadNoEffect("the attack did not move the internal states; index undefined")
    return float(num / den)
