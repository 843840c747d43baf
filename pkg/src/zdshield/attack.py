"""Zero-dynamics attack synthesized from the nominal model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .plant import OperatingPoint, PlantNormalForm
from .simcore import Trajectory, rk4_step, same_grid

DEFAULT_DELTA0 = (-0.1, -0.1)


def in_window(t: float, t_on: float, t_off: float) -> bool:
    """Attack activity on the half-open window ``[t_on, t_off)``."""
    eps = 1e-9 * max(1.0, abs(t))
    return t_on - eps <= t < t_off - eps


def _call(fn, z, x, clamp):
    try:
        return np.asarray(fn(z, x, clamp=clamp))
    except TypeError:
        return np.asarray(fn(z, x))


def attack_signal(nominal: PlantNormalForm, op: OperatingPoint, delta, clamp: bool = True) -> np.ndarray:
    """Actuator injection for replica state ``delta``.

    The signal cancels the nominal output drift that the shifted internal
    state would create, so it is zero when ``delta = z* - z*_n``.
    """
    delta = np.asarray(delta, dtype=float)
    drift = _call(nominal.F, delta + op.z_star_n, op.x_star, clamp)
    ref = _call(nominal.F, op.z_star, op.x_star, clamp)
    return -np.asarray(nominal.G_inv(drift - ref))


def attacker_rate(nominal: PlantNormalForm, op: OperatingPoint, delta, clamp: bool = True) -> np.ndarray:
    """Rate of the attacker's internal replica: nominal zero dynamics around ``z*_n``."""
    return _call(nominal.H, np.asarray(delta, dtype=float) + op.z_star_n, op.x_star, clamp)


@dataclass
class AttackState:
    """Attacker replica plus its activity window.

    ``delta_tilde`` starts at ``z* - z*_n + delta0`` and only moves inside the
    window. ``clamp_events`` counts steps where the replica left the nominal
    domain and its radicands were clamped.
    """

    delta_tilde: np.ndarray
    t_on: float
    t_off: float
    delta0: np.ndarray
    active: bool = False
    clamp: bool = True
    clamp_events: int = 0

    @classmethod
    def start(cls, op: OperatingPoint, t_on: float, t_off: float, delta0=DEFAULT_DELTA0, clamp=True):
        if not t_on < t_off:
            raise ValueError("attack window must satisfy t_on < t_off")
        delta0 = np.asarray(delta0, dtype=float)
        return cls(op.z_star - op.z_star_n + delta0, float(t_on), float(t_off), delta0, clamp=clamp)


def attack_step(state: AttackState, nominal: PlantNormalForm, op: OperatingPoint, t: float, dt: float) -> np.ndarray:
    """Emit the injection for time ``t`` and advance the replica by one RK4 step.

    Only nominal quantities are read. Outside the window the output is zero
    and the replica is frozen.
    """
    state.active = in_window(t, state.t_on, state.t_off)
    if not state.active:
        return np.zeros(nominal.n_u)
    if not nominal.guard(state.delta_tilde + op.z_star_n, op.x_star):
        if not state.clamp:
            raise DomainError(f"attacker replica left the nominal domain at t={t:.9g}")
        state.clamp_events += 1
    alpha = attack_signal(nominal, op, state.delta_tilde, clamp=state.clamp)
    state.delta_tilde = rk4_step(lambda _t, d: attacker_rate(nominal, op, d, clamp=state.clamp),
                                 t, state.delta_tilde, dt)
    return alpha


@dataclass(frozen=True)
class StealthReport:
    deviation: float
    eps: float
    stealthy: bool
    window: tuple = field(default=(None, None))


def stealth_probe(traj_attacked: Trajectory, traj_clean: Trajectory, eps: float,
                  window: tuple | None = None, outputs=("x1", "x2")) -> StealthReport:
    """Largest output gap between an undefended attacked run and the clean run.

    ``window`` defaults to the whole horizon; the run counts as stealthy when
    the gap stays below ``eps``.
    """
    same_grid(traj_attacked, traj_clean)
    mask = np.ones(len(traj_clean.grid), bool) if window is None else traj_clean.window(*window, closed=False)
    gap = np.abs(traj_attacked.stack(outputs)[mask] - traj_clean.stack(outputs)[mask])
    dev = float(gap.max()) if gap.size else 0.0
    return StealthReport(dev, float(eps), bool(dev < eps), tuple(window) if window else (None, None))


def rotate(v, angle: float) -> np.ndarray:
    """Rotate a planar vector; keeps its norm and changes its direction."""
    c, s = np.cos(angle), np.sin(angle)
    v = np.asarray(v, dtype=float)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
