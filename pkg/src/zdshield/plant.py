"""Normal-form plants, the four-tank benchmark, PI control and equilibrium tools.

A plant in normal form has internal (zero-dynamics) states ``z`` and output
states ``x`` with

    z' = H(z, x),    x' = F(z, x) + G(u),    y = x.

For the four-tank process ``x`` holds the two lower tank levels and ``z``
shifts the upper tank levels by a multiple of the lower levels so that the
pump voltages drop out of ``z'``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp

from .errors import DegenerateBox, DomainError, NoConvergence, SolveError
from .simcore import finite_diff_jacobian


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class FourTankParams:
    """Geometry, pump gains and flow splits of the four-tank process.

    Areas are in cm^2, pump gains in cm^3/(V s) and ``gravity`` in cm/s^2.
    Tank 1 and the tank above it share ``A_L``/``a_L``; tank 2 and the tank
    above it share ``A_R``/``a_R``.
    """

    A_L: float
    A_R: float
    a_L: float
    a_R: float
    k1: float
    k2: float
    sigma1: float
    sigma2: float
    gravity: float = 981.0

    def validate(self, require_nonminimum_phase: bool = True) -> "FourTankParams":
        problems = []
        for name in ("A_L", "A_R", "a_L", "a_R", "k1", "k2", "gravity"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        for name in ("sigma1", "sigma2"):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name} must lie strictly between 0 and 1")
        if require_nonminimum_phase and not self.sigma1 + self.sigma2 < 1:
            problems.append("sigma1 + sigma2 must be below 1 (non-minimum-phase configuration)")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def T1(self) -> float:
        return derive_zero_dyn_coeffs(self)[0]

    @property
    def T2(self) -> float:
        return derive_zero_dyn_coeffs(self)[1]

    def with_gravity(self, gravity: float) -> "FourTankParams":
        return replace(self, gravity=float(gravity))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("A_L", "A_R", "a_L", "a_R", "k1", "k2", "sigma1", "sigma2", "gravity")}


ACTUAL_PARAMS = FourTankParams(A_L=28.0, A_R=32.0, a_L=0.071, a_R=0.057,
                               k1=3.14, k2=3.29, sigma1=0.43, sigma2=0.34)
NOMINAL_PARAMS = FourTankParams(A_L=30.0, A_R=34.0, a_L=0.101, a_R=0.057,
                                k1=3.14, k2=3.5, sigma1=0.43, sigma2=0.34)

PARAM_PRESETS = {"four_tank_actual": ACTUAL_PARAMS, "four_tank_nominal": NOMINAL_PARAMS}


def physical_rhs(p: FourTankParams, h, u) -> np.ndarray:
    """Level rates of the physical process, levels ordered (h1, h2, h3, h4).

    Tank 3 sits above tank 1 and receives ``(1 - sigma2) k2 u2``; tank 4 sits
    above tank 2 and receives ``(1 - sigma1) k1 u1``.
    """
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(h < 0):
        raise DomainError("negative tank level")
    q = np.sqrt(2.0 * p.gravity * h)
    return np.array([
        (-p.a_L * q[0] + p.a_L * q[2] + p.sigma1 * p.k1 * u[0]) / p.A_L,
        (-p.a_R * q[1] + p.a_R * q[3] + p.sigma2 * p.k2 * u[1]) / p.A_R,
        (-p.a_L * q[2] + (1 - p.sigma2) * p.k2 * u[1]) / p.A_L,
        (-p.a_R * q[3] + (1 - p.sigma1) * p.k1 * u[0]) / p.A_R,
    ])


def derive_zero_dyn_coeffs(p: FourTankParams, tol: float = 1e-12) -> tuple:
    """Coefficients (T1, T2) making ``z1 = h3 - T2 h2`` and ``z2 = h4 - T1 h1`` input free.

    The input matrix of the physical model is probed column by column and
    each upper-tank row is projected against its lower-tank row.
    """
    h = np.ones(4)
    base = physical_rhs(p, h, np.zeros(2))
    B = np.column_stack([physical_rhs(p, h, e) - base for e in np.eye(2)])
    coeffs = []
    for upper, lower in ((3, 0), (2, 1)):
        lo = B[lower]
        denom = float(lo @ lo)
        if denom == 0.0:
            raise SolveError(f"tank {lower + 1} receives no direct input")
        T = float(B[upper] @ lo) / denom
        miss = np.max(np.abs(B[upper] - T * lo))
        if miss > tol * max(1.0, np.max(np.abs(B))):
            raise SolveError(f"no input-cancelling coefficient for tank {upper + 1} (mismatch {miss:.3g})")
        coeffs.append(T)
    return coeffs[0], coeffs[1]


# ---------------------------------------------------------------------------
# Normal form


@dataclass
class PlantNormalForm:
    """Generic normal-form plant supplied as callables.

    ``H(z, x)``, ``F(z, x)`` and ``G(u)`` return arrays. ``guard(z, x)`` tells
    whether the state is in the physical domain. ``G_inv`` is optional and
    only needed by the attack and recovery blocks.
    """

    n_z: int
    n_x: int
    n_u: int
    H: Callable
    F: Callable
    G: Callable
    G_inv: Optional[Callable] = None
    guard: Callable = field(default=lambda z, x: True)
    name: str = "plant"

    def rates(self, z, x, u):
        return np.asarray(self.H(z, x)), np.asarray(self.F(z, x)) + np.asarray(self.G(u))

    def ginv_F(self, z, x):
        """``G^{-1}(F(z, x))``."""
        if self.G_inv is None:
            raise NotImplementedError(f"{self.name} has no input inverse")
        return np.asarray(self.G_inv(self.F(z, x)))

    def dginvF_dz(self, z, x):
        """Jacobian of ``G^{-1} F`` with respect to ``z`` (finite differences)."""
        return finite_diff_jacobian(lambda w: self.ginv_F(w, x), z)


class FourTankPlant(PlantNormalForm):
    """Four-tank process written in normal form.

    ``H``, ``F`` and the derivatives broadcast over leading axes, so arrays of
    shape ``(..., 2)`` can be evaluated in one call. With ``clamp=True`` a
    negative radicand is treated as an empty tank instead of raising.
    """

    def __init__(self, params: FourTankParams, name: str = "four_tank"):
        self.params = params
        T1, T2 = derive_zero_dyn_coeffs(params)
        r = math.sqrt(2.0 * params.gravity)
        self.T1, self.T2 = T1, T2
        self.c_out_L = r * params.a_L / params.A_L
        self.c_out_R = r * params.a_R / params.A_R
        self.c_cross_L = r * (1 - params.sigma2) * params.a_R / (params.sigma2 * params.A_L)
        self.c_cross_R = r * (1 - params.sigma1) * params.a_L / (params.sigma1 * params.A_R)
        self.g_diag = np.array([params.sigma1 * params.k1 / params.A_L,
                                params.sigma2 * params.k2 / params.A_R])
        super().__init__(n_z=2, n_x=2, n_u=2, H=self.H, F=self.F, G=self.G,
                         G_inv=self.G_inv, guard=self.guard, name=name)

    # radicands ---------------------------------------------------------
    def upper_levels(self, z, x):
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        return z[..., 0] + self.T2 * x[..., 1], z[..., 1] + self.T1 * x[..., 0]

    def guard(self, z, x) -> bool:
        h3, h4 = self.upper_levels(z, x)
        return bool(np.all(np.asarray(x) >= 0) and np.all(h3 >= 0) and np.all(h4 >= 0))

    def _roots(self, z, x, clamp):
        x = np.asarray(x, dtype=float)
        h3, h4 = self.upper_levels(z, x)
        rad = (x[..., 0], x[..., 1], h3, h4)
        if not clamp and any(np.any(v < 0) for v in rad):
            raise DomainError("negative radicand: a tank level would be below zero")
        return tuple(np.sqrt(np.maximum(v, 0.0)) for v in rad)

    # vector fields -----------------------------------------------------
    def H(self, z, x, clamp: bool = False):
        s1, s2, s3, s4 = self._roots(z, x, clamp)
        return np.stack([-self.c_out_L * s3 + self.c_cross_L * (s2 - s4),
                         -self.c_out_R * s4 + self.c_cross_R * (s1 - s3)], axis=-1)

    def F(self, z, x, clamp: bool = False):
        s1, s2, s3, s4 = self._roots(z, x, clamp)
        return np.stack([self.c_out_L * (s3 - s1), self.c_out_R * (s4 - s2)], axis=-1)

    def G(self, u):
        return np.asarray(u, dtype=float) * self.g_diag

    def G_inv(self, v):
        return np.asarray(v, dtype=float) / self.g_diag

    def ginv_F(self, z, x, clamp: bool = False):
        return self.G_inv(self.F(z, x, clamp=clamp))

    def dF_dz(self, z, x, clamp: bool = False):
        """Analytic ``dF/dz``; diagonal because each F_i depends on one upper tank.

        With ``clamp=True`` the slope is zero where the upper tank is empty.
        """
        h3, h4 = self.upper_levels(z, x)
        if not clamp and (np.any(h3 <= 0) or np.any(h4 <= 0)):
            raise DomainError("slope undefined at an empty upper tank")
        d1 = np.where(h3 > 0, self.c_out_L / (2.0 * np.sqrt(np.where(h3 > 0, h3, 1.0))), 0.0)
        d2 = np.where(h4 > 0, self.c_out_R / (2.0 * np.sqrt(np.where(h4 > 0, h4, 1.0))), 0.0)
        out = np.zeros(np.shape(d1) + (2, 2))
        out[..., 0, 0] = d1
        out[..., 1, 1] = d2
        return out

    def dginvF_dz(self, z, x, clamp: bool = False):
        return self.dF_dz(z, x, clamp=clamp) / self.g_diag[:, None]

    def dH_dz(self, z, x):
        """Analytic ``dH/dz`` (used for the zero-dynamics linearization)."""
        h3, h4 = self.upper_levels(z, x)
        if np.any(np.asarray(h3) <= 0) or np.any(np.asarray(h4) <= 0):
            raise DomainError("slope undefined at an empty upper tank")
        a3 = 1.0 / (2.0 * np.sqrt(h3))
        a4 = 1.0 / (2.0 * np.sqrt(h4))
        return np.array([[-self.c_out_L * a3, -self.c_cross_L * a4],
                         [-self.c_cross_R * a3, -self.c_out_R * a4]])

    def physical_levels(self, z, x):
        """Map normal-form coordinates back to (h1, h2, h3, h4)."""
        h3, h4 = self.upper_levels(z, x)
        x = np.asarray(x, dtype=float)
        return np.array([x[0], x[1], h3, h4])

    def kernel_coeffs(self) -> np.ndarray:
        """Packed coefficients consumed by the compiled closed-loop engine."""
        return np.array([self.T1, self.T2, self.c_out_L, self.c_out_R,
                         self.c_cross_L, self.c_cross_R, self.g_diag[0], self.g_diag[1]])


def four_tank_actual(params: FourTankParams = ACTUAL_PARAMS) -> FourTankPlant:
    """The true plant."""
    return FourTankPlant(params.validate(), name="four_tank_actual")


def four_tank_nominal(params: FourTankParams = NOMINAL_PARAMS) -> FourTankPlant:
    """The model shared by the defender and the attacker."""
    return FourTankPlant(params.validate(), name="four_tank_nominal")


# ---------------------------------------------------------------------------
# Controller


DEFAULT_KP = (0.75, -0.06)
DEFAULT_KI = (0.0068, -0.00027)


@dataclass
class PIController:
    """Decentralized PI tracking controller with static level feedforward.

    ``u = M_ff^{-1} (a_L sqrt(2 g r1), a_R sqrt(2 g r2)) + s (kp (y - r) + ki c)``
    with ``c' = y - r``. ``feedback_sign`` ``s`` defaults to ``-1``, i.e. the
    gains act on ``r - y``; ``+1`` gives the alternative sign convention.
    """

    params: FourTankParams
    kp: np.ndarray = field(default_factory=lambda: np.diag(DEFAULT_KP))
    ki: np.ndarray = field(default_factory=lambda: np.diag(DEFAULT_KI))
    feedback_sign: float = -1.0
    c: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.kp = np.asarray(self.kp, dtype=float)
        self.ki = np.asarray(self.ki, dtype=float)
        if self.kp.ndim == 1:
            self.kp = np.diag(self.kp)
        if self.ki.ndim == 1:
            self.ki = np.diag(self.ki)
        self.c = np.asarray(self.c, dtype=float).copy()
        p = self.params
        self.M_ff = np.array([[p.sigma1 * p.k1, (1 - p.sigma2) * p.k2],
                              [(1 - p.sigma1) * p.k1, p.sigma2 * p.k2]])
        if abs(np.linalg.det(self.M_ff)) < 1e-12:
            raise SolveError("feedforward mixing matrix is singular")
        self.M_ff_inv = np.linalg.inv(self.M_ff)
        self.outflow = np.array([p.a_L, p.a_R]) * math.sqrt(2.0 * p.gravity)

    def feedforward(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise DomainError("reference must be strictly positive for the feedforward term")
        return self.M_ff_inv @ (self.outflow * np.sqrt(r))

    def output(self, y, r, c=None):
        c = self.c if c is None else c
        y = np.asarray(y, dtype=float)
        r = np.asarray(r, dtype=float)
        return self.feedforward(r) + self.feedback_sign * (self.kp @ (y - r) + self.ki @ c)

    @staticmethod
    def integrator_rate(y, r):
        return np.asarray(y, dtype=float) - np.asarray(r, dtype=float)

    def integrator_for(self, u, r):
        """Integrator value that makes the output equal ``u`` at zero tracking error."""
        return np.linalg.solve(self.feedback_sign * self.ki, np.asarray(u) - self.feedforward(r))

    def reset(self, c=None):
        self.c = np.zeros(2) if c is None else np.asarray(c, dtype=float).copy()


def pi_controller_step(ctrl: PIController, y, y_ref, dt: float | None = None):
    """Controller output for the current sample; advances ``ctrl.c`` when ``dt`` is given.

    The integrator rate is constant over a step with held ``y`` and ``y_ref``,
    so the RK4 update reduces to an Euler increment.
    """
    u = ctrl.output(y, y_ref)
    if dt is not None:
        ctrl.c = ctrl.c + dt * ctrl.integrator_rate(y, y_ref)
    return u


# ---------------------------------------------------------------------------
# Operating point


@dataclass(frozen=True)
class OperatingPoint:
    """Attack-free equilibrium for a constant reference.

    ``z_star``/``u_c_star`` belong to the true plant, ``z_star_n``/``u_n_star``
    to the nominal model at the same output level ``x_star``.
    """

    x_star: np.ndarray
    z_star: np.ndarray
    z_star_n: np.ndarray
    u_c_star: np.ndarray
    u_n_star: np.ndarray

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)]
                for k in ("x_star", "z_star", "z_star_n", "u_c_star", "u_n_star")}


def _zero_dynamics_root(plant: PlantNormalForm, x_star):
    x_star = np.asarray(x_star, dtype=float)
    if isinstance(plant, FourTankPlant):
        guess = np.array([0.5 * x_star[0] - plant.T2 * x_star[1], 0.5 * x_star[1] - plant.T1 * x_star[0]])
        fun = lambda z: plant.H(z, x_star, clamp=True)
        jac = lambda z: plant.dH_dz(z, x_star)
    else:
        guess = np.zeros(plant.n_z)
        fun = lambda z: np.asarray(plant.H(z, x_star))
        jac = None
    sol = optimize.root(fun, guess, jac=jac, method="hybr", tol=1e-13)
    z = sol.x
    if np.max(np.abs(fun(z))) > 1e-10:
        raise NoConvergence(f"{plant.name}: zero-dynamics equilibrium not found ({sol.message})")
    return z


def solve_operating_point(plant: PlantNormalForm, nominal: PlantNormalForm,
                          controller: PIController | None, y_ref, *, verify: bool = False,
                          horizon: float = 5000.0) -> OperatingPoint:
    """Equilibrium of the attack-free loop with output held at ``y_ref``.

    Integral action pins ``x* = y_ref``. The internal states solve
    ``H(z, x*) = 0`` and the input cancels the output drift. With ``verify``
    the true loop is also relaxed from a perturbed start to confirm that the
    same point attracts it.
    """
    x_star = np.asarray(y_ref, dtype=float).copy()
    z_star = _zero_dynamics_root(plant, x_star)
    z_star_n = _zero_dynamics_root(nominal, x_star)
    u_c_star = -np.asarray(plant.G_inv(plant.F(z_star, x_star)))
    u_n_star = -np.asarray(nominal.G_inv(nominal.F(z_star_n, x_star)))
    op = OperatingPoint(x_star, z_star, z_star_n, u_c_star, u_n_star)
    if verify:
        if controller is None:
            raise ValueError("relaxation needs the controller")
        relaxed = relax_operating_point(plant, controller, x_star,
                                        np.concatenate([z_star + 1e-5, x_star + 1e-5, np.zeros(2)]),
                                        horizon=horizon)
        if np.max(np.abs(relaxed[: plant.n_z] - z_star)) > 1e-6:
            raise NoConvergence("relaxation settled away from the algebraic equilibrium")
    return op


def relax_operating_point(plant: PlantNormalForm, controller: PIController, y_ref, start,
                          horizon: float = 5000.0, tol: float = 1e-8, window: float = 10.0):
    """Integrate the attack-free loop until the state rate stays below ``tol`` for ``window`` seconds."""
    y_ref = np.asarray(y_ref, dtype=float)
    nz, nx = plant.n_z, plant.n_x

    def rhs(_t, s):
        z, x, c = s[:nz], s[nz:nz + nx], s[nz + nx:]
        u = controller.output(x, y_ref, c)
        dz, dx = plant.rates(z, x, u)
        return np.concatenate([dz, dx, controller.integrator_rate(x, y_ref)])

    t_eval = np.arange(0.0, horizon + 1e-9, 1.0)
    sol = solve_ivp(rhs, (0.0, horizon), np.asarray(start, dtype=float), method="LSODA",
                    t_eval=t_eval, rtol=1e-11, atol=1e-13)
    if not sol.success:
        raise NoConvergence(sol.message)
    rates = np.array([np.max(np.abs(rhs(0.0, s))) for s in sol.y.T])
    run = 0
    for i, r in enumerate(rates):
        run = run + 1 if r < tol else 0
        if run > window:
            return sol.y[:, i]
    raise NoConvergence(f"state rate still {rates[-1]:.3g} after {horizon} s")


def zero_dynamics_eigenvalues(plant: FourTankPlant, z_star, x_star) -> np.ndarray:
    """Eigenvalues of the zero dynamics linearized at ``(z*, x*)``."""
    return np.linalg.eigvals(plant.dH_dz(z_star, x_star))


# ---------------------------------------------------------------------------
# Assumption constants


@dataclass(frozen=True)
class AssumptionConstants:
    """Sampled surrogates for the Lipschitz and Lyapunov constants.

    They drive warnings only. ``c1``-``c4`` come from the quadratic
    Lyapunov candidate ``V = |e|^2`` on the linearized attack-free loop, so
    ``c1 = c2 = 1`` and ``c4 = 2``; ``c3`` is twice the smallest eigenvalue of
    the negated symmetric part of the loop Jacobian (NaN if no loop is given).
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c7: float
    c8: float
    c9: float
    seed: int
    n_pairs: int
    gain_condition_warning: bool
    adaptation_gain_bound: float

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


def lipschitz_ratios(f: Callable, lo, hi, n_pairs: int = 100_000, rng=None) -> tuple:
    """Smallest and largest ``|f(p) - f(q)| / |p - q|`` over sampled pairs in a box.

    Half the pairs are drawn independently across the box. The other half are
    close neighbours, so the local slope extremes are reached as well.
    ``f`` must accept a batch of points with shape ``(n, d)``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise DegenerateBox(f"box has an empty side: lo={lo}, hi={hi}")
    rng = np.random.default_rng(0) if rng is None else rng
    n_far = n_pairs // 2
    n_near = n_pairs - n_far
    width = hi - lo
    p = lo + width * rng.random((n_pairs, lo.size))
    q = np.empty_like(p)
    q[:n_far] = lo + width * rng.random((n_far, lo.size))
    d = rng.normal(size=(n_near, lo.size))
    d *= (1e-4 * np.min(width)) / np.linalg.norm(d, axis=1, keepdims=True)
    q[n_far:] = np.clip(p[n_far:] + d, lo, hi)
    dp = np.linalg.norm(p - q, axis=1)
    keep = dp > 1e-12 * np.max(width)
    fp = np.asarray(f(p[keep]), dtype=float).reshape(int(keep.sum()), -1)
    fq = np.asarray(f(q[keep]), dtype=float).reshape(int(keep.sum()), -1)
    ratio = np.linalg.norm(fp - fq, axis=1) / dp[keep]
    return float(ratio.min()), float(ratio.max())


def estimate_constants(plant: FourTankPlant, nominal: FourTankPlant, box, *,
                       n_pairs: int = 100_000, seed: int = 0, input_box=(-10.0, 10.0),
                       loop_jacobian: np.ndarray | None = None) -> AssumptionConstants:
    """Monte-Carlo estimates of the assumption constants over a state box.

    ``box`` is ``(lo, hi)`` over the stacked state ``(z, x)``; it must keep all
    tank levels positive. ``loop_jacobian`` is the Jacobian of the attack-free
    closed loop, used for the decay-rate surrogate.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if np.any(hi <= lo):
        raise DegenerateBox(f"box has an empty side: lo={lo}, hi={hi}")
    nz = plant.n_z
    rng = np.random.default_rng(seed)
    m = max(2, n_pairs // 4)

    def zx(fun, model):
        return lambda s: fun(model, s[:, :nz], s[:, nz:])

    slopes = []
    for model in (plant, nominal):
        slopes.append(lipschitz_ratios(zx(lambda mdl, z, x: mdl.H(z, x), model), lo, hi, m, rng)[1])
        slopes.append(lipschitz_ratios(zx(lambda mdl, z, x: mdl.F(z, x), model), lo, hi, m, rng)[1])
        slopes.append(float(np.max(np.abs(model.g_diag))))
    c5 = max(slopes)

    ulo = np.full(nominal.n_u, input_box[0])
    uhi = np.full(nominal.n_u, input_box[1])
    c7, c8 = lipschitz_ratios(nominal.G_inv, ulo, uhi, m, rng)

    x_mid = 0.5 * (lo[nz:] + hi[nz:])
    c9 = lipschitz_ratios(lambda z: nominal.F(z, np.broadcast_to(x_mid, z.shape)), lo[:nz], hi[:nz], m, rng)[0]

    c1 = c2 = 1.0
    c4 = 2.0
    if loop_jacobian is not None:
        sym = 0.5 * (loop_jacobian + loop_jacobian.T)
        c3 = float(2.0 * np.min(np.linalg.eigvalsh(-sym)))
    else:
        c3 = float("nan")
    warn = bool(not (c3 > 6.0 * c5 * c4))
    if warn:
        warnings.warn(f"decay-rate surrogate c3={c3:.4g} does not exceed 6*c5*c4={6 * c5 * c4:.4g}",
                      RuntimeWarning, stacklevel=2)
    bound = c4 / (c7 * c9) if c7 * c9 > 0 else float("inf")
    return AssumptionConstants(c1, c2, c3, c4, float(c5), float(c7), float(c8), float(c9),
                               int(seed), int(n_pairs), warn, float(bound))


def closed_loop_jacobian(plant: PlantNormalForm, controller: PIController, op: OperatingPoint) -> np.ndarray:
    """Finite-difference Jacobian of the attack-free plant plus PI loop at ``op``."""
    nz, nx = plant.n_z, plant.n_x
    r = op.x_star

    def rhs(s):
        z, x, c = s[:nz], s[nz:nz + nx], s[nz + nx:]
        dz, dx = plant.rates(z, x, controller.output(x, r, c))
        return np.concatenate([dz, dx, controller.integrator_rate(x, r)])

    return finite_diff_jacobian(rhs, np.concatenate([op.z_star, op.x_star, np.zeros(nx)]))
