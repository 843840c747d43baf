"""Fixed-step integration, trajectory recording and numeric differentiation."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .errors import DomainError, GridMismatch, NonFiniteState


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t_end``."""

    t0: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.t0:
            raise ValueError(f"t_end ({self.t_end}) precedes t0 ({self.t0})")
        ratio = (self.t_end - self.t0) / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"horizon {self.t_end - self.t0} is not a whole number of steps of {self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t0) / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def __len__(self):
        return self.n_steps + 1


@dataclass
class StateVector:
    """Labelled state vector. All entries must stay finite."""

    values: np.ndarray
    labels: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        self.labels = tuple(self.labels)
        if self.values.ndim != 1 or len(self.labels) != self.values.size:
            raise ValueError("labels must match a 1-D value vector")
        check_finite(self.values, self.labels)

    def __getitem__(self, label):
        return self.values[self.labels.index(label)]


def check_finite(values, labels=None, t=None):
    """Raise :class:`NonFiniteState` naming the first non-finite component."""
    values = np.asarray(values)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        name = labels[i] if labels is not None else f"component {i}"
        where = f" at t={t:.9g}" if t is not None else ""
        raise NonFiniteState(f"non-finite value in {name}{where}", t=t, column=name)


@dataclass
class Trajectory:
    """Named time series sampled on a :class:`TimeGrid`."""

    grid: TimeGrid
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        for name, values in dict(self.columns).items():
            cols[name] = self._checked(name, values)
        self.columns = cols

    def _checked(self, name, values):
        arr = np.asarray(values, dtype=float)
        if arr.shape != (len(self.grid),):
            raise ValueError(f"column {name!r} has shape {arr.shape}, expected ({len(self.grid)},)")
        return arr

    def add(self, name, values):
        if name in self.columns or name == "t":
            raise ValueError(f"duplicate column {name!r}")
        self.columns[name] = self._checked(name, values)

    @property
    def t(self) -> np.ndarray:
        return self.grid.times

    def __getitem__(self, name):
        if name == "t":
            return self.t
        return self.columns[name]

    def __contains__(self, name):
        return name == "t" or name in self.columns

    def stack(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self[n] for n in names])

    def window(self, start, stop, closed=True) -> np.ndarray:
        """Boolean mask of samples with ``start <= t <= stop`` (``< stop`` if not closed)."""
        t = self.t
        eps = 1e-9 * max(1.0, abs(stop))
        return (t >= start - eps) & ((t <= stop + eps) if closed else (t < stop - eps))

    def to_csv(self, path=None) -> str:
        """Write ``t`` plus every column in ``%.9g``; returns the CSV text."""
        names = ["t", *self.columns]
        data = np.column_stack([self.t, *self.columns.values()]) if self.columns else self.t[:, None]
        buf = io.StringIO()
        np.savetxt(buf, data, fmt="%.9g", delimiter=",", header=",".join(names), comments="")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def same_grid(a: Trajectory, b: Trajectory) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"grids differ: {a.grid} vs {b.grid}")


def rk4_step(f: Callable, t: float, x, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``x' = f(t, x)``."""
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f(t, x), dtype=float)
    check_finite(k1, t=t)
    k2 = np.asarray(f(t + 0.5 * dt, x + 0.5 * dt * k1), dtype=float)
    check_finite(k2, t=t + 0.5 * dt)
    k3 = np.asarray(f(t + 0.5 * dt, x + 0.5 * dt * k2), dtype=float)
    check_finite(k3, t=t + 0.5 * dt)
    k4 = np.asarray(f(t + dt, x + dt * k3), dtype=float)
    check_finite(k4, t=t + dt)
    out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    check_finite(out, t=t + dt)
    return out


class SteppedSystem(Protocol):
    """Coupled blocks advanced in lockstep by :func:`simulate`.

    ``sample`` is called once per grid point before the step. It returns the
    recorded signals and may latch held inputs (measurements, switches) that
    ``derivative`` then uses for all four RK4 stages.
    """

    labels: Sequence[str]

    def initial_state(self) -> np.ndarray: ...

    def sample(self, k: int, t: float, state: np.ndarray) -> Mapping[str, float]: ...

    def derivative(self, t: float, state: np.ndarray) -> np.ndarray: ...


def simulate(system: SteppedSystem, grid: TimeGrid, columns: Sequence[str] | None = None) -> Trajectory:
    """Run ``system`` over ``grid`` and record states plus sampled signals."""
    n = grid.n_steps
    labels = list(system.labels)
    state = np.asarray(system.initial_state(), dtype=float).copy()
    check_finite(state, labels, grid.t0)
    states = np.empty((n + 1, state.size))
    signals: dict = {}
    for k in range(n + 1):
        t = grid.t0 + k * grid.dt
        rec = system.sample(k, t, state)
        states[k] = state
        for name, val in rec.items():
            signals.setdefault(name, np.empty(n + 1))[k] = val
        if k == n:
            break
        try:
            state = rk4_step(system.derivative, t, state, grid.dt)
        except NonFiniteState as exc:
            name = labels[int(exc.column.split()[-1])] if str(exc.column).startswith("component") else exc.column
            raise NonFiniteState(f"simulation fault in {name} at t={exc.t:.9g}", t=exc.t, column=name) from exc
        bad = ~np.isfinite(state)
        if bad.any():
            name = labels[int(np.flatnonzero(bad)[0])]
            raise NonFiniteState(f"non-finite {name} at t={t + grid.dt:.9g}", t=t + grid.dt, column=name)
    cols = {name: states[:, i] for i, name in enumerate(labels)}
    cols.update(signals)
    if columns is not None:
        cols = {name: cols[name] for name in columns}
    return Trajectory(grid, cols)


def jacobian_step(w) -> float:
    """Central-difference step scaled to the magnitude of ``w``."""
    return 1e-6 * max(1.0, float(np.max(np.abs(w))) if np.size(w) else 1.0)


def finite_diff_jacobian(g: Callable, w, h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian of ``g`` at ``w``.

    Any probe that raises :class:`DomainError` or returns a non-finite value is
    reported as a :class:`DomainError`.
    """
    w = np.asarray(w, dtype=float)
    if h is None:
        h = jacobian_step(w)
    if not h > 0:
        raise ValueError("h must be positive")
    cols = []
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        try:
            gp = np.asarray(g(w + e), dtype=float)
            gm = np.asarray(g(w - e), dtype=float)
        except DomainError as exc:
            raise DomainError(f"probe along component {j} left the domain: {exc}") from exc
        if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))):
            raise DomainError(f"probe along component {j} produced a non-finite value")
        cols.append((gp - gm) / (2.0 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def sqrt_clamped(v):
    """Square root with negative radicands clamped to zero."""
    return np.sqrt(np.maximum(v, 0.0))

