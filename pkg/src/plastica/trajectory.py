"""Observable dynamics dx/dt = a(x, t) driven by analytic, switching or
grid-sampled right-hand sides, integrated with fixed-step RK4."""

import bisect
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, GridExitError, NumericError
from .plastic_field import multilinear
from . import io


def switching_rhs(x, t, t0=0.0):
    """-x up to and including the switch time t0, x(1 - x^2) after it."""
    x = np.asarray(x, dtype=float)
    if t <= t0:
        return -x
    return x * (1.0 - x * x)


@dataclass
class RhsSource:
    """Right-hand side a(x, t) evaluated on point arrays of shape (N, d).

    Build one with :meth:`analytic`, :meth:`switching` or
    :meth:`from_snapshots` rather than directly.
    """
    kind: str
    dim: int
    f: Optional[Callable] = None
    pre_switch: Optional[Callable] = None
    post_switch: Optional[Callable] = None
    switch_time: float = 0.0
    snapshots: Sequence = ()
    hold_before: bool = False
    name: str = ""
    _times: np.ndarray = field(default=None, repr=False)
    _values: np.ndarray = field(default=None, repr=False)

    @classmethod
    def analytic(cls, f, dim, name=""):
        return cls("analytic", dim, f=f, name=name)

    @classmethod
    def switching(cls, pre, post, switch_time, dim, name=""):
        return cls("switching", dim, pre_switch=pre, post_switch=post,
                   switch_time=switch_time, name=name)

    @classmethod
    def from_snapshots(cls, snapshots, hold_before=False, name=""):
        """Linear-in-time blend of multilinearly interpolated grids.

        With ``hold_before`` the first snapshot is used for all earlier times
        (the frozen "artificial past").
        """
        snaps = list(snapshots)
        if not snaps:
            raise ValueError("no snapshots")
        times = np.array([s.t for s in snaps], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        if any(s.axes != snaps[0].axes for s in snaps):
            raise ValueError("snapshots live on different grids")
        src = cls("field-snapshots", snaps[0].dim, snapshots=snaps,
                  hold_before=hold_before, name=name)
        src._times = times
        src._values = np.stack([s.a_values for s in snaps])
        return src

    @property
    def grid(self):
        return self.snapshots[0] if self.snapshots else None

    def time_range(self):
        if self.kind != "field-snapshots":
            return (-np.inf, np.inf)
        return (-np.inf if self.hold_before else self._times[0], self._times[-1])

    def inside(self, X):
        if self.kind != "field-snapshots":
            return np.ones(len(X), dtype=bool)
        return self.grid.contains(X, margin=-1e-12)

    def __call__(self, X, t):
        X = np.asarray(X, dtype=float)
        if self.kind == "analytic":
            return np.asarray(self.f(X, t), dtype=float)
        if self.kind == "switching":
            g = self.pre_switch if t <= self.switch_time else self.post_switch
            return np.asarray(g(X, t), dtype=float)
        return self._blend(X, t)

    def at_times(self, X, ts):
        """Evaluate with point i at its own time ts[i]."""
        X = np.asarray(X, dtype=float)
        ts = np.asarray(ts, dtype=float)
        if self.kind != "field-snapshots":
            return np.vstack([self(X[i:i + 1], t) for i, t in enumerate(ts)])
        times = self._times
        lo, hi = self.time_range()
        if np.any(ts < lo - 1e-12) or np.any(ts > hi + 1e-9 * max(1.0, abs(hi))):
            raise DomainError(f"times outside snapshot range [{lo}, {hi}]", None, (lo, hi))
        if len(times) == 1:
            return multilinear(self.grid, self._values[0], X)
        i = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, len(times) - 2)
        w = np.clip((ts - times[i]) / (times[i + 1] - times[i]), 0.0, 1.0)[:, None]
        a0 = multilinear(self.grid, self._values, X, lead=i)
        a1 = multilinear(self.grid, self._values, X, lead=i + 1)
        return np.where(w == 0.0, a0, np.where(w == 1.0, a1, (1.0 - w) * a0 + w * a1))

    def _blend(self, X, t):
        times = self._times
        lo, hi = self.time_range()
        if not (lo - 1e-12 <= t <= hi + 1e-9 * max(1.0, abs(hi))):
            raise DomainError(f"t={t!r} outside snapshot range [{lo}, {hi}]", t, (lo, hi))
        inside = self.inside(X)
        if not inside.all():
            bad = X[np.argmin(inside)]
            raise DomainError(f"x={bad.tolist()} outside grid box", bad, self.grid.axes)
        grid = self.grid
        if t <= times[0]:
            return multilinear(grid, self._values[0], X)
        i = min(bisect.bisect_right(times, t) - 1, len(times) - 2)
        if len(times) == 1:
            return multilinear(grid, self._values[0], X)
        w = (t - times[i]) / (times[i + 1] - times[i])
        a0 = multilinear(grid, self._values[i], X)
        if w == 0.0:
            return a0
        a1 = multilinear(grid, self._values[i + 1], X)
        if w == 1.0:
            return a1
        return (1.0 - w) * a0 + w * a1


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    provenance: dict = field(default_factory=dict)
    status: str = "ok"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self):
        return self.states[-1]


def _steps(t0, t1, dt):
    if not t1 > t0:
        raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / n
    times = t0 + h * np.arange(n + 1)
    times[-1] = t1
    return times, h


def _rk4_step(src, X, t, h):
    k1 = src(X, t)
    k2 = src(X + h / 2 * k1, t + h / 2)
    k3 = src(X + h / 2 * k2, t + h / 2)
    k4 = src(X + h * k3, t + h)
    return X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _propagate_chunk(src, X, times, record):
    out = [X] if record else None
    for i in range(len(times) - 1):
        t, h = times[i], times[i + 1] - times[i]
        try:
            Xn = _rk4_step(src, X, t, h)
        except DomainError as exc:
            if isinstance(exc.value, np.ndarray):
                raise GridExitError(f"trajectory left the grid box during step from t={t!r}",
                                    t, X, (times[:i + 1], out)) from exc
            raise
        if not np.all(np.isfinite(Xn)):
            raise NumericError(f"non-finite state after step to t={times[i + 1]!r}")
        if not src.inside(Xn).all():
            raise GridExitError(f"trajectory left the grid box at t={times[i + 1]!r}",
                                times[i + 1], Xn, (times[:i + 1], out))
        X = Xn
        if record:
            out.append(X)
    return np.stack(out) if record else X


def propagate(src, X, t0, t1, dt, record=False, threads=1):
    """Evolve a cloud X (N, d) from t0 to t1.

    Returns the final cloud, or ``(times, states)`` with states of shape
    (T, N, d) when ``record`` is set. Points are independent, so splitting the
    cloud across ``threads`` gives the same numbers as a single pass.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    times, _ = _steps(t0, t1, dt)
    if threads <= 1 or len(X) < 2 * threads:
        res = _propagate_chunk(src, X, times, record)
    else:
        parts = np.array_split(X, threads)
        with ThreadPoolExecutor(threads) as ex:
            outs = list(ex.map(lambda P: _propagate_chunk(src, P, times, record), parts))
        res = np.concatenate(outs, axis=-2)
    return (times, res) if record else res


def integrate_trajectory(src, x0, t0, t1, dt, on_exit="raise", provenance=None):
    """RK4 trajectory with dense output at every step.

    If the state leaves the grid box, ``on_exit="raise"`` raises
    :class:`GridExitError` (carrying exit time and state) and ``"stop"``
    returns the trajectory up to the last in-box state with status "exited".
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != src.dim:
        raise ValueError(f"x0 has dimension {x0.shape[0]}, source has {src.dim}")
    if not src.inside(x0[None, :]).all():
        raise GridExitError("initial state outside grid box", t0, x0)
    prov = dict(provenance or {})
    try:
        times, states = propagate(src, x0[None, :], t0, t1, dt, record=True)
    except GridExitError as exc:
        if on_exit != "stop" or exc.partial is None:
            raise
        ts, st = exc.partial
        return Trajectory(ts, np.stack(st)[:, 0, :], prov, status="exited")
    return Trajectory(times, states[:, 0, :], prov)


def velocity_magnitude_series(traj, src):
    """|a(x(t_i), t_i)| along a trajectory."""
    return np.linalg.norm(src.at_times(traj.states, traj.times), axis=1)


def fit_velocity_bound(times, speeds, fit_window, check_window):
    """Fit C = max t |v| on ``fit_window`` and test |v| <= C / t on ``check_window``.

    Returns a dict with C, the violation fraction and the worst ratio
    t |v| / C on the check window.
    """
    times = np.asarray(times)
    speeds = np.asarray(speeds)
    fit = (times >= fit_window[0]) & (times <= fit_window[1])
    chk = (times > check_window[0]) & (times <= check_window[1])
    if not fit.any() or not chk.any():
        raise ValueError("velocity windows contain no samples")
    C = float(np.max(times[fit] * speeds[fit]))
    return check_velocity_bound(times, speeds, C, check_window)


def field_velocity_envelope(snapshots, window):
    """C = max t * max_z |a(z, t)| over snapshots with t in ``window``.

    This bounds the speed of every trajectory that stays on the grid, so it
    can stand in for C when checking |v| <= C / t on a later window.
    """
    lo, hi = window
    vals = [s.t * float(np.max(np.linalg.norm(s.a_values, axis=-1)))
            for s in snapshots if lo - 1e-12 <= s.t <= hi + 1e-12]
    if not vals:
        raise ValueError("no snapshots inside the fit window")
    return max(vals)


def check_velocity_bound(times, speeds, C, check_window):
    """Fraction of samples in ``check_window`` with t |v| > C, and the worst t |v| / C."""
    times = np.asarray(times)
    speeds = np.asarray(speeds)
    chk = (times > check_window[0]) & (times <= check_window[1])
    if not chk.any():
        raise ValueError("check window contains no samples")
    ratio = times[chk] * speeds[chk] / C if C > 0 else np.where(speeds[chk] > 0, np.inf, 0.0)
    return {"C": float(C), "violation_fraction": float(np.mean(ratio > 1.0)),
            "worst_ratio": float(np.max(ratio)), "n_checked": int(chk.sum())}


def save_trajectory(traj, csv_path, settings=None):
    csv_path = Path(csv_path)
    d = traj.states.shape[1]
    io.write_matrix(csv_path, ["t"] + [f"x_{j + 1}" for j in range(d)],
                    [traj.times] + [traj.states[:, j] for j in range(d)])
    sidecar = csv_path.with_suffix(".json")
    io.write_json(sidecar, {"provenance": traj.provenance, "status": traj.status,
                            "integrator": dict(settings or {}, method="rk4")})
    return csv_path, sidecar


def load_trajectory(csv_path):
    import json
    csv_path = Path(csv_path)
    _, _, arr = io.read_table(csv_path)
    info = {}
    side = csv_path.with_suffix(".json")
    if side.exists():
        info = json.loads(side.read_text())
    return Trajectory(arr[:, 0], arr[:, 1:], info.get("provenance", {}), info.get("status", "ok"))
