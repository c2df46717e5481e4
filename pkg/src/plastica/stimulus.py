"""Stimulus signals sampled on a two-sided time grid.

A :class:`StimulusPath` is an immutable array of m-vectors at equally spaced
times together with an interpolation rule. Paths are produced either from a
deterministic function of time or as Euler-Maruyama sample paths of a scalar
(or componentwise) Ito SDE ``d eta = h(eta) dt + sigma dW``.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numba
import numpy as np
from scipy import integrate

from .errors import DomainError, NumericError
from . import io

INTERPOLATIONS = ("piecewise-linear", "piecewise-constant")

# relative distance (in units of dt) under which a time snaps onto a node
_SNAP = 1e-9


@dataclass(frozen=True)
class StimulusPath:
    t_min: float
    t_max: float
    dt: float
    values: np.ndarray
    interpolation: str = "piecewise-linear"
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_min < self.t_max:
            raise ValueError(f"empty time window [{self.t_min}, {self.t_max}]")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        n = n_nodes(self.t_min, self.t_max, self.dt)
        if vals.shape[0] != n:
            raise ValueError(f"expected {n} samples on the grid, got {vals.shape[0]}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.t_min + self.dt * np.arange(self.values.shape[0])

    def __call__(self, t):
        return eval_stimulus(self, t)


@dataclass(frozen=True)
class SdeSpec:
    drift: Callable
    diffusion: float
    eta0: float = 0.0

    def __post_init__(self):
        if self.diffusion < 0:
            raise ValueError("diffusion must be non-negative")


def n_nodes(t_min, t_max, dt):
    return int(round((t_max - t_min) / dt)) + 1


@numba.njit(cache=True)
def double_well_drift(u):
    """h(u) = 3(u - u^3)/5."""
    return 3.0 * (u - u * u * u) / 5.0


def double_well_potential(u):
    """V with V' = h, i.e. (3/5)(u^2/2 - u^4/4)."""
    return 0.6 * (u * u / 2.0 - u ** 4 / 4.0)


def make_deterministic_path(f, t_min, t_max, dt, interpolation="piecewise-linear"):
    """Sample ``f`` at every node ``t_min + i*dt``.

    ``f`` is called once per node with a float and may return a scalar or an
    m-vector.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_min < t_max:
        raise ValueError(f"empty time window [{t_min}, {t_max}]")
    n = n_nodes(t_min, t_max, dt)
    rows = []
    for i in range(n):
        t = t_min + i * dt
        v = np.atleast_1d(np.asarray(f(t), dtype=float))
        if not np.all(np.isfinite(v)):
            raise NumericError(f"stimulus function is not finite at t={t!r}")
        rows.append(v)
    return StimulusPath(t_min, t_max, dt, np.vstack(rows), interpolation)


@numba.njit(cache=True)
def _em_kernel(drift, eta0, dt, noise_scale, xi, guard):
    n = xi.shape[0] + 1
    m = eta0.shape[0]
    out = np.empty((n, m))
    out[0, :] = eta0
    for i in range(n - 1):
        for j in range(m):
            e = out[i, j]
            v = e + drift(e) * dt + noise_scale * xi[i, j]
            if not abs(v) <= guard:
                return out, i + 1
            out[i + 1, j] = v
    return out, -1


def _em_python(drift, eta0, dt, noise_scale, xi, guard):
    n = xi.shape[0] + 1
    out = np.empty((n, eta0.shape[0]))
    out[0] = eta0
    for i in range(n - 1):
        e = out[i]
        v = e + np.asarray(drift(e), dtype=float) * dt + noise_scale * xi[i]
        if not np.all(np.abs(v) <= guard):
            return out, i + 1
        out[i + 1] = v
    return out, -1


def gaussian_increments(seed, n_steps, m):
    # Philox is counter based: the i-th draw does not depend on consumption order elsewhere
    gen = np.random.Generator(np.random.Philox(seed))
    return gen.standard_normal((n_steps, m))


def simulate_sde_path(spec, t_min, t_max, dt, seed, guard=1e6):
    """Euler-Maruyama sample path of ``d eta = h(eta) dt + sigma dW``.

    Same ``(spec, grid, seed)`` gives a bit-identical path. A drift compiled
    with numba runs through a compiled loop; any other callable is applied
    to the m-vector state in a plain loop.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not t_min < t_max:
        raise ValueError(f"empty time window [{t_min}, {t_max}]")
    n = n_nodes(t_min, t_max, dt)
    eta0 = np.atleast_1d(np.asarray(spec.eta0, dtype=float))
    xi = gaussian_increments(seed, n - 1, eta0.shape[0])
    noise_scale = float(spec.diffusion) * math.sqrt(dt)
    if isinstance(spec.drift, numba.core.registry.CPUDispatcher):
        vals, blown = _em_kernel(spec.drift, eta0, float(dt), noise_scale, xi, float(guard))
    else:
        vals, blown = _em_python(spec.drift, eta0, float(dt), noise_scale, xi, float(guard))
    if blown >= 0:
        raise NumericError(
            f"SDE path exceeded guard |eta| > {guard:g} at t={t_min + blown * dt!r}"
        )
    meta = {
        "drift": getattr(spec.drift, "__name__", repr(spec.drift)),
        "diffusion": float(spec.diffusion),
        "eta0": eta0.tolist(),
    }
    return StimulusPath(t_min, t_max, dt, vals, "piecewise-linear", int(seed), meta)


def eval_stimulus(path, t):
    """Interpolated stimulus at ``t`` (scalar -> m-vector, array -> (n, m))."""
    scalar = np.ndim(t) == 0
    if scalar:
        return _eval_scalar(path, float(t))
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = path.t_min, path.t_max
    slack = _SNAP * path.dt
    bad = ~((ts >= lo - slack) & (ts <= hi + slack))
    if np.any(bad):
        tb = float(ts[np.argmax(bad)])
        raise DomainError(
            f"stimulus evaluated at t={tb!r} outside [{lo!r}, {hi!r}]", tb, (lo, hi)
        )
    vals = path.values
    last = vals.shape[0] - 1
    s = (ts - lo) / path.dt
    i = np.floor(s)
    frac = s - i
    i = i.astype(np.int64)
    up = frac > 1.0 - _SNAP
    i[up] += 1
    frac[up] = 0.0
    frac[frac < _SNAP] = 0.0
    i = np.clip(i, 0, last)
    if path.interpolation == "piecewise-constant":
        out = vals[i]
    else:
        j = np.minimum(i + 1, last)
        w = frac[:, None]
        out = np.where(w == 0.0, vals[i], (1.0 - w) * vals[i] + w * vals[j])
    return out[0] if scalar else out


def _eval_scalar(path, t):
    # same arithmetic as the vector branch, without the array overhead
    lo, hi, dt = path.t_min, path.t_max, path.dt
    slack = _SNAP * dt
    if not (lo - slack <= t <= hi + slack):
        raise DomainError(f"stimulus evaluated at t={t!r} outside [{lo!r}, {hi!r}]", t, (lo, hi))
    vals = path.values
    last = vals.shape[0] - 1
    s = (t - lo) / dt
    i = math.floor(s)
    frac = s - i
    if frac > 1.0 - _SNAP:
        i, frac = i + 1, 0.0
    elif frac < _SNAP:
        frac = 0.0
    i = min(max(i, 0), last)
    if frac == 0.0 or path.interpolation == "piecewise-constant":
        return vals[i].copy()
    j = min(i + 1, last)
    return (1.0 - frac) * vals[i] + frac * vals[j]


def stationary_moments(potential, diffusion, bounds=(-np.inf, np.inf), orders=(1, 2, 3, 4)):
    """Raw moments of the density proportional to exp(2 V(u) / sigma^2).

    This is the stationary law of ``d eta = V'(eta) dt + sigma dW``; the
    integrals are computed by adaptive quadrature.
    """
    s2 = float(diffusion) ** 2
    w = lambda u: math.exp(2.0 * potential(u) / s2)
    z, _ = integrate.quad(w, *bounds, limit=200)
    return {k: integrate.quad(lambda u: u ** k * w(u), *bounds, limit=200)[0] / z for k in orders}


def save_path(path, csv_path):
    """Write ``t,eta_1..eta_m`` rows and a JSON sidecar with grid and seed."""
    csv_path = Path(csv_path)
    header = ["t"] + [f"eta_{j + 1}" for j in range(path.m)]
    cols = [path.times] + [path.values[:, j] for j in range(path.m)]
    io.write_matrix(csv_path, header, cols)
    sidecar = csv_path.with_suffix(".json")
    io.write_json(sidecar, {
        "t_min": path.t_min,
        "t_max": path.t_max,
        "dt": path.dt,
        "interpolation": path.interpolation,
        "seed": path.seed,
        "spec": path.meta or None,
    })
    return csv_path, sidecar


def load_path(csv_path):
    csv_path = Path(csv_path)
    _, header, arr = io.read_table(csv_path)
    if header[0] != "t":
        raise ValueError(f"{csv_path}: first column must be 't'")
    sidecar = csv_path.with_suffix(".json")
    if sidecar.exists():
        info = json.loads(sidecar.read_text())
        return StimulusPath(info["t_min"], info["t_max"], info["dt"], arr[:, 1:],
                            info["interpolation"], info["seed"], info.get("spec") or {})
    t = arr[:, 0]
    return StimulusPath(t[0], t[-1], (t[-1] - t[0]) / (len(t) - 1), arr[:, 1:])
