"""Plastic velocity field a(z, t) stored on a uniform spatial grid.

Every node z carries its own copy of the field ODE ``da/dt = c(a, z, eta, t)``;
nodes never interact, so a step is a vectorised RK4 update over all nodes.

For the potential rule the grid carries a scalar potential U and its
gradient. Both obey linear ODEs forced by a Gaussian bump centred on the
stimulus::

    dU/dt     = -k U     - g(z - eta(t))
    d grad/dt = -k grad  - G(z - eta(t)),   G = grad g

and the velocity field is ``a = -f(t) grad U`` with ``f(t) = 1/t`` or a
constant. The gradient is propagated by its own ODE rather than differenced
from U, so it is exact up to time stepping.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericError
from .stimulus import eval_stimulus
from . import io

_SNAP = 1e-9


# --------------------------------------------------------------------------
# Gaussian forcing


def _as_points(z):
    z = np.asarray(z, dtype=float)
    return z[..., None] if z.ndim == 0 else z


def gaussian_bump(z, sigma):
    """g(z) = (2 pi sigma^2)^(-1/2) exp(-|z|^2 / sigma^2).

    The exponent carries sigma^2 rather than 2 sigma^2, so the bump does not
    integrate to one. ``z`` has shape ``(..., d)``; a bare scalar is treated
    as a point in one dimension.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    scalar = np.ndim(z) == 0
    p = _as_points(z)
    r2 = np.sum(p * p, axis=-1)
    out = np.exp(-r2 / sigma ** 2) / math.sqrt(2.0 * math.pi * sigma ** 2)
    return float(out) if scalar else out


def gaussian_bump_grad(z, sigma):
    """G(z) = grad g = -2 z exp(-|z|^2/sigma^2) / (sigma^2 sqrt(2 pi sigma^2))."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    scalar = np.ndim(z) == 0
    p = _as_points(z)
    r2 = np.sum(p * p, axis=-1, keepdims=True)
    pref = -2.0 / (sigma ** 2 * math.sqrt(2.0 * math.pi * sigma ** 2))
    out = pref * p * np.exp(-r2 / sigma ** 2)
    return float(out[0]) if scalar else out


def gaussian_bump_grad_sup(sigma):
    """sup |G|, attained at |z| = sigma / sqrt(2)."""
    return math.sqrt(2.0) * math.exp(-0.5) / (sigma ** 2 * math.sqrt(2.0 * math.pi))


# --------------------------------------------------------------------------
# Rules and grids


@dataclass(frozen=True)
class PlasticRule:
    """Right-hand side of the field equation.

    ``potential-linear`` evolves U and grad U as above with decay ``k`` and
    bump width ``sigma``. ``direct-custom`` integrates ``custom_c(a, z, y, t)``
    directly; the callable receives node arrays ``a, z`` of shape (N, d), the
    stimulus m-vector ``y`` and scalar ``t``, and returns an (N, d) array.
    """
    kind: str = "potential-linear"
    k: float = 0.0
    sigma: float = 1.0
    time_factor: str = "constant"
    gamma: float = 1.0
    t_floor: float = 1.0
    custom_c: Optional[Callable] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("potential-linear", "direct-custom"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind == "potential-linear":
            if not self.sigma > 0:
                raise ValueError("potential-linear rule requires sigma > 0")
            if self.k < 0:
                raise ValueError("decay rate k must be non-negative")
        elif self.custom_c is None:
            raise ValueError("direct-custom rule requires custom_c")
        if self.time_factor not in ("one-over-t", "constant"):
            raise ValueError(f"unknown time factor {self.time_factor!r}")
        if self.time_factor == "one-over-t" and not self.t_floor > 0:
            raise ValueError("one-over-t factor requires t_floor > 0")

    def factor(self, t):
        """Map from potential gradient to field: a = -factor(t) grad U."""
        if self.time_factor == "constant":
            return self.gamma
        if t < self.t_floor - 1e-12:
            raise DomainError(
                f"one-over-t factor used at t={t!r} below t_floor={self.t_floor!r}",
                t, (self.t_floor, math.inf))
        return 1.0 / t

    def log_factor_rate(self, t):
        return -1.0 / t if self.time_factor == "one-over-t" else 0.0

    def as_c(self):
        """The rule written as c(a, z, y, t) acting on the field itself.

        For the potential rule, differentiating a = -f grad U gives
        ``c = (f'/f - k) a + f G(z - y)``.
        """
        if self.kind == "direct-custom":
            return self.custom_c

        def c(a, z, y, t):
            f = self.factor(t)
            drive = gaussian_bump_grad(np.asarray(z) - np.asarray(y), self.sigma)
            return (self.log_factor_rate(t) - self.k) * np.asarray(a) + f * drive

        return c

    def params(self):
        out = {"kind": self.kind, "name": self.name}
        if self.kind == "potential-linear":
            out.update(k=self.k, sigma=self.sigma, time_factor=self.time_factor,
                       gamma=self.gamma, t_floor=self.t_floor)
        return out


@dataclass(frozen=True)
class FieldGrid:
    """Snapshot of the field on a uniform tensor grid.

    ``axes`` is a tuple of ``(lo, hi, n)`` per dimension. ``a_values`` has
    shape ``(n_1, ..., n_d, d)``. Potential grids also carry ``u_values``
    (shape ``(n_1, ..., n_d)``) and the propagated gradient ``grad_u``.
    """
    axes: tuple
    a_values: np.ndarray
    t: float
    u_values: Optional[np.ndarray] = None
    grad_u: Optional[np.ndarray] = None

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        for lo, hi, n in axes:
            if n < 2 or not hi > lo:
                raise ValueError(f"axis ({lo}, {hi}, {n}) must be increasing with >= 2 nodes")
        object.__setattr__(self, "axes", axes)
        shape = self.shape
        d = len(axes)
        for name, want in (("a_values", shape + (d,)), ("u_values", shape),
                           ("grad_u", shape + (d,))):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=float).reshape(want)
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise NumericError(f"{name} not finite at index {tuple(bad)} (t={self.t!r})")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if (self.u_values is None) != (self.grad_u is None):
            raise ValueError("u_values and grad_u must be given together")

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(n for _, _, n in self.axes)

    @property
    def spacing(self):
        return tuple((hi - lo) / (n - 1) for lo, hi, n in self.axes)

    def coords(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in self.axes]

    def nodes(self):
        """All node coordinates, shape (N, d), in C order."""
        mesh = np.meshgrid(*self.coords(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, x, margin=0.0):
        x = np.atleast_2d(x)
        lo = np.array([a[0] for a in self.axes]) + margin
        hi = np.array([a[1] for a in self.axes]) - margin
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def consistency_defect(self, rule):
        """(max |a + f(t) grad U|, max |grad U - finite-difference grad U|)."""
        if self.u_values is None:
            return 0.0, 0.0
        mapped = np.max(np.abs(self.a_values + rule.factor(self.t) * self.grad_u))
        fd = np.stack(_np_gradient(self.u_values, self.coords()), axis=-1)
        return float(mapped), float(np.max(np.abs(fd - self.grad_u)))


def _np_gradient(arr, coords):
    g = np.gradient(arr, *coords, edge_order=2)
    return g if isinstance(g, (list, tuple)) else [g]


def grid_from_function(axes, a_func, t=0.0):
    """Grid whose field values are ``a_func(nodes)`` with nodes of shape (N, d)."""
    proto = FieldGrid(axes, np.zeros(tuple(n for *_, n in axes) + (len(axes),)), t)
    vals = np.asarray(a_func(proto.nodes()), dtype=float)
    return replace(proto, a_values=vals.reshape(proto.a_values.shape))


def potential_grid(axes, u_func, grad_func, rule, t):
    """Potential grid with U = u_func(nodes) and grad U = grad_func(nodes)."""
    proto = FieldGrid(axes, np.zeros(tuple(n for *_, n in axes) + (len(axes),)), t)
    z = proto.nodes()
    u = np.asarray(u_func(z), dtype=float).reshape(proto.shape)
    gu = np.asarray(grad_func(z), dtype=float).reshape(proto.a_values.shape)
    return FieldGrid(proto.axes, -rule.factor(t) * gu, t, u, gu)


# --------------------------------------------------------------------------
# Time stepping


def _rk4(rhs, t, y, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, tuple(a + dt / 2 * b for a, b in zip(y, k1)))
    k3 = rhs(t + dt / 2, tuple(a + dt / 2 * b for a, b in zip(y, k2)))
    k4 = rhs(t + dt, tuple(a + dt * b for a, b in zip(y, k3)))
    return tuple(a + dt / 6 * (p + 2 * q + 2 * r + s)
                 for a, p, q, r, s in zip(y, k1, k2, k3, k4))


def step_nodes(z, state, rule, path, t, dt):
    """One RK4 step for independent nodes ``z`` (N, d).

    ``state`` is ``(u, grad_u)`` for the potential rule and ``(a,)`` otherwise.
    Every arithmetic operation is elementwise over nodes.
    """
    if rule.kind == "potential-linear":
        k, sigma = rule.k, rule.sigma

        def rhs(s, y):
            eta = eval_stimulus(path, s)
            if eta.shape[0] != z.shape[1]:
                raise ValueError("potential rule needs stimulus dimension equal to grid dimension")
            diff = z - eta
            return (-k * y[0] - gaussian_bump(diff, sigma),
                    -k * y[1] - gaussian_bump_grad(diff, sigma))
    else:
        c = rule.custom_c

        def rhs(s, y):
            return (np.asarray(c(y[0], z, eval_stimulus(path, s), s), dtype=float),)

    return _rk4(rhs, t, state, dt)


def step_field(grid, rule, path, dt, t_next=None):
    """Advance every node of ``grid`` by one RK4 step of length ``dt``.

    ``t_next`` overrides the stamped time of the result (used by
    :func:`evolve_field` to avoid accumulating ``t += dt`` round-off).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    t = grid.t
    t_new = t + dt if t_next is None else t_next
    z = grid.nodes()
    d = grid.dim
    if rule.kind == "potential-linear":
        if grid.u_values is None:
            raise ValueError("potential-linear rule needs a grid carrying U and grad U")
        rule.factor(t)
        u, gu = step_nodes(z, (grid.u_values.ravel(), grid.grad_u.reshape(-1, d)),
                           rule, path, t, dt)
        _require_finite(u, grid, t_new, "U")
        _require_finite(gu, grid, t_new, "grad U")
        a = -rule.factor(t_new) * gu
        return FieldGrid(grid.axes, a.reshape(grid.a_values.shape), t_new,
                         u.reshape(grid.shape), gu.reshape(grid.a_values.shape))
    (a,) = step_nodes(z, (grid.a_values.reshape(-1, d),), rule, path, t, dt)
    _require_finite(a, grid, t_new, "a")
    return FieldGrid(grid.axes, a.reshape(grid.a_values.shape), t_new)


def _require_finite(arr, grid, t, what):
    ok = np.isfinite(arr)
    if ok.all():
        return
    idx = int(np.argmin(ok.reshape(ok.shape[0], -1).all(axis=1)))
    node = grid.nodes()[idx]
    raise NumericError(f"{what} became non-finite at node {node.tolist()} at t={t!r}")


def evolve_field(grid, rule, path, t_end, dt, every=None):
    """Step ``grid`` to ``t_end``; return snapshots at multiples of ``every`` steps.

    ``every`` counts RK4 steps between kept snapshots (``None`` keeps only the
    final grid). The initial grid is always the first snapshot.
    """
    t0 = grid.t
    n = int(round((t_end - t0) / dt))
    if n < 0 or abs(t0 + n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"window [{t0}, {t_end}] is not a whole number of steps of {dt}")
    h = (t_end - t0) / n if n else dt
    snaps = [grid]
    for i in range(n):
        t_next = t_end if i == n - 1 else t0 + (i + 1) * h
        grid = step_field(grid, rule, path, h, t_next=t_next)
        if (every is not None and (i + 1) % every == 0) or i == n - 1:
            snaps.append(grid)
    return snaps


# --------------------------------------------------------------------------
# Explicit and pullback-limit solutions of the gradient equation


def _forcing_integral(z, t_lo, t_hi, k, sigma, path):
    """int_{t_lo}^{t_hi} exp(-k (t_hi - s)) G(z - eta(s)) ds by composite Simpson."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n_int = max(2, int(math.ceil((t_hi - t_lo) / path.dt - 1e-9)))
    s = np.linspace(t_lo, t_hi, n_int + 1)
    eta = eval_stimulus(path, s)
    w = np.exp(-k * (t_hi - s))
    out = np.empty_like(z)
    chunk = max(1, 2_000_000 // (len(s) * z.shape[1]))
    for i in range(0, z.shape[0], chunk):
        zz = z[i:i + chunk]
        vals = w[:, None, None] * gaussian_bump_grad(zz[None, :, :] - eta[:, None, :], sigma)
        out[i:i + chunk] = integrate.simpson(vals, x=s, axis=0)
    return out


def closed_form_grad_solution(z, t, t0, grad_u0, k, sigma, path):
    """Explicit solution of the gradient equation from ``grad_u0`` at ``t0``.

    grad U(z, t) = grad U(z, t0) e^{-k (t - t0)} - int_{t0}^{t} e^{-k (t - s)} G(z - eta(s)) ds

    ``z`` is a d-vector or an (N, d) array; the result has the same shape.
    """
    if t < t0:
        raise ValueError(f"t={t} precedes t0={t0}")
    single = np.ndim(z) <= 1
    z2 = np.atleast_2d(np.asarray(z, dtype=float))
    g0 = np.broadcast_to(np.asarray(grad_u0, dtype=float), z2.shape)
    if t == t0:
        out = np.array(g0, dtype=float)
    else:
        if t0 < path.t_min or t > path.t_max:
            raise DomainError(f"[{t0}, {t}] not inside stimulus domain "
                              f"[{path.t_min}, {path.t_max}]", (t0, t), (path.t_min, path.t_max))
        out = g0 * math.exp(-k * (t - t0)) - _forcing_integral(z2, t0, t, k, sigma, path)
    return out[0] if single else out


def pullback_limit_grad(z, t, k, sigma, path, horizon):
    """Pullback-limit gradient -int_{-inf}^t e^{-k(t-s)} G(z - eta(s)) ds.

    The integral is truncated to ``[t - horizon, t]``. Returns
    ``(value, truncation_bound)`` with bound ``e^{-k horizon} sup|G| / k``.
    """
    if not k > 0:
        raise ValueError(f"no pullback limit for decay rate k={k} <= 0")
    t_lo = t - horizon
    if t_lo < path.t_min - _SNAP * path.dt or t > path.t_max + _SNAP * path.dt:
        raise DomainError(f"horizon {horizon} from t={t} leaves stimulus domain "
                          f"[{path.t_min}, {path.t_max}]", t_lo, (path.t_min, path.t_max))
    single = np.ndim(z) <= 1
    val = -_forcing_integral(z, max(t_lo, path.t_min), t, k, sigma, path)
    bound = math.exp(-k * horizon) * gaussian_bump_grad_sup(sigma) / k
    return (val[0] if single else val), bound


# --------------------------------------------------------------------------
# Spatial evaluation


def _locate(grid, x):
    x = np.asarray(x, dtype=float)
    idx, frac = [], []
    for j, (lo, hi, n) in enumerate(grid.axes):
        h = (hi - lo) / (n - 1)
        s = (x[:, j] - lo) / h
        i = np.floor(s)
        f = s - i
        i = i.astype(np.int64)
        up = f > 1.0 - _SNAP
        i[up] += 1
        f[up] = 0.0
        f[f < _SNAP] = 0.0
        top = i >= n - 1
        i[top] = n - 2
        f[top] = 1.0
        idx.append(i)
        frac.append(f)
    return idx, frac


def multilinear(grid, values, x, lead=None):
    """Multilinear interpolation of node ``values`` (shape + trailing) at points x (N, d).

    With ``lead`` (an index array of length N) ``values`` carries an extra
    leading axis and point i reads from ``values[lead[i]]``.
    """
    idx, frac = _locate(grid, x)
    d = grid.dim
    out = 0.0
    for corner in range(1 << d):
        w = 1.0
        sel = []
        for j in range(d):
            bit = (corner >> j) & 1
            w = w * (frac[j] if bit else 1.0 - frac[j])
            sel.append(idx[j] + bit)
        v = values[tuple(sel) if lead is None else (lead,) + tuple(sel)]
        w = np.asarray(w)
        out = out + (w.reshape(w.shape + (1,) * (v.ndim - 1)) * v if v.ndim > 1 else w * v)
    return out


def eval_field(grid, x, tol=1e-12):
    """Multilinear interpolation of the field at ``x`` (d-vector or (N, d))."""
    single = np.ndim(x) <= 1
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[1] != grid.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, grid has {grid.dim}")
    inside = grid.contains(pts, margin=-tol)
    if not inside.all():
        bad = pts[np.argmin(inside)]
        box = [(lo, hi) for lo, hi, _ in grid.axes]
        raise DomainError(f"x={bad.tolist()} outside grid box {box}; no extrapolation",
                          bad, box)
    out = multilinear(grid, grid.a_values, pts)
    return out[0] if single else out


def field_gradient(grid):
    """Jacobian d a_i / d x_j at every node, shape (n_1..n_d, d, d).

    Central differences inside, second-order one-sided differences on the
    boundary.
    """
    if min(grid.shape) < 3:
        raise ValueError("field_gradient needs at least 3 nodes per axis")
    coords = grid.coords()
    rows = [np.stack(_np_gradient(grid.a_values[..., i], coords), axis=-1)
            for i in range(grid.dim)]
    return np.stack(rows, axis=-2)


# --------------------------------------------------------------------------
# Snapshot files: one JSON header line, then CSV rows


def save_snapshot(grid, path, rule=None):
    path = Path(path)
    d = grid.dim
    header = {"dim": d, "axes": [list(a) for a in grid.axes], "t": grid.t,
              "rule": rule.params() if rule is not None else None}
    cols_h = [f"z_{j + 1}" for j in range(d)] + [f"a_{j + 1}" for j in range(d)]
    z = grid.nodes()
    cols = [z[:, j] for j in range(d)] + [grid.a_values.reshape(-1, d)[:, j] for j in range(d)]
    if grid.u_values is not None:
        cols_h += ["u"] + [f"du_{j + 1}" for j in range(d)]
        cols += [grid.u_values.ravel()] + [grid.grad_u.reshape(-1, d)[:, j] for j in range(d)]
    io.write_matrix(path, cols_h, cols, comment=json.dumps(header))
    return path


def load_snapshot(path):
    comment, cols, arr = io.read_table(path)
    header = json.loads(comment)
    d = header["dim"]
    axes = tuple(tuple(a) for a in header["axes"])
    shape = tuple(int(a[2]) for a in axes)
    a = arr[:, d:2 * d].reshape(shape + (d,))
    u = gu = None
    if "u" in cols:
        j = cols.index("u")
        u = arr[:, j].reshape(shape)
        gu = arr[:, j + 1:j + 1 + d].reshape(shape + (d,))
    return FieldGrid(axes, a, header["t"], u, gu), header.get("rule")
