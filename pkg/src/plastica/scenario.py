"""Declarative scenario files: strict parsing, validation and model assembly.

A scenario is TOML (or the equivalent JSON object). Parsing is strict: any
key not declared below is rejected, and every default is materialised so the
persisted ``resolved_scenario.json`` names every parameter a run used. The
resolved JSON parses back to an identical :class:`Scenario`.
"""

import json
import math
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np
import tomli

from .errors import ScenarioError
from .plastic_field import PlasticRule, potential_grid, grid_from_function, load_snapshot
from .stimulus import SdeSpec, double_well_drift, make_deterministic_path, simulate_sde_path
from .trajectory import RhsSource

BUILTIN = ("linear_contraction", "switching_counterexample", "paper_example")


@dataclass
class TimeWindow:
    t_start: float
    t_end: float
    t_min: Optional[float] = None
    dt_field: float = 0.01
    dt_traj: float = 0.01
    snapshot_every: Optional[float] = None


@dataclass
class StimulusSpec:
    kind: str = "deterministic"
    formula: str = "zero"
    params: dict = field(default_factory=dict)
    drift: str = "double_well"
    diffusion: float = 0.5
    eta0: List[float] = field(default_factory=lambda: [0.0])
    dt: float = 0.001
    guard: float = 1e6
    interpolation: str = "piecewise-linear"


@dataclass
class DynamicsSpec:
    kind: str = "analytic"
    analytic: str = "linear_contraction"
    pre: str = "linear_contraction"
    post: str = "bistable"
    switch_time: Optional[float] = None


@dataclass
class RuleSpec:
    kind: str = "potential-linear"
    k: float = 0.5
    sigma: float = 1.0
    time_factor: str = "constant"
    gamma: float = 1.0
    t_floor: float = 1.0
    strength: float = 1.0


@dataclass
class GridSpec:
    lo: List[float]
    hi: List[float]
    n: List[int]


@dataclass
class InitialFieldSpec:
    kind: str = "zero"
    slope: float = 1.0
    depth: float = 1.0
    width: float = 1.0
    center: Optional[List[float]] = None
    path: str = ""


@dataclass
class PullbackSpec:
    target_t: float
    t0_sequence: List[float]
    cloud_n: int = 512
    eps: float = 0.02
    B_star: Optional[float] = None
    dt: Optional[float] = None


@dataclass
class ForwardSpec:
    t0_list: List[float]
    tau_burn: float
    t_end: float
    cloud_n: int = 512
    eps: float = 0.02
    B_star: Optional[float] = None
    dt: Optional[float] = None
    sample_every: int = 1
    test_radii: Optional[List[float]] = None


@dataclass
class ChecksSpec:
    run: List[str] = field(default_factory=lambda: ["A2"])
    n_samples: int = 512
    times: Optional[List[float]] = None
    tolerance: float = 1e-3
    a_radius: float = 10.0
    n_times: int = 10


@dataclass
class VelocitySpec:
    fit_window: List[float]
    check_window: List[float]
    max_violation: float = 0.05


@dataclass
class OutputSpec:
    dir: str = "out"


@dataclass
class Scenario:
    id: str
    time: TimeWindow
    dimension: int = 1
    seed: int = 0
    stimulus: StimulusSpec = field(default_factory=StimulusSpec)
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    rule: Optional[RuleSpec] = None
    grid: Optional[GridSpec] = None
    initial_field: Optional[InitialFieldSpec] = None
    initial_conditions: List[List[float]] = field(default_factory=list)
    R_star: float = 1.0
    pullback: Optional[PullbackSpec] = None
    forward: Optional[ForwardSpec] = None
    checks: Optional[ChecksSpec] = None
    velocity: Optional[VelocitySpec] = None
    output: OutputSpec = field(default_factory=OutputSpec)
    # reserved: stimulus-driven resets of x are not modelled; must stay false
    reset_x_by_stimulus: bool = False

    def to_json(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"


# --------------------------------------------------------------------------
# Strict structural parsing


def _build(tp, value, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:  # Optional[X]
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _build(inner, value, where)
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ScenarioError(f"{where}: expected a table, got {type(value).__name__}")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in fields(tp)}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ScenarioError(f"{where}: unknown key(s) {', '.join(unknown)}")
        kwargs = {}
        for f in fields(tp):
            if f.name in value:
                kwargs[f.name] = _build(hints[f.name], value[f.name], f"{where}.{f.name}")
            elif f.default is f.default_factory is MISSING:
                raise ScenarioError(f"{where}: missing required key {f.name!r}")
        return tp(**kwargs)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ScenarioError(f"{where}: expected a list")
        return [_build(args[0], v, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ScenarioError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ScenarioError(f"{where}: expected a table")
        return {k: float(v) if isinstance(v, int) and not isinstance(v, bool) else v
                for k, v in value.items()}
    raise TypeError(f"unsupported field type {tp}")


def _decode(text):
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: "
                                f"{exc.msg}") from exc
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"TOML parse error: {exc}") from exc


def parse_scenario(data):
    """Parse scenario bytes/text into a fully resolved, validated Scenario."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    raw = _decode(data)
    s = _build(Scenario, raw, "scenario")
    _resolve(s)
    _validate(s)
    return s


def load_scenario(name_or_path):
    """Read a scenario file, or a bundled scenario by name."""
    p = Path(name_or_path)
    if p.exists():
        return parse_scenario(p.read_bytes())
    if str(name_or_path) in BUILTIN:
        return parse_scenario(builtin_text(str(name_or_path)))
    raise ScenarioError(f"no scenario file or built-in named {name_or_path!r}")


def builtin_text(name):
    return resources.files("plastica.scenarios").joinpath(f"{name}.scenario").read_text()


# --------------------------------------------------------------------------
# Defaults and semantic checks


def _resolve(s):
    tw = s.time
    if tw.t_min is None:
        tw.t_min = tw.t_start
    if tw.snapshot_every is None:
        tw.snapshot_every = tw.dt_field
    if s.dynamics.kind == "switching" and s.dynamics.switch_time is None:
        s.dynamics.switch_time = tw.t_start
    if s.dynamics.kind == "plastic" and s.initial_field is None:
        s.initial_field = InitialFieldSpec()
    if s.initial_field is not None and s.initial_field.center is None:
        s.initial_field.center = [0.0] * s.dimension
    b_star = s.R_star + 1.0
    for block in (s.pullback, s.forward):
        if block is not None:
            if block.B_star is None:
                block.B_star = b_star
            if block.dt is None:
                block.dt = tw.dt_traj
    if s.forward is not None and s.forward.test_radii is None:
        s.forward.test_radii = [s.forward.B_star]
    if s.checks is not None and s.checks.times is None:
        s.checks.times = [tw.t_start, tw.t_end]
    if s.stimulus.kind == "sde" and len(s.stimulus.eta0) == 1 and s.dimension > 1:
        s.stimulus.eta0 = s.stimulus.eta0 * s.dimension


def _fail(msg):
    raise ScenarioError(msg)


def _multiple(a, b):
    r = a / b
    return abs(r - round(r)) <= 1e-9 * max(1.0, abs(r))


def _validate(s):
    tw = s.time
    if s.reset_x_by_stimulus:
        _fail("reset_x_by_stimulus is reserved for a future extension and must be false")
    if s.dimension < 1:
        _fail("dimension must be >= 1")
    if not (tw.t_min <= tw.t_start < tw.t_end):
        _fail(f"time window: need t_min <= t_start < t_end, got "
              f"t_min={tw.t_min}, t_start={tw.t_start}, t_end={tw.t_end}")
    for name in ("dt_field", "dt_traj", "snapshot_every"):
        if not getattr(tw, name) > 0:
            _fail(f"time window: {name} must be positive")
    if not _multiple(tw.snapshot_every, tw.dt_field):
        _fail("time window: snapshot_every must be a multiple of dt_field")
    if not _multiple(tw.t_end - tw.t_start, tw.dt_field):
        _fail("time window: t_end - t_start must be a multiple of dt_field")

    st = s.stimulus
    if st.kind not in ("deterministic", "sde"):
        _fail(f"stimulus.kind must be 'deterministic' or 'sde', got {st.kind!r}")
    if st.kind == "deterministic" and st.formula not in FORMULAS:
        _fail(f"stimulus.formula {st.formula!r} unknown; choose from {sorted(FORMULAS)}")
    if st.kind == "sde":
        if st.drift not in DRIFTS:
            _fail(f"stimulus.drift {st.drift!r} unknown; choose from {sorted(DRIFTS)}")
        if st.diffusion < 0:
            _fail("stimulus.diffusion must be non-negative")
    if not st.dt > 0:
        _fail("stimulus.dt must be positive")
    if st.interpolation not in ("piecewise-linear", "piecewise-constant"):
        _fail(f"stimulus.interpolation {st.interpolation!r} unknown")

    dyn = s.dynamics
    if dyn.kind not in ("analytic", "switching", "plastic"):
        _fail(f"dynamics.kind {dyn.kind!r} unknown")
    for name in ([dyn.analytic] if dyn.kind == "analytic" else
                 [dyn.pre, dyn.post] if dyn.kind == "switching" else []):
        if name not in ANALYTIC:
            _fail(f"dynamics: analytic field {name!r} unknown; choose from {sorted(ANALYTIC)}")
    if dyn.kind == "plastic":
        if s.rule is None or s.grid is None:
            _fail("plastic dynamics needs [rule] and [grid] blocks")
    if s.rule is not None:
        r = s.rule
        if r.kind not in RULES:
            _fail(f"rule.kind {r.kind!r} unknown; choose from {sorted(RULES)}")
        if r.kind == "potential-linear":
            if not r.sigma > 0 or r.k < 0:
                _fail("rule: potential-linear needs sigma > 0 and k >= 0")
            if r.time_factor not in ("one-over-t", "constant"):
                _fail(f"rule.time_factor {r.time_factor!r} unknown")
            if r.time_factor == "one-over-t" and tw.t_start < r.t_floor:
                _fail("rule: one-over-t factor needs t_start >= t_floor")
            if st.kind == "deterministic" and _formula_dim(st, s.dimension) != s.dimension:
                _fail("rule: potential-linear needs stimulus dimension equal to grid dimension")
    if s.grid is not None:
        g = s.grid
        if not (len(g.lo) == len(g.hi) == len(g.n) == s.dimension):
            _fail("grid: lo, hi and n must each have one entry per dimension")
        if any(n < 3 for n in g.n) or any(h <= l for l, h in zip(g.lo, g.hi)):
            _fail("grid: axes need hi > lo and at least 3 nodes")
    if s.initial_field is not None:
        f = s.initial_field
        if f.kind not in ("zero", "quadratic", "gaussian-well", "file"):
            _fail(f"initial_field.kind {f.kind!r} unknown")
        if f.kind == "file" and not f.path:
            _fail("initial_field: kind 'file' needs a path")
        if len(f.center) != s.dimension:
            _fail("initial_field.center must have one entry per dimension")
    for x0 in s.initial_conditions:
        if len(x0) != s.dimension:
            _fail(f"initial condition {x0} does not have dimension {s.dimension}")

    lo, hi = tw.t_min, tw.t_end
    if s.pullback is not None:
        p = s.pullback
        seq = p.t0_sequence
        if not seq or any(b >= a for a, b in zip(seq, seq[1:])):
            _fail("pullback.t0_sequence must be non-empty and strictly decreasing")
        if seq[0] > p.target_t:
            _fail("pullback: every t0 must be <= target_t")
        if dyn.kind == "plastic" and (seq[-1] < lo or p.target_t > hi):
            _fail(f"pullback: times must lie in the scenario window [{lo}, {hi}]")
        if p.cloud_n < 3 or not p.eps > 0 or not p.dt > 0:
            _fail("pullback: need cloud_n >= 3, eps > 0, dt > 0")
    if s.forward is not None:
        fw = s.forward
        if not fw.t0_list:
            _fail("forward.t0_list must be non-empty")
        if not (max(fw.t0_list) < fw.tau_burn < fw.t_end):
            _fail("forward: need every t0 < tau_burn < t_end")
        if dyn.kind == "plastic" and (min(fw.t0_list) < lo or fw.t_end > hi):
            _fail(f"forward: times must lie in the scenario window [{lo}, {hi}]")
    if s.checks is not None:
        bad = sorted(set(s.checks.run) - set(CHECKS))
        if bad:
            _fail(f"checks.run: unknown check(s) {bad}; choose from {list(CHECKS)}")
        needs_rule = {"C2", "C4", "preservation", "symmetry"} & set(s.checks.run)
        if needs_rule and s.rule is None:
            _fail(f"checks {sorted(needs_rule)} need a [rule] block")
    if s.velocity is not None:
        v = s.velocity
        if len(v.fit_window) != 2 or len(v.check_window) != 2:
            _fail("velocity windows are [start, end] pairs")


# --------------------------------------------------------------------------
# Registries of named building blocks


def _formula(st):
    p = st.params
    kind = st.formula
    if kind == "zero":
        return lambda t: 0.0
    if kind == "constant":
        return lambda t: p.get("value", 0.0)
    if kind == "sin":
        a, w, ph = p.get("amplitude", 1.0), p.get("omega", 1.0), p.get("phase", 0.0)
        return lambda t: a * math.sin(w * t + ph)
    if kind == "circle":
        r, w = p.get("radius", 1.0), p.get("omega", 1.0)
        return lambda t: [r * math.cos(w * t), r * math.sin(w * t)]
    raise KeyError(kind)


FORMULAS = ("zero", "constant", "sin", "circle")


def _formula_dim(st, dim):
    v = np.atleast_1d(_formula(st)(0.0))
    # scalar formulas are broadcast to every component
    return dim if v.size == 1 else v.size


DRIFTS = {"double_well": double_well_drift}

ANALYTIC = {
    "zero": lambda X, t: np.zeros_like(X),
    "linear_contraction": lambda X, t: -X,
    "linear_expansion": lambda X, t: X,
    "forced_linear": lambda X, t: -X + math.sin(t),
    "bistable": lambda X, t: X * (1.0 - X * X),
}

RULES = ("potential-linear", "frozen", "radial-damping", "radial-growth")

CHECKS = ("A1", "A2", "C2", "C4", "symmetry", "preservation")


def build_stimulus(s):
    st = s.stimulus
    t_lo, t_hi = s.time.t_min, s.time.t_end
    if st.kind == "sde":
        spec = SdeSpec(DRIFTS[st.drift], st.diffusion, np.asarray(st.eta0))
        return simulate_sde_path(spec, t_lo, t_hi, st.dt, s.seed, st.guard)
    f = _formula(st)
    if _formula_dim(st, s.dimension) == s.dimension and np.atleast_1d(f(0.0)).size == 1:
        g = f
        f = lambda t: [g(t)] * s.dimension
    return make_deterministic_path(f, t_lo, t_hi, st.dt, st.interpolation)


def build_rule(s):
    r = s.rule
    if r.kind == "potential-linear":
        return PlasticRule("potential-linear", r.k, r.sigma, r.time_factor, r.gamma, r.t_floor,
                           name="potential-linear")
    strength = r.strength
    if r.kind == "frozen":
        c = lambda a, z, y, t: np.zeros_like(np.asarray(a, dtype=float))
    elif r.kind == "radial-damping":
        # <c, x> = -strength (1 + |y|^2) |x|^2 <= 0 everywhere
        c = lambda a, z, y, t: -strength * (1.0 + float(np.dot(y, y))) * np.asarray(z)
    else:
        c = lambda a, z, y, t: strength * np.asarray(z, dtype=float)
    return PlasticRule("direct-custom", custom_c=c, name=r.kind)


def _initial_potential(f, dim):
    c = np.asarray(f.center, dtype=float)
    if f.kind == "zero":
        return (lambda z: np.zeros(len(z)), lambda z: np.zeros_like(z))
    if f.kind == "quadratic":
        return (lambda z: 0.5 * f.slope * np.sum((z - c) ** 2, axis=1),
                lambda z: f.slope * (z - c))
    # gaussian well: U = -depth exp(-|z - c|^2 / width^2)
    def u(z):
        return -f.depth * np.exp(-np.sum((z - c) ** 2, axis=1) / f.width ** 2)

    def gu(z):
        return -2.0 * (z - c) / f.width ** 2 * u(z)[:, None]

    return u, gu


def build_initial_field(s, rule):
    axes = tuple(zip(s.grid.lo, s.grid.hi, s.grid.n))
    f = s.initial_field
    t0 = s.time.t_start
    if f.kind == "file":
        grid, _ = load_snapshot(f.path)
        return grid.__class__(grid.axes, grid.a_values, t0, grid.u_values, grid.grad_u)
    u, gu = _initial_potential(f, s.dimension)
    if rule.kind == "potential-linear":
        return potential_grid(axes, u, gu, rule, t0)
    # non-potential rules start from the gradient field a0 = -grad U0
    return grid_from_function(axes, lambda z: -gu(z), t0)


def build_source(s, path=None, with_snapshots=False):
    """RhsSource for the scenario; plastic runs also return the snapshot list."""
    dyn = s.dynamics
    d = s.dimension
    if dyn.kind == "analytic":
        src = RhsSource.analytic(ANALYTIC[dyn.analytic], d, name=dyn.analytic)
        return (src, []) if with_snapshots else src
    if dyn.kind == "switching":
        src = RhsSource.switching(ANALYTIC[dyn.pre], ANALYTIC[dyn.post], dyn.switch_time, d,
                                  name=f"{dyn.pre}->{dyn.post}")
        return (src, []) if with_snapshots else src
    from .plastic_field import evolve_field
    path = build_stimulus(s) if path is None else path
    rule = build_rule(s)
    a0 = build_initial_field(s, rule)
    tw = s.time
    every = int(round(tw.snapshot_every / tw.dt_field))
    snaps = evolve_field(a0, rule, path, tw.t_end, tw.dt_field, every=every)
    # artificial past: the field is frozen at a0 for all t <= t_start
    src = RhsSource.from_snapshots(snaps, hold_before=True, name=f"plastic:{s.id}")
    return (src, snaps) if with_snapshots else src
