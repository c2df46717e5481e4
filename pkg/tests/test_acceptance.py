"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line; the lines
are repeated in the pytest terminal summary."""

import json
import math
import time

import numpy as np
from hypothesis import HealthCheck, Phase, given, settings
from hypothesis import strategies as st

from plastica.attractor import (directed_distance, forward_attracting_set, hausdorff_distance,
                                pullback_attractor_estimate, sample_ball)
from plastica.checks import check_dissipativity_A2
from plastica.cli import main
from plastica.plastic_field import (PlasticRule, closed_form_grad_solution, eval_field,
                                    evolve_field, grid_from_function, potential_grid,
                                    step_nodes)
from plastica.scenario import build_source, build_stimulus, load_scenario
from plastica.stimulus import (SdeSpec, double_well_drift, double_well_potential,
                               make_deterministic_path, simulate_sde_path, stationary_moments)
from plastica.trajectory import (RhsSource, check_velocity_bound, field_velocity_envelope,
                                 fit_velocity_bound, integrate_trajectory, propagate,
                                 velocity_magnitude_series)


def test_criterion_1_closed_form_oracle(record_criterion):
    path = make_deterministic_path(math.sin, -5.0, 5.0, 1e-3)
    rule = PlasticRule(k=0.5, sigma=1.0)
    g0 = potential_grid(((-3.0, 3.0, 64),), lambda z: 0.5 * z[:, 0] ** 2, lambda z: z.copy(),
                        rule, -5.0)
    start = time.process_time()
    snaps = evolve_field(g0, rule, path, 5.0, 1e-3, every=1000)
    elapsed = time.process_time() - start
    g_init = g0.grad_u.reshape(-1, 1)
    err = max(np.max(np.abs(s.grad_u.reshape(-1, 1)
                            - closed_form_grad_solution(g0.nodes(), s.t, -5.0, g_init,
                                                        0.5, 1.0, path)))
              for s in snaps)
    ok = err <= 1e-6 and elapsed < 10.0
    record_criterion(1, ok, f"max node error {err:.3e} (limit 1e-6), "
                            f"stepping {elapsed:.2f} s CPU (limit 10 s)")
    assert ok


def test_criterion_2_exponential_pullback_convergence(record_criterion):
    path = make_deterministic_path(lambda t: 1.5 * math.sin(t), 1.0, 11.0, 1e-3)
    axes = ((-3.0, 3.0, 64),)
    worst = -math.inf
    for factor in ("constant", "one-over-t"):
        rule = PlasticRule(k=0.5, sigma=1.0, time_factor=factor, gamma=1.0)
        a = potential_grid(axes, lambda z: np.zeros(len(z)), lambda z: np.zeros_like(z),
                           rule, 1.0)
        b = potential_grid(axes, lambda z: np.sin(2 * z[:, 0]), lambda z: 2 * np.cos(2 * z),
                           rule, 1.0)
        sa = evolve_field(a, rule, path, 11.0, 0.01, every=10)
        sb = evolve_field(b, rule, path, 11.0, 0.01, every=10)
        gap0 = np.max(np.abs(sa[0].a_values - sb[0].a_values))
        for p, q in zip(sa, sb):
            gap = np.max(np.abs(p.a_values - q.a_values))
            bound = gap0 * math.exp(-0.5 * (p.t - 1.0)) * (1 + 1e-3)
            worst = max(worst, gap / bound)
    ok = worst <= 1.0
    record_criterion(2, ok, f"max gap(t) / [gap(t0) e^(-k(t-t0)) (1+1e-3)] = {worst:.6f} "
                            f"over {2 * len(sa)} snapshots")
    assert ok


def test_criterion_3_switching_counterexample(record_criterion):
    src = RhsSource.switching(lambda X, t: -X, lambda X, t: X * (1 - X * X), 0.0, 1)
    eps = 0.02
    sweep = pullback_attractor_estimate(src, 2.0, 0.0, [-1, -2, -4, -8, -16, -32], 512, eps)
    pull = hausdorff_distance(sweep.final.points, [[0.0]])
    omega = forward_attracting_set(src, 2.0, [-5.0, -2.0, 0.0, 2.0], 5.0, 30.0, 512, eps)
    interval = np.linspace(-1.0, 1.0, 20001)[:, None]
    fwd = hausdorff_distance(omega.points, interval)
    times, states = propagate(src, sample_ball(2.0, 512, 1), 0.0, 30.0, 0.01, record=True)
    late = [directed_distance(states[i], [[0.0]]) for i in np.nonzero(times >= 5.0)[0]]
    ok = sweep.converged and pull <= eps and fwd <= 0.05 and min(late) >= 0.5
    record_criterion(3, ok, f"pullback converged={sweep.converged}, d_H(A(0), {{0}}) = "
                            f"{pull:.2e} (<= {eps}); d_H(Omega*, [-1,1]) = {fwd:.4f} (<= 0.05); "
                            f"min directed dist to {{0}} for t >= 5 = {min(late):.4f} (>= 0.5)")
    assert ok


def test_criterion_4_bounded_entire_solution(record_criterion):
    src = RhsSource.analytic(lambda X, t: -X + math.sin(t), 1)
    worst = 0.0
    converged = True
    for t in (0.0, 1.3, 2.6, 5.0):
        seq = [t - s for s in (1, 2, 4, 8, 16, 32, 64)]
        sweep = pullback_attractor_estimate(src, 3.0, t, seq, 129, 1e-3)
        converged &= sweep.converged
        err = np.max(np.abs(sweep.final.points[:, 0] - (math.sin(t) - math.cos(t)) / 2))
        worst = max(worst, err)
    ok = converged and worst <= 1e-3
    record_criterion(4, ok, f"max |A(t) - (sin t - cos t)/2| = {worst:.2e} over 4 targets "
                            f"(limit 1e-3), all converged={converged}")
    assert ok


DISSIPATIVE = """
id = "{rule}"
dimension = 2
R_star = 1.0
[time]
t_start = 0.0
t_end = 1.0
dt_field = 0.01
[stimulus]
formula = "circle"
params = {{ radius = 1.0, omega = 2.0 }}
[dynamics]
kind = "plastic"
[rule]
kind = "{rule}"
strength = 1.0
[grid]
lo = [-3.0, -3.0]
hi = [3.0, 3.0]
n = [31, 31]
[initial_field]
kind = "quadratic"
slope = 1.0
[checks]
run = ["C4", "preservation"]
n_samples = 256
n_times = 10
"""


def test_criterion_5_dissipativity_propagation(tmp_path, record_criterion):
    codes, reports = {}, {}
    for rule in ("radial-damping", "radial-growth"):
        scen = tmp_path / f"{rule}.scenario"
        scen.write_text(DISSIPATIVE.format(rule=rule))
        codes[rule] = main(["check", "--scenario", str(scen), "--out", str(tmp_path / rule)])
        reports[rule] = {n: json.loads((tmp_path / rule / "check" / f"check_{n}.json").read_text())
                         for n in ("C4", "preservation")}
    good, bad = reports["radial-damping"], reports["radial-growth"]
    n_times = len(good["preservation"]["details"]["series"]) - 1
    ok = (codes["radial-damping"] == 0 and good["C4"]["passed"]
          and good["preservation"]["passed"] and n_times == 10
          and codes["radial-growth"] == 3 and not bad["C4"]["passed"]
          and not bad["preservation"]["passed"]
          and "x" in bad["preservation"]["worst_witness"])
    w = bad["preservation"]["worst_witness"]
    record_criterion(5, ok, f"C4-compliant rule passes A2 at {n_times} times "
                            f"(worst {good['preservation']['worst_value']:.3f}); "
                            f"C4-violating rule fails, witness x={np.round(w['x'], 4).tolist()} "
                            f"t={w['t']:.2f}")
    assert ok


def test_criterion_6_velocity_decay(record_criterion):
    s = load_scenario("paper_example")
    src, snaps = build_source(s, build_stimulus(s), with_snapshots=True)
    # C is the field-wide envelope max t |a(., t)| over the fit decade
    C = field_velocity_envelope(snaps, s.velocity.fit_window)
    fracs, own = [], []
    for x0 in s.initial_conditions:
        tr = integrate_trajectory(src, x0, s.time.t_start, s.time.t_end, s.time.dt_traj)
        v = velocity_magnitude_series(tr, src)
        rep = check_velocity_bound(tr.times, v, C, s.velocity.check_window)
        fracs.append(rep["violation_fraction"])
        # diagnostic only: C fitted on each trajectory's own speeds
        own.append(fit_velocity_bound(tr.times, v, s.velocity.fit_window,
                                      s.velocity.check_window)["violation_fraction"])
    ok = max(fracs) <= 0.05
    record_criterion(6, ok, f"C = {C:.4f} (field envelope on [1,10]); violation fraction of "
                            f"|v| <= C/t on [10,100] per trajectory "
                            f"{[round(f, 4) for f in fracs]} (limit 0.05); per-trajectory "
                            f"fit of C would give {[round(f, 3) for f in own]}")
    assert ok


def test_criterion_7_sde_statistics(record_criterion):
    spec = SdeSpec(double_well_drift, 0.5, np.array([0.0]))
    path = simulate_sde_path(spec, 0.0, 1e4, 1e-3, 0)
    mom = stationary_moments(double_well_potential, 0.5)
    mean, var = mom[1], mom[2] - mom[1] ** 2
    v = path.values[1:, 0]
    # batch means over 100 batches of length 100 handle the autocorrelation
    batches = v.reshape(100, -1)
    se_mean = batches.mean(axis=1).std(ddof=1) / 10.0
    se_var = batches.var(axis=1).std(ddof=1) / 10.0
    z_mean = (v.mean() - mean) / se_mean
    z_var = (v.var() - var) / se_var
    ok = abs(z_mean) <= 3.0 and abs(z_var) <= 3.0
    record_criterion(7, ok, f"mean {v.mean():.4f} vs {mean:.4f} (z = {z_mean:+.2f}), "
                            f"variance {v.var():.4f} vs {var:.4f} (z = {z_var:+.2f}); "
                            f"limit |z| <= 3")
    assert ok


# --------------------------------------------------------------------------
# Criterion 8: property suites, 200 generated instances each

PROPS = settings(max_examples=200, derandomize=True, deadline=None, database=None,
                 phases=[Phase.generate, Phase.shrink],
                 suppress_health_check=list(HealthCheck))
finite = dict(allow_nan=False, allow_infinity=False)


def _counted(prop, counter):
    def wrapped(case):
        counter[0] += 1
        return prop(case)
    return wrapped


@st.composite
def semigroup_case(draw):
    a = draw(st.floats(0.1, 2.0, **finite))
    w = draw(st.floats(0.0, 3.0, **finite))
    x0 = draw(st.floats(-3.0, 3.0, **finite))
    i0 = draw(st.integers(-300, 0))
    i1 = draw(st.integers(i0 + 1, i0 + 200))
    i2 = draw(st.integers(i1 + 1, i1 + 200))
    return a, w, x0, i0 * 0.01, i1 * 0.01, i2 * 0.01


def prop_semigroup(case):
    a, w, x0, t0, s, t = case
    src = RhsSource.analytic(lambda X, tt: -a * X + np.sin(w * tt) * np.cos(X), 1)
    X = np.array([[x0]])
    direct = propagate(src, X, t0, t, 0.01)
    split = propagate(src, propagate(src, X, t0, s, 0.01), s, t, 0.01)
    assert abs(direct[0, 0] - split[0, 0]) <= 1e-10


@st.composite
def node_case(draw):
    d = draw(st.integers(1, 3))
    n = draw(st.integers(2, 40))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return d, n, seed, draw(st.booleans())


def prop_node_order(case):
    d, n, seed, potential = case
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, d))
    perm = rng.permutation(n)
    path = make_deterministic_path(lambda t: [math.sin(t + j) for j in range(d)],
                                   0.0, 1.0, 0.01)
    if potential:
        rule = PlasticRule(k=0.5, sigma=1.0)
        state = (rng.normal(size=n), rng.normal(size=(n, d)))
    else:
        rule = PlasticRule(kind="direct-custom",
                           custom_c=lambda a, zz, y, t: -a * (1 + np.sum(zz ** 2, axis=1,
                                                                      keepdims=True)) + y)
        state = (rng.normal(size=(n, d)),)
    out = step_nodes(z, state, rule, path, 0.2, 0.05)
    out_p = step_nodes(z[perm], tuple(s[perm] for s in state), rule, path, 0.2, 0.05)
    for o, op in zip(out, out_p):
        assert np.array_equal(o[perm], op)


@st.composite
def affine_case(draw):
    d = draw(st.integers(1, 3))
    axes = []
    for _ in range(d):
        lo = draw(st.floats(-5.0, 5.0, **finite))
        width = draw(st.floats(0.1, 10.0, **finite))
        axes.append((lo, lo + width, draw(st.integers(2, 9))))
    return tuple(axes), draw(st.integers(0, 2 ** 32 - 1))


def prop_affine(case):
    axes, seed = case
    d = len(axes)
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    b = rng.normal(size=d)
    grid = grid_from_function(axes, lambda z: z @ A.T + b)
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[1] for a in axes])
    x = rng.uniform(lo, hi, (50, d))
    x[0] = hi  # upper corner
    exact = x @ A.T + b
    scale = 1.0 + np.max(np.abs(exact))
    assert np.max(np.abs(eval_field(grid, x) - exact)) <= 1e-12 * scale * 10


@st.composite
def hausdorff_case(draw):
    d = draw(st.integers(1, 3))
    na = draw(st.integers(1, 30))
    nb = draw(st.integers(1, 30))
    return d, na, nb, draw(st.integers(0, 2 ** 32 - 1))


def prop_hausdorff(case):
    d, na, nb, seed = case
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(na, d)), rng.normal(size=(nb, d))
    D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
    brute = max(D.min(axis=1).max(), D.min(axis=0).max())
    assert abs(hausdorff_distance(A, B) - brute) <= 1e-12 * max(1.0, brute)


@st.composite
def witness_case(draw):
    d = draw(st.integers(1, 3))
    lam = draw(st.floats(0.1, 3.0, **finite))
    r = draw(st.floats(0.2, 3.0, **finite))
    n = draw(st.integers(4, 128))
    return d, lam, r, n, draw(st.integers(0, 1000))


def prop_witness(case):
    d, lam, r, n, seed = case
    f = lambda X, t: -lam * X + 0.3 * np.sin(X[:, ::-1]) * np.cos(t)
    a = check_dissipativity_A2(f, r, n, times=(0.0, 1.0), dim=d, seed=seed)
    b = check_dissipativity_A2(f, r, n, times=(0.0, 1.0), dim=d, seed=seed)
    assert a.worst_value == b.worst_value and a.worst_witness == b.worst_witness
    assert a.passed == b.passed
    # prefix nesting: refining the sample can only raise the worst value
    c = check_dissipativity_A2(f, r, 2 * n, times=(0.0, 1.0), dim=d, seed=seed)
    assert c.worst_value >= a.worst_value


SUITES = [("semigroup identity", semigroup_case(), prop_semigroup),
          ("node-order bit-identity", node_case(), prop_node_order),
          ("affine interpolation exactness", affine_case(), prop_affine),
          ("Hausdorff brute force", hausdorff_case(), prop_hausdorff),
          ("witness reproducibility", witness_case(), prop_witness)]


def test_criterion_8_property_suites(record_criterion):
    results = []
    for name, strategy, prop in SUITES:
        counter = [0]
        runner = PROPS(given(strategy)(_counted(prop, counter)))
        try:
            runner()
            failed = None
        except Exception as exc:  # report every suite, then fail
            failed = f"{type(exc).__name__}: {exc}".splitlines()[0]
        results.append((name, counter[0], failed))
    ok = all(f is None and n >= 200 for _, n, f in results)
    detail = "; ".join(f"{name} {n} cases {'ok' if f is None else 'FAILED ' + f}"
                       for name, n, f in results)
    record_criterion(8, ok, detail)
    assert ok
