import math

import numpy as np
import pytest
from scipy import integrate

from plastica.errors import DomainError, NumericError
from plastica.plastic_field import (FieldGrid, PlasticRule, closed_form_grad_solution,
                                    eval_field, evolve_field, field_gradient, gaussian_bump,
                                    gaussian_bump_grad, gaussian_bump_grad_sup,
                                    grid_from_function, load_snapshot, potential_grid,
                                    pullback_limit_grad, save_snapshot, step_field, step_nodes)
from plastica.stimulus import make_deterministic_path


def zero_potential(axes, rule, t):
    return potential_grid(axes, lambda z: np.zeros(len(z)), lambda z: np.zeros_like(z), rule, t)


def test_bump_is_not_normalised():
    # the exponent uses sigma^2, so the 1-D integral is 1/sqrt(2) for every sigma
    for sigma in (0.5, 1.0, 2.0):
        val, _ = integrate.quad(lambda u: gaussian_bump(u, sigma), -np.inf, np.inf)
        assert val == pytest.approx(1 / math.sqrt(2), rel=1e-10)


def test_bump_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(50, 3))
    h = 1e-6
    G = gaussian_bump_grad(z, 0.8)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (gaussian_bump(z + e, 0.8) - gaussian_bump(z - e, 0.8)) / (2 * h)
        np.testing.assert_allclose(G[:, j], fd, atol=1e-8)


def test_bump_gradient_sup():
    u = np.linspace(-5, 5, 200001)
    assert np.max(np.abs(gaussian_bump_grad(u[:, None], 1.3))) == pytest.approx(
        gaussian_bump_grad_sup(1.3), rel=1e-8)


def test_scalar_bump_input():
    assert isinstance(gaussian_bump(0.3, 1.0), float)
    assert gaussian_bump_grad(0.3, 1.0) == pytest.approx(gaussian_bump_grad(np.array([0.3]), 1.0)[0])


def test_one_over_t_factor_refuses_small_t():
    rule = PlasticRule(k=0.5, time_factor="one-over-t", t_floor=1.0)
    assert rule.factor(4.0) == 0.25
    with pytest.raises(DomainError):
        rule.factor(0.5)


def test_rule_validation():
    with pytest.raises(ValueError):
        PlasticRule(sigma=0.0)
    with pytest.raises(ValueError):
        PlasticRule(kind="direct-custom")


def test_grid_rejects_non_finite_values():
    with pytest.raises(NumericError):
        FieldGrid(((0, 1, 3),), np.array([0.0, np.nan, 1.0]), 0.0)


def test_stepped_gradient_matches_closed_form():
    path = make_deterministic_path(math.sin, 0.0, 2.0, 1e-3)
    rule = PlasticRule(k=0.7, sigma=0.9)
    axes = ((-2.0, 2.0, 9),)
    g0 = potential_grid(axes, lambda z: 0.5 * z[:, 0] ** 2, lambda z: z.copy(), rule, 0.0)
    snaps = evolve_field(g0, rule, path, 2.0, 1e-2, every=50)
    for s in snaps:
        ref = closed_form_grad_solution(g0.nodes(), s.t, 0.0, g0.grad_u.reshape(-1, 1),
                                        0.7, 0.9, path)
        np.testing.assert_allclose(s.grad_u.reshape(-1, 1), ref, atol=1e-7)


def test_rk4_error_shrinks_fourth_order():
    path = make_deterministic_path(lambda t: math.sin(3 * t), 0.0, 1.0, 1e-4)
    rule = PlasticRule(k=1.0, sigma=0.5)
    g0 = zero_potential(((-1.0, 1.0, 5),), rule, 0.0)
    ref = closed_form_grad_solution(g0.nodes(), 1.0, 0.0, 0.0, 1.0, 0.5, path)
    errs = []
    for dt in (0.1, 0.05):
        last = evolve_field(g0, rule, path, 1.0, dt)[-1]
        errs.append(np.max(np.abs(last.grad_u.reshape(-1, 1) - ref)))
    assert errs[0] / errs[1] > 10.0


def test_potential_and_gradient_stay_consistent():
    path = make_deterministic_path(math.cos, 0.0, 1.0, 1e-3)
    rule = PlasticRule(k=0.3, sigma=1.0, time_factor="constant", gamma=2.0)
    axes = ((-3.0, 3.0, 301),)
    g0 = potential_grid(axes, lambda z: np.sin(z[:, 0]), lambda z: np.cos(z), rule, 0.0)
    last = evolve_field(g0, rule, path, 1.0, 0.01)[-1]
    mapped, fd = last.consistency_defect(rule)
    assert mapped == 0.0
    assert fd < 1e-3


def test_custom_rule_decays_exponentially():
    path = make_deterministic_path(lambda t: 0.0, 0.0, 1.0, 0.01)
    rule = PlasticRule(kind="direct-custom", custom_c=lambda a, z, y, t: -2.0 * a)
    g0 = grid_from_function(((-1.0, 1.0, 5),), lambda z: z.copy(), 0.0)
    last = evolve_field(g0, rule, path, 1.0, 0.01)[-1]
    # RK4 global error is about (lambda h)^4 lambda T / 120 = 2.7e-9 here
    np.testing.assert_allclose(last.a_values[:, 0], g0.a_values[:, 0] * math.exp(-2.0),
                               rtol=5e-9)


def test_evolve_requires_whole_steps():
    path = make_deterministic_path(math.sin, 0.0, 1.0, 1e-3)
    rule = PlasticRule(k=0.5)
    g0 = zero_potential(((-1.0, 1.0, 3),), rule, 0.0)
    with pytest.raises(ValueError):
        evolve_field(g0, rule, path, 1.0, 0.3)
    snaps = evolve_field(g0, rule, path, 1.0, 0.1, every=5)
    assert [round(s.t, 12) for s in snaps] == [0.0, 0.5, 1.0]


def test_step_outside_stimulus_domain():
    path = make_deterministic_path(math.sin, 0.0, 1.0, 1e-2)
    rule = PlasticRule(k=0.5)
    g0 = zero_potential(((-1.0, 1.0, 3),), rule, 0.95)
    with pytest.raises(DomainError):
        step_field(g0, rule, path, 0.1)


def test_blow_up_names_node():
    path = make_deterministic_path(lambda t: 0.0, 0.0, 10.0, 1e-2)
    rule = PlasticRule(kind="direct-custom", custom_c=lambda a, z, y, t: a ** 2)
    g0 = grid_from_function(((0.0, 1.0, 3),), lambda z: 10.0 * z + 1.0, 0.0)
    with np.errstate(over="ignore", invalid="ignore"), \
            pytest.raises(NumericError, match="node"):
        evolve_field(g0, rule, path, 10.0, 0.5)


def test_pullback_limit_truncation_bound():
    path = make_deterministic_path(math.sin, -60.0, 0.0, 1e-3)
    z = np.array([[0.3]])
    full, _ = pullback_limit_grad(z, 0.0, 0.5, 1.0, path, 60.0)
    short, bound = pullback_limit_grad(z, 0.0, 0.5, 1.0, path, 10.0)
    assert abs(full - short).max() <= bound
    with pytest.raises(ValueError):
        pullback_limit_grad(z, 0.0, 0.0, 1.0, path, 10.0)


def test_pullback_limit_attracts_every_start():
    path = make_deterministic_path(math.sin, -40.0, 0.0, 1e-3)
    z = np.array([[0.2], [-0.7]])
    lim, _ = pullback_limit_grad(z, 0.0, 0.5, 1.0, path, 40.0)
    for g0 in (-3.0, 0.0, 5.0):
        v = closed_form_grad_solution(z, 0.0, -30.0, g0, 0.5, 1.0, path)
        assert np.max(np.abs(v - lim)) < 6.0 * math.exp(-15.0)


def test_interpolation_exact_on_affine_field():
    axes = ((-1.0, 2.0, 7), (0.0, 1.0, 4))
    A = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = np.array([0.3, -0.1])
    grid = grid_from_function(axes, lambda z: z @ A.T + b)
    x = np.random.default_rng(1).uniform([-1.0, 0.0], [2.0, 1.0], (100, 2))
    np.testing.assert_allclose(eval_field(grid, x), x @ A.T + b, atol=1e-12)


def test_interpolation_returns_nodes_exactly():
    grid = grid_from_function(((0.0, 1.0, 11),), lambda z: np.sin(7 * z))
    nodes = grid.nodes()
    np.testing.assert_array_equal(eval_field(grid, nodes), grid.a_values)


def test_no_extrapolation():
    grid = grid_from_function(((0.0, 1.0, 3),), lambda z: z)
    with pytest.raises(DomainError):
        eval_field(grid, [1.5])


def test_field_gradient_of_linear_field():
    A = np.array([[1.0, 2.0], [-3.0, 0.5]])
    grid = grid_from_function(((-1, 1, 5), (-1, 1, 6)), lambda z: z @ A.T)
    J = field_gradient(grid)
    np.testing.assert_allclose(J, np.broadcast_to(A, J.shape), atol=1e-12)


def test_node_independence():
    path = make_deterministic_path(lambda t: [math.sin(t), math.cos(t)], 0.0, 1.0, 1e-2)
    rule = PlasticRule(k=0.5, sigma=1.0)
    z = np.random.default_rng(2).normal(size=(20, 2))
    state = (np.zeros(20), np.zeros((20, 2)))
    u, g = step_nodes(z, state, rule, path, 0.0, 0.1)
    u1, g1 = step_nodes(z[3:4], (state[0][3:4], state[1][3:4]), rule, path, 0.0, 0.1)
    assert u1[0] == u[3]
    np.testing.assert_array_equal(g1[0], g[3])


def test_snapshot_round_trip(tmp_path):
    rule = PlasticRule(k=0.5, sigma=1.0)
    g0 = potential_grid(((-1, 1, 5), (0, 2, 3)), lambda z: np.sum(z ** 2, axis=1),
                        lambda z: 2 * z, rule, 0.0)
    path = make_deterministic_path(lambda t: [math.sin(t), 0.0], 0.0, 1.0, 1e-2)
    g1 = evolve_field(g0, rule, path, 0.5, 0.1)[-1]
    save_snapshot(g1, tmp_path / "f.csv", rule)
    g2, params = load_snapshot(tmp_path / "f.csv")
    np.testing.assert_array_equal(g1.a_values, g2.a_values)
    np.testing.assert_array_equal(g1.grad_u, g2.grad_u)
    assert g2.t == g1.t and g2.axes == g1.axes
    assert params["k"] == 0.5
