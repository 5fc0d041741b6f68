import numpy as np
import pytest

from errors import DimensionMismatch, InvalidGrid, NoConvergence, PeerError
from kkt_solver import (
    DiscreteSolution,
    Grid,
    KKTOptions,
    _coefficients,
    _sweep_iteration,
    _system_residual,
    forward_integrate,
    forward_step,
    kkt_residual,
    solve_kkt,
)
from method_catalog import BUILTIN_NAMES, builtin_suite
from problems import BVProblem, get_problem
from reference import reference_solution
from settings import get_settings


def decay_problem() -> BVProblem:
    """y' = -y with no adjoint coupling: p stays zero"""
    return BVProblem(
        name="decay", m=1, T=1.0, y0=np.array([1.0]),
        g=lambda y, p: -y, phi=lambda y, p: 0.0 * p, terminal_p=lambda y: 0.0 * y,
        g_y=lambda y, p: -np.ones(y.shape + (1,)), g_p=lambda y, p: np.zeros(y.shape + (1,)),
        phi_y=lambda y, p: np.zeros(y.shape + (1,)), phi_p=lambda y, p: np.zeros(y.shape + (1,)),
        terminal_jacobian=lambda y: np.zeros(y.shape + (1,)),
    )


def linear_quadratic_problem(y0: float = 0.0) -> BVProblem:
    """y' = -p, p' = -y, p(T) = 0"""
    return BVProblem(
        name="linear-quadratic", m=1, T=1.0, y0=np.array([y0]),
        g=lambda y, p: -p, phi=lambda y, p: -y, terminal_p=lambda y: 0.0 * y,
    )


def test_grid():
    grid = Grid(T=2.5, N=40, c=np.array([1 / 3, 2 / 3, 1.0]))
    assert grid.h == pytest.approx(2.5 / 41)
    assert grid.stage_times.shape == (41, 3)
    assert grid.stage_times[-1, -1] == pytest.approx(2.5)
    with pytest.raises(InvalidGrid):
        Grid(T=1.0, N=1, c=np.array([0.5, 1.0]))
    with pytest.raises(PeerError):
        Grid(T=-1.0, N=10, c=np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        Grid(T=0.0, N=10, c=np.array([0.5, 1.0]))


def test_trivial_solution_has_zero_residual():
    suite = builtin_suite("BDF3o32")
    solution = solve_kkt(suite, linear_quadratic_problem(0.0), 10)
    assert np.max(np.abs(solution.Y)) == 0.0
    assert np.max(np.abs(solution.P)) == 0.0
    assert kkt_residual(suite, linear_quadratic_problem(0.0), solution).max <= 1e-14


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_forward_only_matches_standalone_integration(name):
    suite = builtin_suite(name)
    problem = decay_problem()
    solution = solve_kkt(suite, problem, 40)
    np.testing.assert_allclose(solution.Y, forward_integrate(suite, problem, 40), atol=1e-12)
    assert np.max(np.abs(solution.P)) == 0.0
    assert solution.strategy == "sweeps"
    assert solution.yh_T[0] == pytest.approx(np.exp(-1.0), abs=1e-4)


def test_forward_integration_is_third_order():
    suite = builtin_suite("BDF3o32")
    problem = decay_problem()
    errors = []
    for N in (20, 40, 80):
        Y = forward_integrate(suite, problem, N)
        grid = Grid(problem.T, N, suite.c)
        errors.append(np.max(np.abs(Y[..., 0] - np.exp(-grid.stage_times))))
    assert np.log2(errors[0] / errors[1]) > 2.6
    assert np.log2(errors[1] / errors[2]) > 2.6


def test_linear_quadratic_against_exact_solution():
    # y'' = y with y(0) = 1, y'(1) = 0: y = cosh(1 - t) / cosh(1), p = -y'
    problem = linear_quadratic_problem(1.0)
    suite = builtin_suite("BDF3o32")
    solution = solve_kkt(suite, problem, 80)
    t = solution.stage_times
    y_exact = np.cosh(1.0 - t) / np.cosh(1.0)
    p_exact = np.sinh(1.0 - t) / np.cosh(1.0)
    assert np.max(np.abs(solution.Y[..., 0] - y_exact)) < 1e-4
    assert np.max(np.abs(solution.P[..., 0] - p_exact)) < 5e-3


def test_forward_step_with_zero_k_entry():
    suite = builtin_suite("BDF3o22")
    problem = decay_problem()
    h = 0.1
    Y_prev = np.ones((3, 1))
    Y = forward_step(suite.end, Y_prev, np.zeros((3, 1)), h, problem)
    residual = suite.end.A @ Y - suite.end.B @ Y_prev + h * suite.end.K[:, None] * Y
    np.testing.assert_allclose(residual, 0.0, atol=1e-13)


def test_full_end_matrix_step():
    suite = builtin_suite("BDF3o32")
    problem = get_problem("rayleigh").problem
    h = 2.5 / 41
    rng = np.random.default_rng(2)
    Y_prev = rng.normal(size=(3, 2))
    P = rng.normal(size=(3, 2))
    Y = forward_step(suite.end, Y_prev, P, h, problem)
    residual = suite.end.A @ Y - suite.end.B @ Y_prev - h * suite.end.K[:, None] * problem.eval_g(Y, P)
    assert np.max(np.abs(residual)) <= 1e-11


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_rayleigh_solution_satisfies_every_group(name):
    suite = builtin_suite(name)
    problem = get_problem("rayleigh").problem
    solution = solve_kkt(suite, problem, 40)
    check = kkt_residual(suite, problem, solution)
    assert set(check.groups) == {
        "start-forward", "interior-forward", "end-forward", "interior-adjoint", "end-adjoint", "boundary",
    }
    assert check.within(1e-11)
    assert solution.residual_norm == check.max


def test_sweeps_and_newton_reach_the_same_solution():
    suite = builtin_suite("BDF3o32")
    problem = get_problem("rayleigh").problem
    auto = solve_kkt(suite, problem, 40, KKTOptions(strategy="auto"))
    newton = solve_kkt(suite, problem, 40, KKTOptions(strategy="newton"))
    assert newton.strategy == "newton"
    assert newton.sweeps == 0
    np.testing.assert_allclose(auto.Y, newton.Y, atol=1e-9)
    np.testing.assert_allclose(auto.P, newton.P, atol=1e-9)


def test_perturbed_stage_is_detected():
    suite = builtin_suite("BDF3o32")
    problem = get_problem("rayleigh").problem
    solution = solve_kkt(suite, problem, 40)
    Y = solution.Y.copy()
    Y[5, 1, 0] += 1e-6
    perturbed = DiscreteSolution(
        method=solution.method, problem=solution.problem, grid=solution.grid, Y=Y, P=solution.P,
        yh_T=solution.yh_T, ph_0=solution.ph_0, residual_norm=0.0, strategy=solution.strategy,
    )
    assert kkt_residual(suite, problem, perturbed).max >= 1e-7


def test_residual_shape_check():
    suite = builtin_suite("BDF3o32")
    problem = decay_problem()
    solution = solve_kkt(suite, problem, 10)
    broken = DiscreteSolution(
        method=solution.method, problem=solution.problem, grid=solution.grid, Y=solution.Y[:-1],
        P=solution.P, yh_T=solution.yh_T, ph_0=solution.ph_0, residual_norm=0.0, strategy="sweeps",
    )
    with pytest.raises(DimensionMismatch):
        kkt_residual(suite, problem, broken)


def test_sweeps_only_reports_history():
    suite = builtin_suite("BDF3o32")
    problem = get_problem("rayleigh").problem
    with pytest.raises(NoConvergence) as info:
        solve_kkt(suite, problem, 40, KKTOptions(strategy="sweeps", max_sweeps=1))
    assert len(info.value.history) == 1


def test_initial_guess_callable():
    suite = builtin_suite("BDF3o32")
    problem = linear_quadratic_problem(1.0)

    def exact(t):
        y = np.cosh(1.0 - t) / np.cosh(1.0)
        p = np.sinh(1.0 - t) / np.cosh(1.0)
        return y[:, None], p[:, None]

    warm = solve_kkt(suite, problem, 40, KKTOptions(initial_guess=exact))
    cold = solve_kkt(suite, problem, 40)
    np.testing.assert_allclose(warm.Y, cold.Y, atol=1e-10)


def test_invalid_strategy():
    with pytest.raises(ValueError):
        solve_kkt(builtin_suite("BDF3o32"), decay_problem(), 10, KKTOptions(strategy="fsolve"))


def test_zero_overrides_are_kept():
    options = KKTOptions(max_sweeps=0, tol=0.0).resolved()
    assert options.max_sweeps == 0
    assert options.tol == 0.0

    solution = solve_kkt(builtin_suite("BDF3o32"), linear_quadratic_problem(1.0), 20, KKTOptions(max_sweeps=0))
    assert solution.strategy == "sweeps+newton"
    assert solution.sweeps == 0
    assert solution.newton_iterations >= 1


def test_sweeps_never_hand_back_a_worse_iterate():
    suite = builtin_suite("BDF3o32")
    problem = get_problem("rayleigh").problem
    start = solve_kkt(suite, problem, 40, KKTOptions(strategy="newton"))
    grid = start.grid
    coefficients = _coefficients(suite, grid.N)
    options = KKTOptions(max_sweeps=1, tol=0.0).resolved()

    Y, P, history, _, _ = _sweep_iteration(suite, problem, grid, start.Y, start.P, options)
    assert len(history) == 1
    assert (_system_residual(suite, problem, grid, coefficients, Y, P)
            <= _system_residual(suite, problem, grid, coefficients, start.Y, start.P))


@pytest.mark.slow
def test_van_der_pol_solve_from_reference():
    spec = get_problem("van_der_pol")
    suite = builtin_suite("BDF3o32")
    reference = reference_solution(spec.problem, spec.reference_n)
    warm = solve_kkt(suite, spec.problem, 160, KKTOptions(initial_guess=reference))
    assert kkt_residual(suite, spec.problem, warm).within(get_settings().kkt_residual_tol)

    cold = solve_kkt(suite, spec.problem, 160)
    np.testing.assert_allclose(warm.Y, cold.Y, atol=1e-8)
    np.testing.assert_allclose(warm.P, cold.P, atol=1e-8)
