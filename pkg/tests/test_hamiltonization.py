import numpy as np
import pytest

from nonholo import autodiff as ad
from nonholo import hamiltonization as hz
from nonholo import routh as rt
from nonholo.compression import CompressedSystem


@pytest.fixture(scope="module")
def snake_cs(snake):
    return CompressedSystem(snake.system)


def leaf_points(leaf, n, seed=0):
    rng = np.random.default_rng(seed)
    return [hz.sample_leaf(leaf, rng) for _ in range(n)]


# -- snakeboard ---------------------------------------------------------------

@pytest.mark.parametrize("mu", [0.0, 0.3, -1.2])
def test_snakeboard_factor_satisfies_leaf_conditions(snake, snake_cs, mu):
    f = hz.candidate_from_bundle(snake)
    leaf = rt.Leaf(snake_cs, [mu])
    rd = rt.RouthData(snake_cs, [mu])
    for w in leaf_points(leaf, 10):
        assert hz.stanchenko_residual(leaf, f, w).max_abs() < 1e-12
        triple, pair = hz.conformal_pde_residual(rd, f, w[:2])
        assert np.max(np.abs(triple)) < 1e-12
        assert np.max(np.abs(pair)) < 1e-12
    assert hz.closedness_check(leaf, f, samples=20) < 1e-12


def test_snakeboard_constant_factor_fails(snake_cs):
    leaf = rt.Leaf(snake_cs, [0.3])
    assert hz.closedness_check(leaf, hz.constant_candidate(), samples=20) > 1e-3
    w = leaf_points(leaf, 1)[0]
    assert hz.stanchenko_residual(leaf, hz.constant_candidate(), w).max_abs() > 1e-6


def test_snakeboard_perturbed_factor_fails(snake, snake_cs):
    f = snake.conformal_factor
    bent = hz.ConformalCandidate(lambda x: f(x) * (1.0 + 0.1 * ad.sin(x[1])))
    leaf = rt.Leaf(snake_cs, [0.3])
    assert hz.closedness_check(leaf, bent, samples=20) > 1e-4


@pytest.mark.parametrize("method", ["pde", "closedness"])
def test_snakeboard_solver_recovers_factor(snake, snake_cs, method):
    rd = rt.RouthData(snake_cs, [0.3])
    grid = np.column_stack([np.linspace(-1.0, 2.0, 30), np.linspace(0.4, 2.7, 30)])
    rep = hz.solve_conformal_ode(rd, grid, method=method)
    assert rep.feasible, rep.message
    assert hz.relative_error_on_grid(rep, hz.candidate_from_bundle(snake)) < 1e-6
    assert rep.as_dict()["grid_points"] == 30


def test_solver_rejects_bad_grid(snake_cs):
    rd = rt.RouthData(snake_cs, [0.3])
    with pytest.raises(ValueError):
        hz.solve_conformal_ode(rd, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        hz.log_gradient_field(rd, [0.1, 1.0], method="magic")


def test_snakeboard_strict_decoupling(snake_cs):
    rd = rt.RouthData(snake_cs, [0.3])
    grid = np.column_stack([np.zeros(5), np.linspace(0.5, 2.5, 5)])
    assert hz.solve_conformal_ode(rd, grid, require_decoupled=True).feasible


def test_snakeboard_reduced_bracket(snake, snake_cs, rng):
    br = hz.LeafBracket(snake_cs)
    for _ in range(5):
        u = np.concatenate([snake.system.chart.sample(rng, "Qbar")[:2], rng.normal(size=2), [0.4]])
        got = br.bracket(hz.coordinate_function(3), hz.coordinate_function(2), u)
        assert got == pytest.approx(snake.oracles["bracket_pphi_ptheta"](u[1], u[2]), rel=1e-10)
        # μ is a Casimir
        assert br.bracket(hz.coordinate_function(4), hz.coordinate_function(0), u) == 0.0


def test_snakeboard_jacobiator_identity(snake_cs):
    br = hz.LeafBracket(snake_cs)
    u = np.array([0.2, 1.0, 0.7, -0.3, 0.4])
    f = hz.coordinate_function
    seen = 0.0
    for trip in ((0, 1, 2), (1, 2, 3), (0, 2, 3), (1, 3, 2)):
        out = hz.jacobiator(br, f(trip[0]), f(trip[1]), f(trip[2]), u)
        assert abs(out["difference"]) < 1e-9 * max(1.0, abs(out["lhs"]))
        seen = max(seen, abs(out["lhs"]))
    assert seen > 1e-3  # the bracket is genuinely not Poisson


def test_jacobiator_lhs_against_finite_differences(snake_cs):
    br = hz.LeafBracket(snake_cs)
    u = np.array([0.2, 1.0, 0.7, -0.3, 0.4])
    c = hz.coordinate_function

    def inner(i, j):
        return lambda v: br.bracket(c(i), c(j), v)

    def fd_bracket(i, F, v, h=1e-5):
        grad = np.array([(F(v + h * e) - F(v - h * e)) / (2 * h) for e in np.eye(5)])
        return float(np.eye(5)[i] @ br.tensor(v) @ grad)

    i, j, k = 1, 2, 3
    lhs = fd_bracket(i, inner(j, k), u) + fd_bracket(j, inner(k, i), u) + fd_bracket(k, inner(i, j), u)
    assert hz.jacobiator(br, c(i), c(j), c(k), u)["lhs"] == pytest.approx(lhs, rel=1e-6)


def test_scaled_snakeboard_bracket_is_poisson(snake, snake_cs):
    br = hz.LeafBracket(snake_cs, scale=hz.candidate_from_bundle(snake).reciprocal())
    u = np.array([0.2, 1.0, 0.7, -0.3, 0.4])
    f = hz.coordinate_function
    for trip in ((0, 1, 2), (1, 2, 3), (0, 2, 3)):
        out = hz.jacobiator(br, f(trip[0]), f(trip[1]), f(trip[2]), u)
        assert abs(out["lhs"]) < 1e-10 and abs(out["rhs"]) < 1e-10


def test_canonical_jacobiator_is_zero():
    br = hz.CanonicalBracket(2)
    u = np.array([0.1, 0.2, 0.3, 0.4])
    F = lambda v: v[0] * v[2] ** 2
    G = lambda v: ad.sin(v[1]) * v[3]
    H = lambda v: v[0] * v[1] + v[3] ** 3
    out = hz.jacobiator(br, F, G, H, u)
    assert abs(out["lhs"]) < 1e-13 and out["rhs"] == 0.0


# -- Chaplygin ball -------------------------------------------------------------

@pytest.mark.parametrize("mu", [0.0, 0.7])
def test_ball_reciprocal_factor_closes_leaf_form(ball, ball_gauged, mu):
    f = hz.candidate_from_bundle(ball)
    leaf = rt.Leaf(ball_gauged, [mu])
    assert hz.closedness_check(leaf, f.reciprocal(), samples=15) < 1e-12


@pytest.mark.parametrize("mu", [0.0, 0.7])
def test_ball_model_factor_does_not_close(ball, ball_gauged, mu):
    leaf = rt.Leaf(ball_gauged, [mu])
    assert hz.closedness_check(leaf, hz.candidate_from_bundle(ball), samples=15) > 1e-3


def test_ball_stanchenko_at_zero_level(ball, ball_gauged):
    leaf = rt.Leaf(ball_gauged, [0.0])
    g = hz.candidate_from_bundle(ball).reciprocal()
    for w in leaf_points(leaf, 5):
        assert hz.stanchenko_residual(leaf, g, w).max_abs() < 1e-12


def test_ball_stanchenko_is_not_necessary_at_nonzero_level(ball, ball_gauged):
    # 1/f closes the form at μ ≠ 0 although the sufficient condition fails
    leaf = rt.Leaf(ball_gauged, [0.7])
    g = hz.candidate_from_bundle(ball).reciprocal()
    worst = max(hz.stanchenko_residual(leaf, g, w).max_abs() for w in leaf_points(leaf, 5))
    assert worst > 1e-4
    assert hz.closedness_check(leaf, g, samples=5) < 1e-12


def test_ball_invariant_density(ball, ball_gauged):
    leaf = rt.Leaf(ball_gauged, [0.5])
    f = hz.candidate_from_bundle(ball)
    rho = lambda w: 1.0 / f.value(w[:2])
    wrong = lambda w: f.value(w[:2])
    pts = leaf_points(leaf, 4, seed=5)
    assert max(abs(hz.invariant_density_residual(leaf, rho, w)) for w in pts) < 1e-7
    assert max(abs(hz.invariant_density_residual(leaf, wrong, w)) for w in pts) > 1e-4


def test_ball_solver_recovers_reciprocal(ball, ball_gauged):
    rd = rt.RouthData(ball_gauged, [0.0])
    grid = np.column_stack([np.linspace(0.4, 2.7, 25), np.linspace(-1.0, 2.0, 25)])
    rep = hz.solve_conformal_ode(rd, grid)
    assert rep.feasible, rep.message
    assert not rep.decoupled
    f = hz.candidate_from_bundle(ball)
    assert hz.relative_error_on_grid(rep, f.reciprocal()) < 1e-6
    assert hz.relative_error_on_grid(rep, f) > 1e-3
    strict = hz.solve_conformal_ode(rd, grid, require_decoupled=True)
    assert not strict.feasible


def test_ball_time_reparameterization(ball, ball_gauged):
    leaf = rt.Leaf(ball_gauged, [0.3])
    g = hz.candidate_from_bundle(ball).reciprocal()
    err = hz.reparameterized_flow_error(leaf, g, [1.0, 0.4, 0.3, -0.2], T=1.0)
    assert err < 1e-8


def test_scaled_ball_bracket_is_poisson(ball, ball_gauged):
    br = hz.LeafBracket(ball_gauged, scale=hz.candidate_from_bundle(ball))
    plain = hz.LeafBracket(ball_gauged)
    u = np.array([1.1, 0.4, 0.3, -0.5, 0.6])
    f = hz.coordinate_function
    out = hz.jacobiator(br, f(0), f(1), f(2), u)
    assert abs(out["lhs"]) < 1e-10
    raw = hz.jacobiator(plain, f(0), f(2), f(3), u)
    assert abs(raw["difference"]) < 1e-9 * max(1.0, abs(raw["lhs"]))


# -- scope --------------------------------------------------------------------

def test_nonabelian_solve_is_unsupported(se2):
    rd = rt.RouthData(CompressedSystem(se2.system), se2.default_level, check_basic=False)
    with pytest.raises(rt.Unsupported):
        hz.solve_conformal_ode(rd, np.zeros((2, 2)))


def test_bundle_without_factor(se2):
    with pytest.raises(ValueError):
        hz.candidate_from_bundle(se2)
