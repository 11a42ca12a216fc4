import math

import numpy as np
import pytest

from nonholo import autodiff as ad
from nonholo.system import (AdaptedChart, MechanicalSystem, PhaseState, SingularMetric,
                            compressed_metric, connection_from_constraints, energy, legendre,
                            legendre_inverse, validate)


def free_particle():
    chart = AdaptedChart(("x", "y"), (), ())
    return MechanicalSystem(chart, lambda q: np.eye(2), lambda q: np.zeros((0, 2)), name="free")


def test_chart_bookkeeping(snake):
    c = snake.system.chart
    assert c.names == ("theta", "phi", "psi", "x", "y")
    assert (c.n, c.m, c.n_shape, c.n_h, c.n_gw) == (5, 3, 2, 1, 2)
    assert c.index("psi") == 2


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        AdaptedChart(("a",), ("a",), ())


def test_validate_passes_on_models(snake, ball):
    for b in (snake, ball):
        rep = validate(b.system, samples=20, seed=3)
        assert rep.passed, rep.failures
        assert rep.direct_sum_violation < 1e-10


def test_validate_free_particle():
    rep = validate(free_particle(), samples=5)
    assert rep.passed
    assert rep.min_metric_eigenvalue == pytest.approx(1.0)


def test_indefinite_metric_flagged_unless_declared(se2):
    assert validate(se2.system, samples=10).passed
    sys = MechanicalSystem(se2.system.chart, se2.system.metric, se2.system.connection,
                           h_generators=se2.system.h_generators, h_abelian=False,
                           structure_constants=se2.system.structure_constants, definite=True)
    assert not validate(sys, samples=10).passed


def test_fiber_dependent_metric_fails_validation(snake):
    base = snake.system

    def metric(q):
        k = ad.stack(np.asarray(base.metric(np.zeros(5)), dtype=float).tolist()) if not isinstance(q, ad.ADScalar) \
            else ad.constant(np.asarray(base.metric(np.zeros(5))), q.n, q.order)
        bump = ad.place((5, 5), [((0, 0), 0.1 * ad.sin(q[3]))], like=q)
        return k + bump

    sys = MechanicalSystem(base.chart, metric, base.connection)
    rep = validate(sys, samples=20, seed=1)
    assert not rep.passed
    assert rep.gw_invariance_violation > 1e-3


def test_validate_rejects_zero_samples(snake):
    with pytest.raises(ValueError):
        validate(snake.system, samples=0)


def test_compressed_energy_at_right_angle(snake):
    st = PhaseState([0.0, math.pi / 2, 0.0], [1.0, 0.0, 0.0], space="Qbar")
    assert energy(snake.system, st) == pytest.approx(0.5, abs=1e-14)


def test_legendre_round_trip_and_linearity(ball, rng):
    sys = ball.system
    for _ in range(10):
        q = sys.chart.sample(rng)
        v1, v2 = rng.normal(size=5), rng.normal(size=5)
        a, b = rng.normal(size=2)
        p1 = legendre(sys, PhaseState(q, v1)).fibers
        p2 = legendre(sys, PhaseState(q, v2)).fibers
        p12 = legendre(sys, PhaseState(q, a * v1 + b * v2)).fibers
        assert np.allclose(p12, a * p1 + b * p2, atol=1e-12)
        back = legendre_inverse(sys, PhaseState(q, p1, "cotangent"))
        assert np.allclose(back.fibers, v1, atol=1e-11)


def test_energy_agrees_between_representations(snake, rng):
    sys = snake.system
    r = sys.chart.sample(rng, "Qbar")
    v = rng.normal(size=3)
    t = PhaseState(r, v, space="Qbar")
    assert energy(sys, t) == pytest.approx(energy(sys, legendre(sys, t)), rel=1e-12)


def test_legendre_checks_state_kind_and_size(snake):
    with pytest.raises(ValueError):
        legendre(snake.system, PhaseState([0, 1, 0], [0, 0, 0], "cotangent", "Qbar"))
    with pytest.raises(ValueError):
        legendre(snake.system, PhaseState([0, 1], [0, 0], space="Qbar"))


def test_constrained_state_detection(snake):
    q = np.array([0.1, 1.0, 0.0, 0.0, 0.0])
    assert PhaseState(q, [1, 0, 0, 0, 0]).is_constrained(snake.system)
    assert not PhaseState(q, [1, 0, 0, 0.1, 0]).is_constrained(snake.system)


def test_connection_from_constraints_matches_model(snake, rng):
    R = snake.parameters["R"]

    def forms(q):
        # ẋ + R cotφ cosθ θ̇ = 0 written with a scaled s-block
        th, ph = q[0], q[1]
        cot = ad.cos(ph) / ad.sin(ph)
        return ad.place((2, 5), [((0, 0), 2 * R * cot * ad.cos(th)), ((0, 3), 2.0),
                                 ((1, 0), R * cot * ad.sin(th)), ((1, 4), 1.0)], like=q)

    conn = connection_from_constraints(snake.system.chart, forms)
    for _ in range(5):
        q = snake.system.chart.sample(rng)
        assert np.allclose(conn(q), snake.system.connection(q), atol=1e-14)
        qa = ad.seed_array(q, 1)
        assert np.allclose(conn(qa).partials, snake.system.connection(qa).partials, atol=1e-12)


def test_connection_from_constraints_rejects_bad_input(snake):
    chart = snake.system.chart
    with pytest.raises(ValueError):
        connection_from_constraints(chart, lambda q: np.zeros((2, 4)))(np.zeros(5))
    with pytest.raises(SingularMetric):
        connection_from_constraints(chart, lambda q: np.zeros((2, 5)))(np.zeros(5))


@pytest.mark.parametrize("name", ["snake", "ball"])
def test_hand_jets_match_autodiff(name, request, rng):
    sys = request.getfixturevalue(name).system
    for _ in range(10):
        q = sys.chart.sample(rng)
        kap, dkap, A, dA = sys.jet(q)
        qa = ad.seed_array(q, 1)
        K, Aa = sys.metric(qa), sys.connection(qa)
        K = K if isinstance(K, ad.ADScalar) else ad.constant(K, 5, 1)
        assert np.allclose(kap, K.value, atol=1e-13)
        assert np.allclose(dkap, K.partials, atol=1e-12)
        assert np.allclose(A, Aa.value, atol=1e-13)
        assert np.allclose(dA, Aa.partials, atol=1e-12)


def test_se2_compressed_metric_entry(se2, rng):
    for _ in range(5):
        r = se2.system.chart.sample(rng, "Qbar")
        kb = compressed_metric(se2.system, r)
        assert kb[1, 1] == pytest.approx(3 + 2 * math.cos(r[0]), abs=1e-13)
        assert np.allclose(kb, kb.T)


def test_chart_sampling_stays_inside(ball, rng):
    c = ball.system.chart
    for _ in range(50):
        assert c.inside(c.sample(rng))
    assert not c.inside(np.array([0.0, 0.0, 0.0, 0.0, 0.0]))
