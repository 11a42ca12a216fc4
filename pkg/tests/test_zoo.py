import math
import warnings

import numpy as np
import pytest

from nonholo import zoo
from nonholo.system import validate


def test_model_registry():
    assert set(zoo.MODELS) == {"snakeboard", "chaplygin-ball", "se2-toy"}
    assert zoo.get_model("chaplygin_ball").name == "chaplygin-ball"
    with pytest.raises(KeyError):
        zoo.get_model("bicycle")


@pytest.mark.parametrize("bad", [{"m": -1.0}, {"R": 0.0}, {"J1": float("nan")}])
def test_snakeboard_rejects_nonpositive_parameters(bad):
    with pytest.raises(ValueError):
        zoo.snakeboard(**bad)


def test_ball_rejects_nonpositive_inertia():
    with pytest.raises(ValueError):
        zoo.chaplygin_ball(I2=-2.0)


def test_snakeboard_inertia_relation_warns():
    with pytest.warns(UserWarning):
        b = zoo.snakeboard(J=0.5)
    assert b.notes
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        zoo.snakeboard()


def test_nondefault_parameters_flow_through(rng):
    b = zoo.snakeboard(m=2.0, R=0.5, J=0.1, J0=0.2, J1=0.1)
    assert validate(b.system, samples=5).passed
    from nonholo.compression import CompressedSystem
    cs = CompressedSystem(b.system)
    r = b.system.chart.sample(rng, "Qbar")
    v = rng.normal(size=3)
    assert cs.lagrangian(r, v) == pytest.approx(b.oracles["compressed_lagrangian"](r[1], *v))


def test_ball_gamma_is_unit_and_jacobian_matches(rng):
    for _ in range(5):
        b, c = rng.uniform(0.1, 3.0), rng.uniform(-3, 3)
        g = np.array(zoo.ball_gamma(b, c), dtype=float)
        assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-15)
        J = np.array(zoo.ball_gamma_jacobian(b, c), dtype=float)
        h = 1e-6
        fd_b = (np.array(zoo.ball_gamma(b + h, c)) - np.array(zoo.ball_gamma(b - h, c))) / (2 * h)
        fd_c = (np.array(zoo.ball_gamma(b, c + h)) - np.array(zoo.ball_gamma(b, c - h))) / (2 * h)
        assert np.allclose(J[:, 0], fd_b, atol=1e-9)
        assert np.allclose(J[:, 1], fd_c, atol=1e-9)


def test_ball_metric_from_rotation_matrices(ball, rng):
    P = ball.parameters
    Iv = np.diag([P["I1"], P["I2"], P["I3"]])
    for _ in range(5):
        q = ball.system.chart.sample(rng)
        E = np.array(zoo.ball_body_matrix(q[0], q[1]), dtype=float)
        kap = np.asarray(ball.system.metric(q), dtype=float)
        assert np.allclose(kap[:3, :3], E.T @ Iv @ E, atol=1e-13)


def test_ball_body_state_relation(ball, rng):
    P = ball.parameters
    mr2 = P["m"] * P["r"] ** 2
    Av = np.array([P["I1"], P["I2"], P["I3"]]) + mr2
    for _ in range(5):
        z = np.concatenate([ball.system.chart.sample(rng, "Qbar"), rng.normal(size=3)])
        _, Om, K, g = ball.oracles["body_state"](z)
        Om, K, g = (np.asarray(v, dtype=float) for v in (Om, K, g))
        assert np.allclose(K, Av * Om - mr2 * (g @ Om) * g, atol=1e-12)
        # the reference display with a plus sign and bare inertia disagrees
        assert np.max(np.abs(ball.oracles["constraint_K"](Om, g) - K)) > 1e-3


def test_se2_reference_reduced_lagrangian_differs(se2):
    # the derived entry is 3 + 2 cos x1, the reference gives 2(2 + cos x1)
    from nonholo.routh import RouthData
    from nonholo.compression import CompressedSystem
    rd = RouthData(CompressedSystem(se2.system), se2.default_level, check_basic=False)
    x, xd = np.array([0.7, 0.0]), np.array([0.0, 1.0])
    fiber = np.zeros(3)
    engine = rd.reduced_lagrangian(x, xd, fiber)
    assert engine == pytest.approx(0.5 * (3 + 2 * math.cos(0.7)), abs=1e-12)
    assert abs(engine - se2.oracles["reduced_lagrangian_reference"](0.7, 0.0, 1.0)) > 0.1


def test_se2_v_coordinates(se2):
    v = se2.oracles["v_coords"](1.0, 2.0, 0.3, 0.5, -0.4, 0.2, 0.1)
    assert v == pytest.approx((0.5 + 2.0 * 0.2, -0.4 - 0.05 - 0.1 * 2.0 * 0.2 - 1.0 * 0.2, 0.2))
