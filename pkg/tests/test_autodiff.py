import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonholo import autodiff as ad

finite = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)


def fd_grad(f, x, h=1e-5):
    """5-point central differences."""
    g = np.zeros(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def smooth(v):
    x, y, z = v[0], v[1], v[2]
    return ad.sin(x * y) + ad.exp(0.3 * z) * ad.cos(x) + ad.sqrt(2.0 + y * y) / (1.5 + ad.cos(z)) + (x - z) ** 3


def plain(v):
    return float(ad.value_of(smooth(np.asarray(v, dtype=float))))


@settings(max_examples=60, deadline=None)
@given(st.tuples(finite, finite, finite))
def test_gradient_matches_finite_differences(p):
    x = np.array(p)
    g = ad.gradient(smooth, x)
    ref = fd_grad(plain, x)
    assert np.allclose(g, ref, rtol=1e-6, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.tuples(finite, finite, finite))
def test_hessian_is_symmetric_and_matches_fd_of_gradient(p):
    x = np.array(p)
    H = ad.hessian(smooth, x)
    assert np.allclose(H, H.T, atol=1e-12)
    for i in range(3):
        ref = fd_grad(lambda v: ad.gradient(smooth, v)[i], x)
        assert np.allclose(H[i], ref, rtol=1e-6, atol=1e-7)


def test_chain_rule_on_known_function():
    # d/dx sin(x^2) = 2x cos(x^2)
    g = ad.gradient(lambda v: ad.sin(v[0] * v[0]), np.array([0.7]))
    assert g[0] == pytest.approx(2 * 0.7 * math.cos(0.49), rel=1e-14)


def test_partials_length_matches_seed():
    x = ad.seed_array(np.array([1.0, 2.0, 3.0, 4.0]))
    y = x[0] * x[3]
    assert np.asarray(y.partials).shape == (4,)


def test_matrix_inverse_derivative():
    def f(v):
        m = ad.stack([[2.0 + v[0], v[1]], [v[1], 3.0 + v[0] * v[1]]])
        return ad.inv(m)[0, 1]

    x = np.array([0.3, -0.4])
    assert np.allclose(ad.gradient(f, x), fd_grad(lambda v: float(ad.value_of(f(v))), x), rtol=1e-7)


def test_place_builds_plain_and_ad_matrices():
    q = ad.seed_array(np.array([0.5, 1.0]))
    m = ad.place((2, 2), [((0, 1), q[0] * q[1]), ((1, 0), 2.0)], like=q)
    assert isinstance(m, ad.ADScalar)
    assert np.allclose(m.value, [[0, 0.5], [2.0, 0]])
    assert np.allclose(m.partials[0, 1], [1.0, 0.5])
    p = ad.place((2, 2), [((1, 1), 4.0)])
    assert isinstance(p, np.ndarray) and p[1, 1] == 4.0


def test_compose_matches_jacobian_product():
    x = np.array([0.2, 0.9])
    J = np.array([[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]])
    inner = ad.first_order(ad.seed_array(x, 2)[0] * ad.sin(ad.seed_array(x, 2)[1]))
    outer = ad.compose(inner, J)
    assert np.allclose(outer.partials, np.asarray(inner.partials) @ J)
