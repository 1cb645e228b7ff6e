import numpy as np
import pytest
from hypothesis import given, strategies as st

from fraclab import (GridFunction, energy_gradient, gagliardo_energy, lq_norm, rayleigh_quotient,
                     torsion_gradient, torsion_objective)
from fraclab.errors import GridMismatch, ZeroFunction

import oracles
from support import interval_kernel, random_interior

P_VALUES = [1.5, 2.0, 3.0]


def _shift(u, c):
    return GridFunction(u.values + c, u.grid_id, u.far_value + c)


@pytest.mark.parametrize("p", P_VALUES)
def test_energy_matches_double_loop(p):
    K = interval_kernel(1 / 8, p)
    u = random_interior(K, np.random.default_rng(0))
    uA = u.values[K.active]
    ref = oracles.brute_pair_energy(K.w, uA, p) + 2 * np.sum((K.far_sum + K.tail) * np.abs(uA) ** p)
    assert gagliardo_energy(K, u) == pytest.approx(K.grid.h * ref, rel=1e-12)


def test_zero_function_has_zero_energy():
    K = interval_kernel(1 / 16)
    g = K.grid
    assert gagliardo_energy(K, GridFunction(np.zeros(g.size), g.id, 0.0)) == 0.0


@given(st.integers(0, 2 ** 31), st.floats(-5, 5), st.sampled_from(P_VALUES))
def test_energy_homogeneous_and_shift_invariant(seed, c, p):
    K = interval_kernel(1 / 16, p)
    u = random_interior(K, np.random.default_rng(seed))
    e = gagliardo_energy(K, u)
    assert e > 0
    assert gagliardo_energy(K, u.scaled(c)) == pytest.approx(abs(c) ** p * e, rel=1e-11, abs=1e-300)
    assert gagliardo_energy(K, _shift(u, c)) == pytest.approx(e, rel=1e-9)


@given(st.integers(0, 2 ** 31), st.floats(0.0, 1.0), st.sampled_from(P_VALUES))
def test_energy_convex(seed, t, p):
    K = interval_kernel(1 / 16, p)
    rng = np.random.default_rng(seed)
    u, v = random_interior(K, rng), random_interior(K, rng)
    mix = GridFunction((1 - t) * u.values + t * v.values, u.grid_id, 0.0)
    lhs = gagliardo_energy(K, mix)
    rhs = (1 - t) * gagliardo_energy(K, u) + t * gagliardo_energy(K, v)
    assert lhs <= rhs * (1 + 1e-12)


@pytest.mark.parametrize("p", P_VALUES)
def test_gradient_matches_finite_differences(p):
    K = interval_kernel(1 / 16, p)
    g = K.grid
    u = random_interior(K, np.random.default_rng(1), positive=True)
    grad = energy_gradient(K, u).values
    for i in g.interior[::5]:
        eps = 1e-6
        up, um = u.values.copy(), u.values.copy()
        up[i] += eps
        um[i] -= eps
        fd = (gagliardo_energy(K, GridFunction(up, g.id)) - gagliardo_energy(K, GridFunction(um, g.id))) / (2 * eps)
        assert grad[i] == pytest.approx(fd / p, rel=1e-6)


def test_torsion_gradient_matches_finite_differences():
    K = interval_kernel(1 / 16, 3.0)
    g = K.grid
    u = random_interior(K, np.random.default_rng(2), positive=True, scale=0.1)
    grad = torsion_gradient(K, u).values
    assert np.all(grad[g.cls != 0] == 0)
    for i in g.interior[::7]:
        eps = 1e-7
        up, um = u.values.copy(), u.values.copy()
        up[i] += eps
        um[i] -= eps
        fd = (torsion_objective(K, GridFunction(up, g.id)) - torsion_objective(K, GridFunction(um, g.id))) / (2 * eps)
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-12)


@pytest.mark.parametrize("q", [1.0, 2.0, 3.5])
def test_lq_norm_of_constant(q):
    K = interval_kernel(1 / 16)
    g = K.grid
    one = GridFunction(np.where(g.cls == 0, 1.0, 0.0), g.id)
    assert lq_norm(one, q, g) == pytest.approx(2 ** (1 / q))
    assert lq_norm(one, q, K) == lq_norm(one, q, g)


@given(st.integers(0, 2 ** 31), st.floats(0.01, 100))
def test_rayleigh_scale_invariant_when_q_equals_p(seed, c):
    K = interval_kernel(1 / 16, 2.0)
    u = random_interior(K, np.random.default_rng(seed))
    assert rayleigh_quotient(K, u.scaled(c), 2.0) == pytest.approx(rayleigh_quotient(K, u, 2.0), rel=1e-11)


def test_rayleigh_of_zero_raises():
    K = interval_kernel(1 / 16)
    g = K.grid
    with pytest.raises(ZeroFunction):
        rayleigh_quotient(K, GridFunction(np.zeros(g.size), g.id), 2.0)


def test_grid_mismatch_is_rejected():
    K1, K2 = interval_kernel(1 / 16), interval_kernel(1 / 8)
    u = random_interior(K2, np.random.default_rng(0))
    with pytest.raises(GridMismatch):
        gagliardo_energy(K1, u)
