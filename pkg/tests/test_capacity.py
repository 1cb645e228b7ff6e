import csv
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraclab import Ball, Domain, Interval, Params, capacity, capacity_grid, wiener_integrand
from fraclab.capacity import ball_nodes, write_wiener_csv
from fraclab.errors import GeometryError, UnresolvedRadius, ValidationError

P1 = Params(1, 0.3, 2.0, 2.0)


@lru_cache(maxsize=None)
def local(r, cells=16, p=2.0, s=0.3, xi=0.0):
    P = Params(1, s, p, min(p, 2.0))
    return capacity_grid([xi], r, P, cells=cells)


def cap_of(rho, r=0.2, cells=16, p=2.0, xi=0.0, shift=0.0):
    grid, K = local(r, cells, p, xi=xi)
    E = ball_nodes(grid, [xi + shift], rho)
    return capacity(grid, E, [xi], r, K)


def test_empty_set_has_zero_capacity():
    res = cap_of(0.0, shift=0.5)
    assert res.value == 0.0 and res.converged


def test_potential_is_a_unit_box_function():
    res = cap_of(0.1)
    grid, _ = local(0.2)
    v = res.potential.values
    assert v.min() >= 0 and v.max() <= 1
    np.testing.assert_array_equal(v[ball_nodes(grid, [0.0], 0.1)], 1.0)
    assert np.all(v[grid.cls != 0] == 0)


@given(st.floats(0.01, 0.2), st.floats(0.0, 1.0))
@settings(max_examples=10)
def test_capacity_is_monotone_in_the_set(rho, frac):
    small, big = cap_of(frac * rho).value, cap_of(rho).value
    assert small <= big * (1 + 1e-10)


def test_capacity_is_subadditive():
    grid, K = local(0.2)
    x = grid.nodes[:, 0]
    it = grid.interior
    A = it[(x[it] >= -0.2) & (x[it] <= 0.0)]
    B = it[(x[it] > 0.0) & (x[it] <= 0.2)]
    ca, cb = capacity(grid, A, [0.0], 0.2, K).value, capacity(grid, B, [0.0], 0.2, K).value
    cab = capacity(grid, np.union1d(A, B), [0.0], 0.2, K).value
    assert max(ca, cb) <= cab <= ca + cb


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_capacity_scales_like_r_to_n_minus_ps(p):
    vals = []
    for r in (0.4, 0.2, 0.1):
        P = Params(1, 0.3, p, 2.0)
        grid, K = capacity_grid([0.0], r, P, cells=12)
        E = ball_nodes(grid, [0.0], r)
        vals.append(capacity(grid, E, [0.0], r, K).value / r ** (1 - P.ps))
    np.testing.assert_allclose(vals, vals[0], rtol=1e-7)


def test_capacity_translation_invariant():
    a = cap_of(0.2, xi=0.0).value
    b = cap_of(0.2, xi=3.0).value
    assert b == pytest.approx(a, rel=1e-9)


def test_capacity_2d_disk_positive():
    P = Params(2, 0.4, 2.0, 2.0)
    grid, K = capacity_grid([0.0, 0.0], 0.1, P, cells=8)
    res = capacity(grid, ball_nodes(grid, [0.0, 0.0], 0.1), [0.0, 0.0], 0.1, K)
    assert res.converged and res.value > 0


def test_capacity_input_validation():
    grid, K = local(0.2)
    with pytest.raises(UnresolvedRadius):
        capacity(grid, [], [0.0], 0.05, K)
    far_node = grid.interior[0]
    with pytest.raises(GeometryError):
        capacity(grid, [far_node], [0.0], 0.2, K)
    with pytest.raises(GeometryError):
        capacity(grid, [grid.far[0]], [0.0], 0.2, K)
    with pytest.raises(ValidationError):
        capacity_grid([0.0, 0.0], 0.2, P1)


# ---------------------------------------------------------------- Wiener

@pytest.fixture(scope="module")
def wiener_1d():
    return wiener_integrand(Domain(Interval(-1, 1)), [1.0], 0.25, 4, P1, cells=12)


def test_wiener_half_line_is_self_similar(wiener_1d):
    rep = wiener_1d
    assert rep.usable.all() and not rep.errors
    np.testing.assert_allclose(rep.integrand, rep.integrand[0], rtol=1e-6)
    assert rep.diverging
    np.testing.assert_allclose(np.diff(rep.partial_sums), rep.integrand[1:] * math.log(2), rtol=1e-12)
    assert rep.slope == pytest.approx(rep.integrand[0] * math.log(2), rel=1e-6)


def test_wiener_csv_format(tmp_path, wiener_1d):
    path = tmp_path / "w.csv"
    write_wiener_csv(wiener_1d, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["k", "r_k", "cap", "integrand", "partial_sum"]
    assert len(rows) == 6
    assert float(rows[1][1]) == 0.25


def test_wiener_rejects_non_boundary_points():
    with pytest.raises(GeometryError):
        wiener_integrand(Domain(Interval(-1, 1)), [0.0], 0.25, 2, P1)
    with pytest.raises(GeometryError):
        wiener_integrand(Domain(Interval(-1, 1)), [3.0], 0.25, 2, P1)
    with pytest.raises(ValidationError):
        wiener_integrand(Domain(Interval(-1, 1)), [1.0], 0.25, -1, P1)


def test_wiener_disk_boundary_point_2d():
    P = Params(2, 0.4, 2.0, 2.0)
    rep = wiener_integrand(Domain(Ball((0.0, 0.0), 1.0)), [1.0, 0.0], 0.2, 2, P, cells=8)
    assert rep.usable.all()
    assert np.all(rep.integrand > 0)
    assert rep.diverging
