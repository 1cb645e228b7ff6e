import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fraclab import (COLLAR, FAR, INTERIOR, Ball, Cusp, Difference, Domain, GridFunction, Interval, Params,
                     Rectangle, build_grid, dist_to_boundary)
from fraclab.domain import core_nodes, domain_from_dict, shape_from_dict
from fraclab.errors import DomainEmpty, GridMismatch, InvalidQ, SpacingTooCoarse, ValidationError


# ---------------------------------------------------------------- Params

@given(st.floats(0.05, 0.95), st.floats(1.1, 4.0), st.sampled_from([1, 2]))
def test_p_star_formula(s, p, n):
    P = Params(n, s, p, 1.05)
    if p * s < n:
        assert P.p_star == pytest.approx(p * n / (n - p * s))
    else:
        assert P.p_star == math.inf


@pytest.mark.parametrize("kw", [dict(n=3), dict(s=0.0), dict(s=1.0), dict(p=1.0), dict(q=1.0)])
def test_params_rejects_invalid(kw):
    base = dict(n=1, s=0.5, p=2.0, q=2.0)
    base.update(kw)
    with pytest.raises(ValidationError):
        Params(**base)


def test_q_must_stay_below_p_star():
    # n=1, s=0.25, p=2: p* = 4
    with pytest.raises(InvalidQ):
        Params(1, 0.25, 2.0, 4.0)
    Params(1, 0.25, 2.0, 3.9)


# ---------------------------------------------------------------- build_grid

def test_interval_nodes_at_odd_multiples():
    g = build_grid(Domain(Interval(-1, 1), collar_delta=1.0), 0.25)
    x = g.nodes[g.interior, 0]
    np.testing.assert_allclose(x, np.arange(-7, 8, 2) * 0.125)


def test_interval_with_half_collar_is_too_coarse():
    # four collar layers need h <= delta/4
    with pytest.raises(SpacingTooCoarse):
        build_grid(Domain(Interval(-1, 1), collar_delta=0.5), 0.25)


def test_disk_interior_count_close_to_area():
    g = build_grid(Domain(Ball((0.0, 0.0), 1.0)), 0.1)
    assert abs(len(g.interior) - math.pi / 0.01) <= 0.05 * math.pi / 0.01


def test_zero_area_rectangle_is_empty():
    with pytest.raises(DomainEmpty):
        build_grid(Domain(Rectangle((0.0, 0.0), (1.0, 0.0)), collar_delta=0.4, trunc_radius=4.0), 0.1)


@given(st.floats(-2, 2), st.floats(0.3, 2.0), st.sampled_from([1 / 8, 1 / 16, 1 / 32]))
def test_classes_partition_and_respect_geometry(a, length, h):
    dom = Domain(Interval(a, a + length))
    if h > dom.delta / 4:
        return
    g = build_grid(dom, h)
    assert set(np.unique(g.cls)) <= {INTERIOR, COLLAR, FAR}
    x = g.nodes[:, 0]
    it = g.cls == INTERIOR
    assert np.all((x[it] > a) & (x[it] < a + length))
    col = g.cls == COLLAR
    d = np.maximum(a - x[col], x[col] - (a + length))
    assert np.all((d > 0) & (d < dom.delta))
    # the cells cover the far ball (1D: a contiguous run of cells)
    assert np.allclose(np.diff(x), h)
    assert g.nodes[0, 0] - h / 2 <= g.center[0] - g.r_inf + h
    assert g.nodes[-1, 0] + h / 2 >= g.center[0] + g.r_inf - h


@given(st.sampled_from([1 / 16, 1 / 32, 1 / 64]), st.floats(0.5, 3.0))
def test_volume_converges_to_measure(h, length):
    g = build_grid(Domain(Interval(0, length)), h * length)
    assert g.vol[g.interior].sum() == pytest.approx(length, abs=g.h)


def test_disk_volume_converges():
    errs = []
    for h in (0.1, 0.05, 0.025):
        g = build_grid(Domain(Ball((0.0, 0.0), 1.0)), h)
        errs.append(abs(g.vol[g.interior].sum() - math.pi))
    assert errs[2] < errs[0]
    assert errs[2] < 0.02


@pytest.mark.parametrize("shape", [Interval(-1.0, 1.0), Ball((0.0, 0.0), 1.0)])
def test_reflection_symmetry(shape):
    g = build_grid(Domain(shape), 1 / 8)
    refl = g.reflection_index(np.zeros(shape.dim))
    assert np.all(refl >= 0)
    np.testing.assert_array_equal(g.cls[refl], g.cls)
    np.testing.assert_allclose(g.nodes[refl], -g.nodes, atol=1e-12)


def test_refinement_nesting():
    dom = Domain(Ball((0.0, 0.0), 1.0))
    coarse, fine = build_grid(dom, 0.1), build_grid(dom, 0.05)
    # each interior coarse cell is the union of four fine cells, all interior
    offs = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]]) * 0.025
    fine_pts = {tuple(np.round(x, 9)) for x in fine.nodes[fine.interior]}
    for x in coarse.nodes[coarse.interior]:
        for o in offs:
            child = tuple(np.round(x + o, 9))
            if Ball((0.0, 0.0), 1.0).contains(np.array([x + o]))[0]:
                assert child in fine_pts


def test_node_order_is_lexicographic_and_deterministic():
    dom = Domain(Ball((0.0, 0.0), 1.0))
    g1, g2 = build_grid(dom, 0.1), build_grid(dom, 0.1)
    assert g1.id == g2.id
    keys = [tuple(x) for x in g1.nodes]
    assert keys == sorted(keys)


def test_domain_must_fit_in_half_truncation_ball():
    with pytest.raises(ValidationError):
        build_grid(Domain(Interval(-1, 1), trunc_radius=1.5), 1 / 16)


# ---------------------------------------------------------------- dist_to_boundary

def test_distance_examples():
    g = build_grid(Domain(Interval(-1, 1)), 1 / 8)
    d = dist_to_boundary(g, Domain(Interval(-1, 1)))
    i = int(np.argmin(np.abs(g.nodes[:, 0] - 0.3125)))
    assert d.values[i] == pytest.approx(1 - 0.3125)
    assert np.all(d.values[g.cls != INTERIOR] == 0)
    ball = Ball((0.0, 0.0), 1.0)
    assert ball.distance_to_boundary(np.array([[0.4, 0.0]]))[0] == pytest.approx(0.6)
    assert ball.distance_to_boundary(np.array([[0.0, -0.4]]))[0] == pytest.approx(0.6)


def test_composite_distance_is_flagged_approximate():
    from fraclab.errors import ApproximationWarning
    import warnings
    shape = Difference(Ball((0.0, 0.0), 1.0), Ball((0.0, 0.0), 0.5))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        d = shape.distance_to_boundary(np.array([[0.75, 0.0]]))
    assert any(issubclass(r.category, ApproximationWarning) for r in rec)
    assert d[0] == pytest.approx(0.25, abs=1e-2)


def test_cusp_difference_excludes_tip():
    shape = Difference(Ball((0.0, 0.0), 1.0), Cusp((0.0, 0.0), 2.0, 2.0, 0.5))
    assert not shape.contains(np.array([[0.0, 0.0]]))[0]
    assert not shape.contains(np.array([[0.3, 0.0]]))[0]
    assert shape.contains(np.array([[-0.3, 0.0]]))[0]
    assert shape.contains(np.array([[0.3, 0.5]]))[0]


def test_core_nodes_are_deep():
    dom = Domain(Interval(-1, 1))
    g = build_grid(dom, 1 / 16)
    core = core_nodes(g, dom)
    assert np.all(np.abs(g.nodes[core, 0]) <= 0.5 + 1e-12)
    assert len(core) > 0


def test_shape_from_dict_roundtrip():
    d = {"shape": {"type": "difference", "a": {"type": "ball", "center": [0, 0], "radius": 1},
                   "b": {"type": "rectangle", "lo": [0, 0], "hi": [0.5, 0.5]}}}
    dom = domain_from_dict(d)
    assert dom.n == 2
    assert dom.shape.contains(np.array([[-0.5, 0.0]]))[0]
    assert not dom.shape.contains(np.array([[0.25, 0.25]]))[0]
    with pytest.raises(ValidationError):
        shape_from_dict({"type": "torus"})


# ---------------------------------------------------------------- GridFunction

def test_grid_function_rejects_non_finite():
    g = build_grid(Domain(Interval(-1, 1)), 1 / 8)
    v = np.zeros(g.size)
    v[3] = np.nan
    with pytest.raises(ValidationError):
        GridFunction(v, g.id)


def test_grid_check_mismatch():
    g1 = build_grid(Domain(Interval(-1, 1)), 1 / 8)
    g2 = build_grid(Domain(Interval(-1, 1)), 1 / 16)
    with pytest.raises(GridMismatch):
        g1.check(g2.id)
