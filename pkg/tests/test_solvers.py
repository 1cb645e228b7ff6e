import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraclab import (GridFunction, NoConvergence, SolverConfig, apply_operator, gagliardo_energy, lq_norm,
                     solve_dirichlet, solve_first_eigenpair, solve_torsion)
from fraclab.errors import InvalidQ, ValidationError
from fraclab.solvers import Reduced, minimize

import oracles
from support import eigen, interval_kernel, torsion

LAMBDA = 2 * math.pi * oracles.HALF_LAPLACIAN_LAMBDA1


def _interior(K):
    return K.grid.cls == 0


def _const(K, c, interior_only=True):
    g = K.grid
    v = np.where(_interior(K), c, 0.0) if interior_only else np.full(g.size, c)
    return GridFunction(v, g.id, 0.0 if interior_only else c)


# ---------------------------------------------------------------- torsion / Dirichlet

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_torsion_solves_the_equation(p):
    K = interval_kernel(1 / 32, p)
    u = torsion(1 / 32, p)
    lu = apply_operator(K, u).values[_interior(K)]
    np.testing.assert_allclose(lu, 1.0, atol=1e-6)
    assert np.all(u.values[_interior(K)] > 0)
    assert np.all(u.values[~_interior(K)] == 0)


def test_torsion_approaches_closed_form():
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        K = interval_kernel(h)
        u = torsion(h)
        x = K.grid.nodes[:, 0]
        mid = np.abs(x) < 0.5
        errs.append(np.max(np.abs(u.values[mid] / oracles.torsion_half_laplacian(x[mid]) - 1)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.03


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_torsion_scales_with_source(p):
    K = interval_kernel(1 / 32, p)
    u1 = torsion(1 / 32, p)
    u4 = solve_dirichlet(K, _const(K, 4.0), GridFunction.zeros(K.grid))
    np.testing.assert_allclose(u4.values, 4.0 ** (1 / (p - 1)) * u1.values, rtol=1e-6, atol=1e-12)


def test_comparison_principle():
    K = interval_kernel(1 / 32, 3.0)
    rng = np.random.default_rng(5)
    f1 = np.where(_interior(K), rng.random(K.grid.size), 0.0)
    f2 = f1 + np.where(_interior(K), rng.random(K.grid.size), 0.0)
    u1 = solve_dirichlet(K, GridFunction(f1, K.grid.id), GridFunction.zeros(K.grid))
    u2 = solve_dirichlet(K, GridFunction(f2, K.grid.id), GridFunction.zeros(K.grid))
    assert np.all(u2.values >= u1.values - 1e-9)


@given(st.floats(-3, 3), st.sampled_from([1.5, 2.0, 3.0]))
@settings(max_examples=8)
def test_constant_boundary_data_is_reproduced(c, p):
    K = interval_kernel(1 / 16, p)
    g = _const(K, c, interior_only=False)
    u = solve_dirichlet(K, GridFunction.zeros(K.grid), g, u0=GridFunction.zeros(K.grid))
    # L(u) ~ |u-c|^(p-1) near the solution, so a residual tolerance pins u only to its (p-1)th root
    atol = 10 * (1e-8 * (1 + abs(c))) ** (1 / max(p - 1, 1)) * (1 + abs(c))
    np.testing.assert_allclose(u.values, c, atol=atol)


def test_iteration_cap_raises_with_best_iterate():
    K = interval_kernel(1 / 32, 3.0)
    with pytest.raises(NoConvergence) as exc:
        solve_torsion(K, SolverConfig(max_iters=2))
    assert isinstance(exc.value.best, GridFunction)
    assert exc.value.code == "NO_CONVERGENCE"


def test_solver_config_validation():
    for kw in (dict(max_iters=0), dict(tol_grad=-1.0), dict(shrink=1.5)):
        with pytest.raises(ValidationError):
            SolverConfig(**kw)
    assert SolverConfig().grad_tol(3.0) == pytest.approx(4e-8)


def test_preconditioner_refuses_bounds():
    K = interval_kernel(1 / 16, 3.0)
    prob = Reduced(K, K.interior_pos, np.zeros(K.grid.size), 0.0, np.ones(len(K.interior_pos)))
    with pytest.raises(ValueError):
        minimize(prob, np.zeros(len(K.interior_pos)), SolverConfig(), lo=0.0, precondition=True)


def test_descent_is_monotone_and_traced(tmp_path):
    K = interval_kernel(1 / 16, 3.0)
    prob = Reduced(K, K.interior_pos, np.zeros(K.grid.size), 0.0, np.ones(len(K.interior_pos)))
    trace = tmp_path / "trace.csv"
    cfg = SolverConfig(verbosity=2, trace_path=str(trace))
    for pre in (True, False):
        res = minimize(prob, np.zeros(len(K.interior_pos)), cfg, precondition=pre)
        assert res.converged
        assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    text = trace.read_text()
    assert text.count("iteration,objective,residual") == 2


def test_boxed_descent_respects_bounds():
    K = interval_kernel(1 / 16, 2.0)
    prob = Reduced(K, K.interior_pos, np.zeros(K.grid.size), 0.0, 50 * np.ones(len(K.interior_pos)))
    res = minimize(prob, np.zeros(len(K.interior_pos)), SolverConfig(), lo=0.0, hi=1.0)
    assert res.u.min() >= 0 and res.u.max() <= 1
    assert np.any(res.u == 1.0)


# ---------------------------------------------------------------- eigenpairs

def test_eigenvalue_converges_to_reference():
    lams = [eigen(h).lam for h in (1 / 32, 1 / 64, 1 / 128)]
    assert lams[0] < lams[1] < lams[2] < LAMBDA * 1.001
    assert abs(lams[2] / LAMBDA - 1) < 0.01


@pytest.mark.parametrize("p,q", [(2.0, 2.0), (3.0, 3.0), (3.0, 2.0), (1.5, 1.5)])
def test_eigenpair_properties(p, q):
    K = interval_kernel(1 / 32, p, q=q)
    r = eigen(1 / 32, p, q=q)
    assert r.converged and r.sign_definite
    assert lq_norm(r.u, q, K) == pytest.approx(1.0, rel=1e-10)
    assert gagliardo_energy(K, r.u) == pytest.approx(r.lam, rel=1e-8)
    it = _interior(K)
    assert np.all(r.u.values[it] > 0)
    # L u = lam |u|^(q-2) u on the domain
    lu = apply_operator(K, r.u).values[it]
    np.testing.assert_allclose(lu, r.lam * r.u.values[it] ** (q - 1), rtol=1e-4,
                               atol=1e-4 * np.max(np.abs(lu)))


def test_eigen_sign_follows_explicit_init():
    K = interval_kernel(1 / 32)
    r = eigen(1 / 32)
    neg = solve_first_eigenpair(K, 2.0, init=-r.u)
    np.testing.assert_allclose(neg.u.values, -r.u.values, atol=1e-6)


def test_eigen_methods_and_seeds_agree():
    K = interval_kernel(1 / 32, 3.0, q=3.0)
    ref = eigen(1 / 32, 3.0, q=3.0)
    for r in (solve_first_eigenpair(K, 3.0, SolverConfig(seed=11)),
              solve_first_eigenpair(K, 3.0, init=GridFunction.zeros(K.grid)),
              solve_first_eigenpair(K, 3.0, method="inverse")):
        assert r.lam == pytest.approx(ref.lam, rel=1e-7)
        assert np.max(np.abs(r.u.values - ref.u.values)) <= 1e-4


def test_eigen_rejects_bad_q_and_method():
    K = interval_kernel(1 / 16, 2.0)
    with pytest.raises(InvalidQ):
        solve_first_eigenpair(K, 3.0)
    with pytest.raises(ValidationError):
        solve_first_eigenpair(K, 2.0, method="power")
    with pytest.raises(ValidationError):
        solve_first_eigenpair(K, 2.0, init="ones")
