"""Independent reference computations used by the tests.

Nothing here calls the package's kernel or energy code: weights come from direct quadrature
of the point-to-cell integral, sums are plain Python loops, and closed forms are spelled out.
"""
import math

import numpy as np
from scipy import integrate, special

# first Dirichlet eigenvalue of (-Delta)^(1/2) on (-1,1) (Kwasnicki 2012)
HALF_LAPLACIAN_LAMBDA1 = 1.1577738836977


def cell_weight(xi, xj, h, n, ps):
    """``int_{cell j} |xi - y|^-(n+ps) dy`` by adaptive quadrature (cell centred at xj)."""
    xi, xj = np.atleast_1d(xi), np.atleast_1d(xj)
    e = n + ps
    if n == 1:
        a, b = xj[0] - h / 2 - xi[0], xj[0] + h / 2 - xi[0]
        v, _ = integrate.quad(lambda y: abs(y) ** -e, a, b, epsabs=0, epsrel=1e-12, limit=200)
        return v
    f = lambda y, x: ((x - xi[0]) ** 2 + (y - xi[1]) ** 2) ** (-e / 2)
    v, _ = integrate.dblquad(f, xj[0] - h / 2, xj[0] + h / 2, xj[1] - h / 2, xj[1] + h / 2,
                             epsabs=0, epsrel=1e-10)
    return v


def tail_1d(x, lo, hi, ps):
    """``int_{R \\ (lo,hi)} |x-y|^-(1+ps) dy``."""
    f = lambda t: t ** (-1 - ps)
    a, _ = integrate.quad(f, x - lo, math.inf)
    b, _ = integrate.quad(f, hi - x, math.inf)
    return a + b


def phi(t, p):
    return math.copysign(abs(t) ** (p - 1), t) if t != 0 else 0.0


def brute_operator_1d(nodes, cls_far, u, u_far, h, ps, p, lo, hi, rows):
    """``2 [sum_j w_ij phi(u_i-u_j) + T_i phi(u_i-u_far)]`` with quadrature weights, loop form."""
    out = []
    for i in rows:
        s = 0.0
        for j in range(len(nodes)):
            if j == i:
                continue
            s += cell_weight(nodes[i], nodes[j], h, 1, ps) * phi(u[i] - u[j], p)
        s += tail_1d(nodes[i], lo, hi, ps) * phi(u[i] - u_far, p)
        out.append(2 * s)
    return np.array(out)


def brute_pair_energy(w, u, p):
    """``sum_{i != j} w_ij |u_i - u_j|^p`` as a double loop."""
    m = len(u)
    s = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                s += w[i, j] * abs(u[i] - u[j]) ** p
    return s


def torsion_half_laplacian(x):
    """Torsion function of ``2 P.V. int (u(x)-u(y)) |x-y|^-2 dy`` on (-1,1): ``sqrt(1-x^2)/(2 pi)``."""
    return np.sqrt(np.clip(1 - np.asarray(x) ** 2, 0, None)) / (2 * math.pi)


def sharpness_closed_form(n, p, ps, beta):
    """``-2 int u^(p-1) |y|^-(n+ps)`` for u = |y|^beta in B(0,1), 1 outside."""
    a = beta * (p - 1) - ps
    sphere = 2 * math.pi ** (n / 2) / special.gamma(n / 2)
    return -2 * sphere * (1 / a + 1 / ps)


def richardson(values, hs, order=1.0):
    """Extrapolated limit from the two finest values assuming error ~ h^order."""
    (h1, v1), (h2, v2) = sorted(zip(hs, values))[:2]
    r = (h2 / h1) ** order
    return (r * v1 - v2) / (r - 1)


def fit_order(values, hs):
    """Observed convergence order from three values on h, h/2, h/4."""
    v = [x for _, x in sorted(zip(hs, values), reverse=True)]
    return math.log2(abs(v[0] - v[1]) / abs(v[1] - v[2]))
