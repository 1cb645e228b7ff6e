"""Numerical laboratory for the fractional p-Laplacian on 1D/2D desk-scale domains."""

__version__ = "0.1.0"

from .domain import (COLLAR, FAR, INTERIOR, Ball, Cusp, Difference, Domain, Grid, GridFunction, Interval,
                     Params, Rectangle, Union, build_grid, core_nodes, dist_to_boundary)
from .errors import (ApproximationWarning, FraclabError, NoConvergence, ValidationError)
from .kernel import (KernelMatrix, annulus_integral, apply_operator, assemble_kernel, load_kernel, phi_p,
                     save_kernel)
from .energy import (energy_gradient, gagliardo_energy, lq_norm, rayleigh_quotient, torsion_gradient,
                     torsion_objective)
from .solvers import (EigenResult, SolverConfig, solve_dirichlet, solve_first_eigenpair, solve_torsion)
from .capacity import CapacityResult, WienerReport, capacity, capacity_grid, wiener_integrand
from .lab import (HarnackReport, HopfReport, IsolationReport, harnack_bounds, hidden_convexity_check,
                  hopf_constant, isolation_experiment, min_principle_check, sharpness_example)
