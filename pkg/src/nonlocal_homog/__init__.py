"""Numerical laboratory for periodic homogenization of heavy-tailed convolution operators."""

__version__ = "0.1.0"

from .coefficients import PeriodicCoefficient, make_builtin_coefficient, mean_lambda, validate_coefficient
from .discretization import (DiscreteField, EpsilonStencil, TorusGrid, apply_operator, assemble_stencil,
                             energy_form, fractional_energy_tail, translation_modulus)
from .harness import (ConvergenceReport, StudyConfig, emit_plot, fit_rate, mass_escape, run_study,
                      weak_convergence_probe)
from .kernels import (AngularDensity, JumpKernel, make_builtin_kernel, normalize, oscillation_phi,
                      rescaled_density, tail_mass, validate_kernel)
from .solvers import (EffectiveSymbol, effective_symbol, init_symbol, solve_effective, solve_epsilon,
                      apply_effective_quadrature)
