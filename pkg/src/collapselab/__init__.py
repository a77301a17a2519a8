"""Numerical laboratory for blowup and collapse mass quantization in the
two-dimensional Smoluchowski-Poisson system with Dirichlet Poisson coupling."""

__version__ = "0.1.0"

from .grids import (CartesianGrid, RadialGrid, ScalarField, MeasureSnapshot,
                    make_cartesian_grid, make_disk_grid, make_radial_grid,
                    integrate, local_mass)
from .testfunctions import TestFunction, bump, constant, quadratic
from .poisson import (GreenKernel, PoissonSolveError, green_eval, green_grad_x,
                      quadratic_form, rho_phi, solve_poisson_dirichlet)
from .observables import (TraceTable, dissipation, free_energy, monotonicity_bound,
                          pairing, stationarity_residual, weak_form_residual)
from .evolution import SchemeViolation, SimState, StepControl, adaptive_dt, run, step
from .radial import (BlowupFit, CollapseEstimate, RadialMassProfile, RadialRunControl,
                     estimate_blowup_time, extract_collapse_mass, gaussian_profile,
                     reconstruct_density, run_radial, step_radial)
from .meanfield import (MeanFieldState, NewtonDivergence, continue_branch,
                        disk_density, disk_mu, disk_potential, solve_meanfield,
                        to_density)
from .diagnostics import (Bubble, BubbleSet, Cutoff, RescaledSnapshot,
                          backward_rescale, check_eps_regularity, detect_bubbles,
                          envelope_mass_trace, local_second_moment, make_cutoff,
                          rescaled_second_moment)
from .config import ConfigError, RunConfig, parse_config
