"""Macroscopic foraging-swarm model, a matching microsimulator, and the glue to
calibrate one against the other."""

from .analytic import ModelParams, derive_params
from .errors import *  # noqa: F401,F403
from .fit import FitResult, fit_characterizations, fit_legacy_params
from .harness import ComparisonRow, ExperimentPlan, run_plan
from .microsim import SimConfig, run, steady_stats
from .odemodel import OdeState, solve_generalized, solve_legacy
from .scenario import Arena, BlockCluster, Scenario, make_density_scenario, make_scenario

__version__ = "0.1.0"
