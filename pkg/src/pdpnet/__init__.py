"""Multiscale stochastic reaction networks, their exact simulation and their PDP limits."""
from ._backend import HAVE_NUMBA, USE_NUMBA, backend_name
from .analysis import (convergence_study, ks_distance, martingale_residual, occupation_time,
                       pdp_martingale, ssa_martingale, wasserstein1)
from .limits import (averaged_rates, build_limit, build_regime_a, build_regime_b, build_regime_c,
                     build_regime_d, limit_initial_state, solve_poisson, stationary_distribution)
from .model import (ClassifiedModel, ModelError, NetworkModel, RegimeError, classify, load_model,
                    parse_model, propensity, reference_model)
from .pdp import FlowConfig, PdpSpec, run_pdp_ensemble, simulate_pdp
from .rate_expr import eval_rate, parse_rate_expr
from .ssa import SimGuards, Simulator, run_ensemble, simulate_direct, simulate_time_change

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA", "USE_NUMBA", "backend_name",
    "convergence_study", "ks_distance", "martingale_residual", "occupation_time",
    "pdp_martingale", "ssa_martingale", "wasserstein1",
    "averaged_rates", "build_limit", "build_regime_a", "build_regime_b", "build_regime_c",
    "build_regime_d", "limit_initial_state", "solve_poisson", "stationary_distribution",
    "ClassifiedModel", "ModelError", "NetworkModel", "RegimeError", "classify", "load_model",
    "parse_model", "propensity", "reference_model",
    "FlowConfig", "PdpSpec", "run_pdp_ensemble", "simulate_pdp",
    "eval_rate", "parse_rate_expr",
    "SimGuards", "Simulator", "run_ensemble", "simulate_direct", "simulate_time_change",
]
