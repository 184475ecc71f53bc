"""Bayesian adaptive control with separable drift uncertainty."""
from .dynamics import ControlSet, ExtendedState, Model, model_from_config, wind_tunnel
from .filtering import InfoState, Prior, posterior_mean, posterior_variance, widder_F
from .harness import CostEstimate, compare, estimate_cost, find_state_for_moments
from .lq import LQParams, ce_policy, naive_policy, solve_riccati
from .simulate import SimConfig, simulate_innovations, simulate_physical
from .solver import Axis, GridSpec, policy_from_table, solve, value_query

__version__ = "0.1.0"

__all__ = [
    "Axis", "ControlSet", "CostEstimate", "ExtendedState", "GridSpec", "InfoState", "LQParams", "Model", "Prior",
    "SimConfig", "ce_policy", "compare", "estimate_cost", "find_state_for_moments", "model_from_config",
    "naive_policy", "policy_from_table", "posterior_mean", "posterior_variance", "simulate_innovations",
    "simulate_physical", "solve", "solve_riccati", "value_query", "widder_F", "wind_tunnel",
]
