"""Robust reinsurance and investment game between n insurers under 4/2 stochastic volatility."""

from .equilibrium import EquilibriumProfile, solve_equilibrium
from .errors import (
    ConfigError,
    ConvergenceError,
    DegeneracyError,
    DomainError,
    NoEquilibriumError,
    StateError,
    ValidationError,
)
from .mean_field import TypeDistribution, solve_mean_field
from .params import GameSpec, InsurerType, MarketParams, baseline_spec, claim_correlation, load_config, validate, vol
from .value_function import ValueCoeffs, ValueFunction

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DegeneracyError",
    "DomainError",
    "EquilibriumProfile",
    "GameSpec",
    "InsurerType",
    "MarketParams",
    "NoEquilibriumError",
    "StateError",
    "TypeDistribution",
    "ValidationError",
    "ValueCoeffs",
    "ValueFunction",
    "baseline_spec",
    "claim_correlation",
    "load_config",
    "solve_equilibrium",
    "solve_mean_field",
    "validate",
    "vol",
]
__version__ = "0.1.0"
