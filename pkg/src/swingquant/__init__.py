"""Swing option pricing with firm volume constraints.

The premium of a swing contract, as a function of its global volume
bounds, is concave and piecewise affine on a triangular tiling of the
admissible set, and integer bounds admit 0/1 optimal purchase policies.
This package prices the integer vertices by backward dynamic programming
on a quantized Markov state tree and fills the rest of the surface by
affine interpolation.
"""
from .contracts import (
    GlobalConstraints,
    InfeasibleContractError,
    PremiumSurface,
    RawContract,
    Tile,
    admissible_interval,
    advance_constraints,
    interpolate_on_tile,
    locate_tile,
    normalize_contract,
    reachable_set,
)
from .model import TwoFactorParams, closed_form_strip, simulate_factor_paths
from .oracle import ScenarioLattice, TwoPeriodInstance, price_two_period
from .quantizer import Codebook, distortion, lloyd_optimize, nearest_index
from .tree import (
    QuantTree,
    build_tree,
    extract_and_value_policy,
    premium_surface,
    quantized_dp_price,
)

__version__ = "0.1.0"

__all__ = [
    "GlobalConstraints",
    "InfeasibleContractError",
    "PremiumSurface",
    "RawContract",
    "Tile",
    "admissible_interval",
    "advance_constraints",
    "interpolate_on_tile",
    "locate_tile",
    "normalize_contract",
    "reachable_set",
    "TwoFactorParams",
    "closed_form_strip",
    "simulate_factor_paths",
    "ScenarioLattice",
    "TwoPeriodInstance",
    "price_two_period",
    "Codebook",
    "distortion",
    "lloyd_optimize",
    "nearest_index",
    "QuantTree",
    "build_tree",
    "extract_and_value_policy",
    "premium_surface",
    "quantized_dp_price",
    "__version__",
]
