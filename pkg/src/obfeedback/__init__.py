"""Selective threshold feedback for opportunistic beamforming.

Submodules
----------
numerics
    Special functions, batched adaptive quadrature, monotone inversion.
sinr_models
    Rayleigh, Nakagami and Rician SINR distributions with samplers.
policies
    Threshold and interval feedback policies, load and outage.
mc_sim
    Reproducible Monte-Carlo estimates of rate, load and switch events.
analytic
    Quadrature evaluation of two-user, homogeneous and conditional rates.
schur
    Schur-concavity certificates and optimality region maps.
optimize
    Two-user exhaustive search and figure curves.
cli
    The ``obf`` experiment runner.
"""

__version__ = "0.1.0"

from .analytic import rate_homogeneous, rate_two_user_beam, rate_two_user_on_plane
from .mc_sim import RateEstimate, estimate_rate
from .optimize import optimal_two_user
from .policies import GeneralPolicy, Mode, ThresholdPolicy, parse_policy
from .sinr_models import Nakagami, Rayleigh, Rician, SinrModel, parse_model

__all__ = [
    "__version__",
    "SinrModel",
    "Rayleigh",
    "Nakagami",
    "Rician",
    "parse_model",
    "ThresholdPolicy",
    "GeneralPolicy",
    "Mode",
    "parse_policy",
    "RateEstimate",
    "estimate_rate",
    "rate_two_user_beam",
    "rate_two_user_on_plane",
    "rate_homogeneous",
    "optimal_two_user",
]
