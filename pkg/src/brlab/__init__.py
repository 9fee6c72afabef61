"""Random block Schrödinger operators on the Bethe strip.

Green-function recursions on K-ary trees with W x W blocks, population
dynamics for the forward message, Lyapunov and fractional-moment estimators,
and resonance statistics.
"""

__version__ = "0.1.0"

from .ensembles import EnsembleSpec, ModelSpec, sample_goe, sample_potential
from .errors import BetheLabError, NumericalError, UsageError
from .free import free_gamma_matrix, free_gamma_scalar, free_lyapunov
from .lyapunov import estimate_L, free_L0, integrated_L, spectral_sets
from .moments import decoupling_ratio, estimate_phi, factorization_moment_ratios, goe_quadform_lower_bound, sigma_statistic
from .pool import GammaPool, PoolConfig, load_pool, prepare_pool, save_pool
from .resonance import ResonanceConfig, moment_statistics, pz_probability, resonance_events, simon_wolff_sum
from .rng import RngStream
from .tree import TreeGeometry, compute_tree_greens, dense_resolvent_oracle

__all__ = [
    "BetheLabError",
    "EnsembleSpec",
    "GammaPool",
    "ModelSpec",
    "NumericalError",
    "PoolConfig",
    "ResonanceConfig",
    "RngStream",
    "TreeGeometry",
    "UsageError",
    "compute_tree_greens",
    "decoupling_ratio",
    "dense_resolvent_oracle",
    "estimate_L",
    "estimate_phi",
    "factorization_moment_ratios",
    "free_L0",
    "free_gamma_matrix",
    "free_gamma_scalar",
    "free_lyapunov",
    "goe_quadform_lower_bound",
    "integrated_L",
    "load_pool",
    "moment_statistics",
    "prepare_pool",
    "pz_probability",
    "resonance_events",
    "sample_goe",
    "sample_potential",
    "save_pool",
    "sigma_statistic",
    "simon_wolff_sum",
    "spectral_sets",
]
