from .backends import (BirkhoffBackend, CapabilityError, LinearBackend,
                       SyntheticBackend, make_backend)
from .coords import (DomainError, action_norm, actions, angles, reconstruct,
                     rotate, weighted_norm)
from .hill import HillBackend, SpectralResolutionError, hill_actions
from .numeric import DifferentiationError, numeric_hessian_diag, numeric_jacobian

__all__ = [
    "BirkhoffBackend", "CapabilityError", "LinearBackend", "SyntheticBackend",
    "HillBackend", "make_backend", "DomainError", "SpectralResolutionError",
    "DifferentiationError", "actions", "angles", "rotate", "reconstruct",
    "weighted_norm", "action_norm", "hill_actions", "numeric_jacobian",
    "numeric_hessian_diag",
]
