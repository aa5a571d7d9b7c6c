"""Non-uniform stability of damped second-order systems: modal truncations,
resolvent growth, semigroup decay and the conditions linking them."""
from .errors import (ConfigurationError, DomainError, InsufficientData, NumericalFailure,
                     NustabError, PrecisionExhausted, SpectrumHit, UndampedPole)
from .modal_core import (Couplings, FractionalDiag, ModalSystem, Pointwise, SystemSpec, Weak,
                         build_modal_system, system_spec)
from .operator_assembly import assemble
from .rate_calculus import RateFunction

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DomainError", "InsufficientData", "NumericalFailure", "NustabError",
    "PrecisionExhausted", "SpectrumHit", "UndampedPole",
    "Couplings", "FractionalDiag", "ModalSystem", "Pointwise", "SystemSpec", "Weak",
    "build_modal_system", "system_spec", "assemble", "RateFunction",
]
