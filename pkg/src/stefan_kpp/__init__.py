"""Traveling waves and free-boundary dynamics of the advective Fisher-KPP equation."""

from stefan_kpp.kinetics import (
    Nonlinearity,
    TruncatedNonlinearity,
    make_logistic,
    make_polynomial,
    make_weighted_logistic,
    minimal_speed,
    truncate,
    validate_kpp,
)

__version__ = "0.1.0"

__all__ = [
    "Nonlinearity",
    "TruncatedNonlinearity",
    "make_logistic",
    "make_polynomial",
    "make_weighted_logistic",
    "minimal_speed",
    "truncate",
    "validate_kpp",
    "__version__",
]
