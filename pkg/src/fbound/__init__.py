"""Free-boundary solvers for American options under linear and nonlinear Black-Scholes models."""

from .core import (
    MarketParams, Constant, Leland, Avellaneda, RAPM, BarlesSoner, FreyStremme,
    psi, sigma_squared, parabolicity_margin, signed_power,
    FboundError, DomainError, ConvergenceError, SingularVolatilityError, ExerciseRegionError,
)

__version__ = "0.1.0"
