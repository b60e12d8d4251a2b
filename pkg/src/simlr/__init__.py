"""SIR forecasting with time-varying parameters and a policy-change graphical model."""

from simlr.sir_core import RateParams, SirState, new_infections, simulate, step

__version__ = "0.1.0"

__all__ = [
    "RateParams",
    "SirState",
    "new_infections",
    "simulate",
    "step",
    "__version__",
]
