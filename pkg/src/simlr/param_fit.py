"""Regularized least-squares estimation of weekly (beta, gamma).

The one-step SIR update is linear in the rates. For a pair of consecutive
states the predicted change is

    [dS]   [-a   0] [beta ]
    [dI] = [ a  -I] [gamma],     a = S * I / N

so stacking the pairs of a window gives an ordinary linear least-squares
problem. The Gaussian priors add ``lambda1 * (beta - beta0)**2`` and
``lambda2 * (gamma - gamma0)**2`` to the objective, which only shifts the
diagonal and right-hand side of the 2x2 normal equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from simlr.sir_core import RateParams, SirState

DAYS_PER_WEEK = 7

# 1 - corr(beta, gamma)**2 below this is treated as a singular normal matrix
_MIN_DECORRELATION = 1e-13


class UnidentifiableError(ValueError):
    """The window carries no information about one or both rates."""

    def __init__(self, parameter: str, week_index: int | None = None) -> None:
        self.parameter = parameter
        self.week_index = week_index
        where = "" if week_index is None else f" in week {week_index}"
        super().__init__(f"{parameter} is unidentifiable{where}: singular normal equations")


@dataclass(frozen=True)
class FitConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    beta0: float = 0.0
    gamma0: float = 0.0

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be non-negative")

    @classmethod
    def from_prior_std(
        cls, beta0: float, sigma_beta: float, gamma0: float, sigma_gamma: float
    ) -> "FitConfig":
        """Gaussian priors N(beta0, sigma_beta**2), N(gamma0, sigma_gamma**2)."""
        return cls(
            lambda1=1.0 / (2.0 * sigma_beta**2),
            lambda2=1.0 / (2.0 * sigma_gamma**2),
            beta0=beta0,
            gamma0=gamma0,
        )


@dataclass(frozen=True)
class WeeklyParams:
    week_index: int
    beta: float
    gamma: float
    residual: float
    clamped: bool = False

    @property
    def params(self) -> RateParams:
        return RateParams(self.beta, self.gamma)


class WindowFit(NamedTuple):
    params: RateParams
    residual: float
    clamped: bool


def design_system(states: Sequence[SirState]) -> tuple[np.ndarray, np.ndarray]:
    """Stack the per-pair linear systems of a window.

    Returns ``(A, b)`` with two rows per consecutive pair such that the
    one-step prediction error is ``b - A @ [beta, gamma]``.
    """
    if len(states) < 2:
        raise ValueError("a window needs at least two states")
    n = states[0].n
    rows = []
    rhs = []
    for prev, cur in zip(states[:-1], states[1:]):
        if cur.n != n:
            raise ValueError(f"population changes inside window: {n} -> {cur.n}")
        a = prev.s * prev.i / prev.n
        rows.append((-a, 0.0))
        rows.append((a, -prev.i))
        rhs.append(cur.s - prev.s)
        rhs.append(cur.i - prev.i)
    return np.asarray(rows, dtype=float), np.asarray(rhs, dtype=float)


def objective(states: Sequence[SirState], params: RateParams, config: FitConfig) -> float:
    """Squared one-step prediction error plus the prior penalty."""
    A, b = design_system(states)
    err = b - A @ np.array([params.beta, params.gamma])
    return float(
        err @ err
        + config.lambda1 * (params.beta - config.beta0) ** 2
        + config.lambda2 * (params.gamma - config.gamma0) ** 2
    )


def fit_window(states: Sequence[SirState], config: FitConfig = FitConfig()) -> WindowFit:
    """Closed-form minimizer of the regularized objective over one window.

    Negative solutions are projected onto the non-negative quadrant by
    checking the constrained candidates (one or both rates pinned at zero),
    which is exact for a convex quadratic in two variables.
    """
    A, b = design_system(states)
    lam = np.array([config.lambda1, config.lambda2])
    prior = np.array([config.beta0, config.gamma0])
    M = A.T @ A + np.diag(lam)
    g = A.T @ b + lam * prior

    if M[0, 0] <= 0.0:
        raise UnidentifiableError("beta")
    if M[1, 1] <= 0.0:
        raise UnidentifiableError("gamma")
    if np.linalg.det(M) / (M[0, 0] * M[1, 1]) < _MIN_DECORRELATION:
        raise UnidentifiableError("beta and gamma")

    theta = np.linalg.solve(M, g)
    clamped = False
    if theta[0] < 0 or theta[1] < 0:
        clamped = True
        theta = _nonnegative_minimizer(M, g)

    params = RateParams(float(theta[0]), float(theta[1]))
    err = b - A @ theta
    return WindowFit(params, float(err @ err), clamped)


def _nonnegative_minimizer(M: np.ndarray, g: np.ndarray) -> np.ndarray:
    # minimize 0.5 x'Mx - g'x over x >= 0 by enumerating active sets
    candidates = [
        np.array([max(g[0] / M[0, 0], 0.0), 0.0]),
        np.array([0.0, max(g[1] / M[1, 1], 0.0)]),
        np.zeros(2),
    ]

    def q(x: np.ndarray) -> float:
        return 0.5 * x @ M @ x - g @ x

    return min(candidates, key=q)


def fit_weekly_series(
    daily_states: Sequence[SirState], config: FitConfig = FitConfig()
) -> list[WeeklyParams]:
    """Fit one (beta, gamma) pair per 7-day window.

    ``daily_states`` holds ``7k + 1`` states: window ``k`` spans
    ``daily_states[7k : 7k + 8]``, so each window starts from the last state
    of the previous one.
    """
    n_states = len(daily_states)
    if n_states < DAYS_PER_WEEK + 1 or (n_states - 1) % DAYS_PER_WEEK != 0:
        raise ValueError(
            f"expected 7k + 1 daily states (k >= 1), got {n_states}"
        )
    weekly = []
    for k in range((n_states - 1) // DAYS_PER_WEEK):
        window = daily_states[k * DAYS_PER_WEEK : (k + 1) * DAYS_PER_WEEK + 1]
        try:
            fit = fit_window(window, config)
        except UnidentifiableError as exc:
            raise UnidentifiableError(exc.parameter, week_index=k) from exc
        weekly.append(
            WeeklyParams(
                week_index=k,
                beta=fit.params.beta,
                gamma=fit.params.gamma,
                residual=fit.residual,
                clamped=fit.clamped,
            )
        )
    return weekly


def fit_recent_weeks(
    daily_states: Sequence[SirState],
    config: FitConfig = FitConfig(),
    max_weeks: int | None = None,
) -> list[WeeklyParams]:
    """Fit the trailing whole weeks of a daily series.

    Windows are aligned to the end of the series. Fitting walks backwards
    and stops at the first unidentifiable window (typically the pre-epidemic
    stretch where nobody is infected), so the result is the longest
    identifiable run of weeks ending at the last state. Week indices count
    from the start of that run.
    """
    n_weeks = (len(daily_states) - 1) // DAYS_PER_WEEK
    if max_weeks is not None:
        n_weeks = min(n_weeks, max_weeks)
    end = len(daily_states) - 1
    fits: list[WindowFit] = []
    for k in range(n_weeks):
        lo = end - (k + 1) * DAYS_PER_WEEK
        try:
            fit = fit_window(daily_states[lo : lo + DAYS_PER_WEEK + 1], config)
        except UnidentifiableError:
            break
        if not (math.isfinite(fit.params.beta) and math.isfinite(fit.params.gamma)):
            break
        fits.append(fit)
    fits.reverse()
    return [
        WeeklyParams(k, f.params.beta, f.params.gamma, f.residual, f.clamped)
        for k, f in enumerate(fits)
    ]
