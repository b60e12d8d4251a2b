"""Weekly case forecasts from the trend-following SIR, SLOW, and their mixture.

The mixture weights the two experts' predictions by the probability of a
change in trend: ``p(CT=0)`` goes to tf-v-SIR, the rest to SLOW (repeat the
last observed week). Later steps chain on the mixture's own predictions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from simlr.data_pipeline import RegionHistory
from simlr.param_fit import FitConfig, WeeklyParams, fit_recent_weeks
from simlr.pgm.chain import PgmConfig, policy_path_distribution
from simlr.pgm.cpt import TRINARY, ct_distribution
from simlr.pgm.nn_cpd import urgency_distribution, urgency_features
from simlr.sir_core import RateParams, SirState, new_infections
from simlr.trend_model import (
    MIN_WEEKS,
    N_LAGS,
    TrendModel,
    fit_trend,
    predict_params,
    simulate_week,
    tfvsir_forecast,
)

logger = logging.getLogger(__name__)

MAX_HORIZON = 4
# CT at t+h depends on CP at weeks t+h-4 .. t+h-2
_CT_LAG_OFFSETS = (-4, -3, -2)
_BETA_SEARCH_CAP = 1e3


class ColdStartError(ValueError):
    """Not enough history to fit the forecaster."""


@dataclass(frozen=True)
class Forecast:
    """One step of a forecast made at ``origin_week`` (start of the last observed week)."""

    region: str
    origin_week: date
    horizon: int
    point: float
    weight_trend: float
    weight_slow: float
    tfvsir: float
    slow: float
    ct: np.ndarray = field(repr=False)
    cp_forecasts: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.horizon <= MAX_HORIZON:
            raise ValueError(f"horizon must be in 1..{MAX_HORIZON}")
        if abs(self.weight_trend + self.weight_slow - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if not self.point >= 0:
            raise ValueError(f"forecast point must be non-negative, got {self.point}")

    @property
    def target_week(self) -> date:
        return self.origin_week + timedelta(weeks=self.horizon)


@dataclass(frozen=True)
class FittedRegion:
    """Everything the forecasters need at one origin.

    ``weekly_cases``, ``weekly_cp`` and ``weeks_since_change`` are calendar
    aligned and end with the last observed week; ``weekly_params`` ends with
    that week too but may be shorter.
    """

    region: str
    origin_week: date
    state: SirState
    weekly_params: tuple[WeeklyParams, ...]
    trend: TrendModel
    weekly_cases: tuple[float, ...]
    weekly_cp: tuple[int, ...]
    weeks_since_change: int

    @property
    def population(self) -> float:
        return self.state.n


def _check_horizon(horizon: int) -> None:
    if not 1 <= horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must be in 1..{MAX_HORIZON}, got {horizon}")


def fit_history(history: RegionHistory, config: FitConfig = FitConfig()) -> FittedRegion:
    """Fit weekly rates and the trend model on a region's cleaned history."""
    weekly = fit_recent_weeks(history.daily_states, config)
    if len(weekly) < MIN_WEEKS:
        raise ColdStartError(
            f"{history.region} at {history.origin}: {len(weekly)} identifiable week(s) of "
            f"history; the forecaster needs at least {MIN_WEEKS}"
        )
    boundaries = history.weekly_states()
    cases = [new_infections(a, b) for a, b in zip(boundaries[:-1], boundaries[1:])]
    return FittedRegion(
        region=history.region,
        origin_week=history.origin - timedelta(weeks=1),
        state=history.daily_states[-1],
        weekly_params=tuple(weekly),
        trend=fit_trend(weekly),
        weekly_cases=tuple(cases),
        weekly_cp=tuple(int(c) for c in history.weekly_cp),
        weeks_since_change=int(history.weeks_since_change[-1]),
    )


def slow_forecast(last_observed_week_cases: float, horizon: int) -> list[float]:
    """Repeat the last observed weekly count ``horizon`` times."""
    _check_horizon(horizon)
    if not last_observed_week_cases >= 0:
        raise ValueError("weekly cases must be non-negative")
    return [float(last_observed_week_cases)] * horizon


def fitted_tfvsir_forecast(fitted: FittedRegion, horizon: int) -> list[float]:
    return tfvsir_forecast(fitted.state, fitted.weekly_params, fitted.trend, horizon)


def fitted_slow_forecast(fitted: FittedRegion, horizon: int) -> list[float]:
    return slow_forecast(fitted.weekly_cases[-1], horizon)


def calibrate_beta(state: SirState, gamma: float, target: float) -> float:
    """Smallest-error beta >= 0 whose week from ``state`` yields ``target`` cases.

    New infections over a week grow with beta, so a bracketing root search
    applies. Targets beyond what the susceptible pool allows get the largest
    beta searched.
    """

    def gap(beta: float) -> float:
        return simulate_week(state, RateParams(beta, gamma))[0] - target

    if gap(0.0) >= 0.0:
        return 0.0
    hi = 1.0
    while gap(hi) < 0.0:
        if hi >= _BETA_SEARCH_CAP:
            logger.info("target of %.6g cases unreachable from this state; beta capped at %g", target, hi)
            return hi
        hi *= 4.0
    return float(brentq(gap, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def _ct_weight(
    step: int,
    fitted: FittedRegion,
    pgm: PgmConfig,
    points: Sequence[float],
) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """P(CT) for forecast step ``step`` and the future CP marginals it used."""
    offsets = [step + k for k in _CT_LAG_OFFSETS]  # relative to the last observed week
    observed = [fitted.weekly_cp[o - 1] for o in offsets if o <= 0]
    n_future = sum(1 for o in offsets if o > 0)
    if n_future == 0:
        return ct_distribution(observed, pgm.cpts.ct), ()

    # CP at week t+k is driven by urgency in week t+k-1
    net = pgm.require_nn()
    cases = list(fitted.weekly_cases) + list(points)
    last = len(fitted.weekly_cases)
    urgency = [
        urgency_distribution(urgency_features(cases[: last + k], fitted.population), net)
        for k in range(n_future)
    ]
    paths = policy_path_distribution(fitted.weeks_since_change, urgency, pgm.cpts)
    ct = np.zeros(3)
    marginals = np.zeros((n_future, 3))
    for path, p in paths.items():
        ct += p * ct_distribution(observed + list(path), pgm.cpts.ct)
        for k, cp in enumerate(path):
            marginals[k, TRINARY.index(cp)] += p
    return ct, tuple(marginals)


def mixture_forecast(fitted: FittedRegion, pgm: PgmConfig, horizon: int) -> list[Forecast]:
    """SIMLR forecasts for steps ``1..horizon``.

    At each step tf-v-SIR predicts from the current state and rate lags and
    SLOW repeats the previous point (the last observed week at step 1). The
    mixture point weights them by P(CT). If tf-v-SIR got all the weight the
    chain continues from its state and rates unchanged; otherwise beta is
    recalibrated (gamma kept at its predicted value) so the simulated week
    reproduces the mixture point, and those rates join the lag window.
    """
    _check_horizon(horizon)
    if len(fitted.weekly_params) < N_LAGS:
        raise ColdStartError("need at least three fitted weeks")
    if len(fitted.weekly_cp) < -_CT_LAG_OFFSETS[0]:
        raise ColdStartError("need policy changes for at least four observed weeks")

    state = fitted.state
    betas = [w.beta for w in fitted.weekly_params]
    gammas = [w.gamma for w in fitted.weekly_params]
    prev = float(fitted.weekly_cases[-1])
    points: list[float] = []
    out: list[Forecast] = []
    for h in range(1, horizon + 1):
        params = predict_params(fitted.trend, betas[:-4:-1], gammas[:-4:-1])
        tf_cases, tf_state = simulate_week(state, params)
        slow = prev
        ct, cps = _ct_weight(h, fitted, pgm, points)
        w = float(ct[TRINARY.index(0)])
        lo, hi = min(tf_cases, slow), max(tf_cases, slow)
        point = min(max(w * tf_cases + (1.0 - w) * slow, lo), hi)

        if w == 1.0:
            state = tf_state
        else:
            beta = calibrate_beta(state, params.gamma, point)
            params = RateParams(beta, params.gamma)
            _, state = simulate_week(state, params)
        betas.append(params.beta)
        gammas.append(params.gamma)

        out.append(
            Forecast(
                region=fitted.region,
                origin_week=fitted.origin_week,
                horizon=h,
                point=point,
                weight_trend=w,
                weight_slow=1.0 - w,
                tfvsir=tf_cases,
                slow=slow,
                ct=ct,
                cp_forecasts=cps,
            )
        )
        points.append(point)
        prev = point
    return out


def forecast_points(forecasts: Sequence[Forecast]) -> list[float]:
    return [f.point for f in forecasts]
