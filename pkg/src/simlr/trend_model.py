"""AR(3) evolution of the weekly rates and the trend-following forecaster.

Each of beta and gamma follows its own linear-Gaussian autoregression on its
three previous weekly values::

    beta[t+1] ~ N(a0 + a1 * beta[t] + a2 * beta[t-1] + a3 * beta[t-2], var_beta)

Fitting is ordinary least squares, which is the maximum-likelihood estimate
for this model. Forecasting uses the conditional means only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from simlr.param_fit import DAYS_PER_WEEK, WeeklyParams
from simlr.sir_core import RateParams, SirState, new_infections, step

logger = logging.getLogger(__name__)

N_LAGS = 3
MIN_WEEKS = 5
PERSISTENCE = (0.0, 1.0, 0.0, 0.0)

# singular values below this fraction of the largest count as rank loss
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class TrendModel:
    """AR(3) coefficients for beta (``alpha``) and gamma (``omega``).

    ``beta_order``/``gamma_order`` record how many lags were actually
    estimated; 0 means the persistence fallback was used.
    """

    alpha: tuple[float, float, float, float]
    omega: tuple[float, float, float, float]
    sigma_beta2: float = 0.0
    sigma_gamma2: float = 0.0
    beta_order: int = N_LAGS
    gamma_order: int = N_LAGS

    def __post_init__(self) -> None:
        if len(self.alpha) != 4 or len(self.omega) != 4:
            raise ValueError("alpha and omega need four coefficients each")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.omega))):
            raise ValueError("trend coefficients must be finite")
        if self.sigma_beta2 < 0 or self.sigma_gamma2 < 0:
            raise ValueError("residual variances must be non-negative")

    @classmethod
    def persistence(cls) -> "TrendModel":
        return cls(PERSISTENCE, PERSISTENCE, 0.0, 0.0, beta_order=0, gamma_order=0)

    @property
    def fallback(self) -> bool:
        return self.beta_order == 0 or self.gamma_order == 0

    def to_dict(self) -> dict:
        return {
            "alpha": list(self.alpha),
            "omega": list(self.omega),
            "sigma_beta2": self.sigma_beta2,
            "sigma_gamma2": self.sigma_gamma2,
            "beta_order": self.beta_order,
            "gamma_order": self.gamma_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrendModel":
        return cls(
            alpha=tuple(float(x) for x in d["alpha"]),
            omega=tuple(float(x) for x in d["omega"]),
            sigma_beta2=float(d["sigma_beta2"]),
            sigma_gamma2=float(d["sigma_gamma2"]),
            beta_order=int(d.get("beta_order", N_LAGS)),
            gamma_order=int(d.get("gamma_order", N_LAGS)),
        )


def lag_design(series: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``[1, x[t], x[t-1], x[t-2]]`` with targets ``x[t+1]``."""
    x = np.asarray(series, dtype=float)
    rows = [
        (1.0, x[t], x[t - 1], x[t - 2]) for t in range(N_LAGS - 1, len(x) - 1)
    ]
    return np.asarray(rows, dtype=float).reshape(-1, N_LAGS + 1), x[N_LAGS:]


def _fit_one(series: Sequence[float]) -> tuple[tuple[float, ...], float, int]:
    X, y = lag_design(series)
    if len(y) == 0:
        return PERSISTENCE, 0.0, 0
    # drop trailing lags until the design has full column rank
    for order in range(N_LAGS, 0, -1):
        Xo = X[:, : order + 1]
        sv = np.linalg.svd(Xo, compute_uv=False)
        if len(y) > order and sv[-1] > _RANK_RTOL * sv[0]:
            coef, *_ = np.linalg.lstsq(Xo, y, rcond=None)
            full = np.zeros(N_LAGS + 1)
            full[: order + 1] = coef
            resid = y - Xo @ coef
            return tuple(float(c) for c in full), float(np.mean(resid**2)), order
    resid = y - X[:, 1]
    return PERSISTENCE, float(np.mean(resid**2)), 0


def fit_trend(weekly: Sequence[WeeklyParams]) -> TrendModel:
    """Least-squares AR(3) fit of the weekly beta and gamma histories.

    With fewer than five weeks both rates fall back to persistence. When the
    lag design is rank deficient (a constant or exactly geometric history)
    the highest lags are dropped one at a time; if even the one-lag model is
    degenerate the rate falls back to persistence. The ``*_order`` fields
    report which case applied.
    """
    if len(weekly) < MIN_WEEKS:
        logger.info("only %d fitted weeks; using the persistence trend", len(weekly))
        return TrendModel.persistence()
    alpha, var_b, order_b = _fit_one([w.beta for w in weekly])
    omega, var_g, order_g = _fit_one([w.gamma for w in weekly])
    if order_b < N_LAGS or order_g < N_LAGS:
        logger.info("reduced trend order: beta=%d gamma=%d", order_b, order_g)
    return TrendModel(alpha, omega, var_b, var_g, order_b, order_g)


def predict_params(
    model: TrendModel, last3_beta: Sequence[float], last3_gamma: Sequence[float]
) -> RateParams:
    """Conditional-mean rates for next week.

    Lags are ordered most recent first. Negative means are clamped to 0.
    """
    b = np.asarray(last3_beta, dtype=float)
    g = np.asarray(last3_gamma, dtype=float)
    if b.shape != (N_LAGS,) or g.shape != (N_LAGS,):
        raise ValueError("need exactly three lags for each rate")
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(g))):
        raise ValueError("lags must be finite")
    a, w = model.alpha, model.omega
    beta = a[0] + a[1] * b[0] + a[2] * b[1] + a[3] * b[2]
    gamma = w[0] + w[1] * g[0] + w[2] * g[1] + w[3] * g[2]
    return RateParams(max(float(beta), 0.0), max(float(gamma), 0.0))


def theta_to_alpha(theta: Sequence[float]) -> tuple[float, float, float, float]:
    """Map (level, velocity, acceleration) weights to AR(3) coefficients.

    ``x[t] = t0 + t1*x[t-1] + t2*v[t-1] + t3*acc[t-1]`` with
    ``v[t] = x[t] - x[t-1]`` and ``acc[t] = v[t] - v[t-1]``.
    """
    t0, t1, t2, t3 = (float(x) for x in theta)
    return (t0, t1 + t2 + t3, -t2 - 2.0 * t3, t3)


class WeekProjection(NamedTuple):
    cases: float
    state: SirState
    params: RateParams


def simulate_week(state: SirState, params: RateParams) -> tuple[float, SirState]:
    """Run seven daily steps at fixed rates; return (new infections, end state)."""
    end = state
    for _ in range(DAYS_PER_WEEK):
        end = step(end, params)
    return new_infections(state, end), end


def project_weeks(
    state: SirState,
    beta_lags: Sequence[float],
    gamma_lags: Sequence[float],
    model: TrendModel,
    horizon: int,
) -> list[WeekProjection]:
    """Chain ``horizon`` weeks of trend-predicted rates from ``state``.

    ``beta_lags``/``gamma_lags`` are chronological (oldest first) and must
    hold at least three values; each predicted pair is appended before the
    next week is predicted.
    """
    betas = list(beta_lags)
    gammas = list(gamma_lags)
    if len(betas) < N_LAGS or len(gammas) < N_LAGS:
        raise ValueError("need at least three weeks of fitted rates")
    out = []
    for _ in range(horizon):
        params = predict_params(model, betas[:-4:-1], gammas[:-4:-1])
        cases, state = simulate_week(state, params)
        out.append(WeekProjection(cases, state, params))
        betas.append(params.beta)
        gammas.append(params.gamma)
    return out


def tfvsir_forecast(
    state: SirState,
    weekly_history: Sequence[WeeklyParams],
    model: TrendModel,
    horizon: int,
) -> list[float]:
    """Weekly new infections for the next ``horizon`` weeks (1 to 4).

    ``state`` is the last observed state, at the end of the final fitted
    week. Rates are per-day, so each forecast week is seven daily steps.
    """
    if not 1 <= horizon <= 4:
        raise ValueError(f"horizon must be in 1..4, got {horizon}")
    if len(weekly_history) < N_LAGS:
        raise ValueError("tf-v-SIR needs at least three fitted weeks")
    proj = project_weeks(
        state,
        [w.beta for w in weekly_history],
        [w.gamma for w in weekly_history],
        model,
        horizon,
    )
    return [p.cases for p in proj]
