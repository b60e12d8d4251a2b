"""Case/death and policy ingestion, cleaning, and SIR series construction.

Case files use the JHU CSSE wide layout (one row per region, one column per
date, cumulative counts). Policy files use the OxCGRT long layout (one row
per region and date) restricted to three closure indicators: workplace
closing (C2), cancellation of public events (C3) and stay-at-home
requirements (C6).

Cleaning runs, in order:

1. first differences of the cumulative counts;
2. negative daily counts become missing;
3. a run of ``k`` missing days followed by a reported day shares that day's
   count evenly over all ``k + 1`` days;
4. each daily infection count is capped at ``mean + 4 * std`` of the ten
   previous (already cleaned) days.

Weeks run Sunday to Saturday.
"""

from __future__ import annotations

import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np
import pandas as pd

from simlr.sir_core import SirState

logger = logging.getLogger(__name__)

CsvSource = Union[str, Path, IO[str], pd.DataFrame]

OUTLIER_WINDOW = 10
OUTLIER_SIGMAS = 4.0
RECOVERY_DAYS = 15
POLICY_INDICATORS = ("C2", "C3", "C6")
DEFAULT_PRIOR_WEEKS = 52

_DATE_HEADER = re.compile(r"^\d{1,2}/\d{1,2}/\d{2}(\d{2})?$")


class DataError(ValueError):
    """Input data cannot be used."""


class SchemaError(DataError):
    pass


class UnknownRegionError(DataError):
    pass


class NonMonotonicDatesError(DataError):
    pass


class TooShortError(DataError):
    pass


def week_start(d: date) -> date:
    """The Sunday that starts the week containing ``d``."""
    return d - timedelta(days=(d.weekday() + 1) % 7)


def _split_region(region: str) -> tuple[str, str | None]:
    country, _, province = region.partition("/")
    if not country:
        raise UnknownRegionError(f"empty region id {region!r}")
    return country, (province or None)


def _read(source: CsvSource) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source
    try:
        return pd.read_csv(source)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SchemaError(f"cannot parse CSV: {exc}") from exc


def _pick(columns: Sequence[str], *names: str) -> str | None:
    for name in names:
        if name in columns:
            return name
    return None


# ---------------------------------------------------------------------------
# cases and deaths


@dataclass(frozen=True)
class RawSeries:
    """Contiguous daily cumulative counts; NaN marks days absent from the file."""

    region: str
    dates: tuple[date, ...]
    cumulative_cases: np.ndarray
    cumulative_deaths: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.dates)
        if len(self.cumulative_cases) != n or len(self.cumulative_deaths) != n:
            raise DataError("dates and cumulative series differ in length")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise NonMonotonicDatesError(f"dates are not contiguous at {a} -> {b}")

    def truncate(self, end: date) -> "RawSeries":
        """Keep days strictly before ``end``."""
        keep = sum(1 for d in self.dates if d < end)
        return RawSeries(
            self.region,
            self.dates[:keep],
            self.cumulative_cases[:keep].copy(),
            self.cumulative_deaths[:keep].copy(),
        )


def read_jhu_series(source: CsvSource, region: str) -> tuple[list[date], np.ndarray]:
    """Cumulative daily counts for ``region`` ("Country" or "Country/Province").

    Rows matching the country (and province, if given) are summed, so a
    country-level request aggregates its sub-regions. Dates absent from the
    header are inserted as NaN.
    """
    df = _read(source)
    cols = [str(c) for c in df.columns]
    country_col = _pick(cols, "Country/Region", "Country_Region")
    province_col = _pick(cols, "Province/State", "Province_State")
    if country_col is None:
        raise SchemaError(f"no Country/Region column among {cols[:8]}")
    date_cols = [c for c in cols if _DATE_HEADER.match(c)]
    if not date_cols:
        raise SchemaError("no m/d/yy date columns in header")
    parsed = [pd.to_datetime(c, format="%m/%d/%y" if len(c.split("/")[-1]) == 2 else "%m/%d/%Y").date() for c in date_cols]
    for a, b in zip(parsed, parsed[1:]):
        if b <= a:
            raise NonMonotonicDatesError(f"date columns not strictly increasing at {a} -> {b}")

    country, province = _split_region(region)
    mask = df[country_col].astype(str) == country
    if province is not None:
        if province_col is None:
            raise SchemaError("province requested but file has no Province/State column")
        mask &= df[province_col].astype(str) == province
    if not mask.any():
        raise UnknownRegionError(f"region {region!r} not found")
    block = df.loc[mask, date_cols].apply(pd.to_numeric, errors="coerce")
    values = block.sum(axis=0, min_count=1).to_numpy(dtype=float)

    full = [parsed[0] + timedelta(days=k) for k in range((parsed[-1] - parsed[0]).days + 1)]
    out = np.full(len(full), np.nan)
    index = {d: k for k, d in enumerate(full)}
    for d, v in zip(parsed, values):
        out[index[d]] = v
    return full, out


def read_jhu_population(source: CsvSource, region: str) -> float | None:
    """Population from a US-style deaths file, if it carries one."""
    df = _read(source)
    col = _pick([str(c) for c in df.columns], "Population")
    if col is None:
        return None
    country_col = _pick(list(df.columns), "Country/Region", "Country_Region")
    province_col = _pick(list(df.columns), "Province/State", "Province_State")
    country, province = _split_region(region)
    mask = df[country_col].astype(str) == country
    if province is not None and province_col is not None:
        mask &= df[province_col].astype(str) == province
    total = pd.to_numeric(df.loc[mask, col], errors="coerce").sum()
    return float(total) if total > 0 else None


def ingest_cases(cases_source: CsvSource, deaths_source: CsvSource, region: str) -> RawSeries:
    case_dates, cases = read_jhu_series(cases_source, region)
    death_dates, deaths = read_jhu_series(deaths_source, region)
    start = max(case_dates[0], death_dates[0])
    end = min(case_dates[-1], death_dates[-1])
    if end < start:
        raise DataError("case and death files do not overlap in time")
    c0 = (start - case_dates[0]).days
    d0 = (start - death_dates[0]).days
    n = (end - start).days + 1
    dates = tuple(start + timedelta(days=k) for k in range(n))
    return RawSeries(region, dates, cases[c0 : c0 + n], deaths[d0 : d0 + n])


# ---------------------------------------------------------------------------
# cleaning


def first_difference(cumulative: np.ndarray) -> np.ndarray:
    """Daily counts from cumulative ones; length shrinks by one.

    A day whose cumulative value is missing is missing; otherwise it is
    differenced against the last reported day, so counts from absent days
    land on the next reported one.
    """
    cum = np.asarray(cumulative, dtype=float)
    out = np.full(max(len(cum) - 1, 0), np.nan)
    last = cum[0] if len(cum) else np.nan
    for d in range(1, len(cum)):
        if math.isnan(cum[d]):
            continue
        if not math.isnan(last):
            out[d - 1] = cum[d] - last
        last = cum[d]
    return out


def negatives_to_missing(daily: np.ndarray) -> np.ndarray:
    out = np.asarray(daily, dtype=float).copy()
    out[out < 0] = np.nan
    return out


def fill_missing(daily: np.ndarray) -> tuple[np.ndarray, int]:
    """Spread each reported day over the missing run before it.

    Missing days at the end of the series have no later report to borrow
    from and are set to 0. Returns the filled series and how many days were
    filled.
    """
    out = np.asarray(daily, dtype=float).copy()
    filled = 0
    run_start = None
    for d in range(len(out)):
        if math.isnan(out[d]):
            if run_start is None:
                run_start = d
            continue
        if run_start is not None:
            share = out[d] / (d - run_start + 1)
            out[run_start : d + 1] = share
            filled += d - run_start
            run_start = None
    if run_start is not None:
        filled += len(out) - run_start
        out[run_start:] = 0.0
    return out, filled


def clamp_outliers(
    daily: np.ndarray, window: int = OUTLIER_WINDOW, sigmas: float = OUTLIER_SIGMAS
) -> tuple[np.ndarray, int]:
    """Cap day ``d`` at mean + ``sigmas`` * std of the previous ``window`` days.

    Days are processed in order and the window sees already-capped values.
    The first ``window`` days are left alone.
    """
    out = np.asarray(daily, dtype=float).copy()
    clamped = 0
    for d in range(window, len(out)):
        prev = out[d - window : d]
        cap = prev.mean() + sigmas * prev.std()
        if out[d] > cap:
            out[d] = cap
            clamped += 1
    return out, clamped


@dataclass(frozen=True)
class DailySeries:
    """Cleaned daily new infections and deaths; ``dates[k]`` labels day ``k``."""

    region: str
    dates: tuple[date, ...]
    infections: np.ndarray
    deaths: np.ndarray
    n_filled: int = 0
    n_clamped: int = 0


def preprocess(raw: RawSeries) -> DailySeries:
    n_days = len(raw.dates) - 1
    if n_days < OUTLIER_WINDOW + 1:
        raise TooShortError(
            f"{raw.region}: {n_days} daily values; need at least {OUTLIER_WINDOW + 1}"
        )
    inf, filled_i = fill_missing(negatives_to_missing(first_difference(raw.cumulative_cases)))
    dea, filled_d = fill_missing(negatives_to_missing(first_difference(raw.cumulative_deaths)))
    inf, clamped = clamp_outliers(inf)
    return DailySeries(
        raw.region,
        raw.dates[1:],
        inf,
        dea,
        n_filled=filled_i + filled_d,
        n_clamped=clamped,
    )


# ---------------------------------------------------------------------------
# compartments


def build_sir_series(
    daily_infections: Sequence[float],
    daily_deaths: Sequence[float],
    population: float,
    recovery_days: int = RECOVERY_DAYS,
) -> list[SirState]:
    """Daily SIR states from new infections and deaths.

    Starts from everyone susceptible and returns ``len(daily_infections) + 1``
    states (the initial one first). Each day new infections move S -> I as a
    cohort, deaths move I -> R taking from the oldest cohorts first, and any
    cohort still infected ``recovery_days`` after infection moves to R.
    """
    inf = np.asarray(daily_infections, dtype=float)
    dea = np.asarray(daily_deaths, dtype=float)
    if inf.shape != dea.shape:
        raise DataError(f"infection and death series differ in length: {inf.shape} vs {dea.shape}")
    if population <= 0:
        raise DataError("population must be positive")

    s, i, r = float(population), 0.0, 0.0
    cohorts: deque[list] = deque()  # [infection day, remaining]
    states = [SirState(s, i, r, population)]
    shortfall_days = 0
    for d, (x, y) in enumerate(zip(inf, dea)):
        x = min(float(x), s)
        s -= x
        i += x
        if x > 0:
            cohorts.append([d, x])

        y = float(y)
        if y > i:
            shortfall_days += 1
            y = i
        i -= y
        r += y
        while y > 0 and cohorts:
            take = min(y, cohorts[0][1])
            cohorts[0][1] -= take
            y -= take
            if cohorts[0][1] <= 0:
                cohorts.popleft()

        while cohorts and d - cohorts[0][0] >= recovery_days:
            _, remaining = cohorts.popleft()
            i -= remaining
            r += remaining
        if not cohorts:
            # keep I and the cohort ledger in lockstep once everyone is out
            r += i
            i = 0.0
        states.append(SirState(s, max(i, 0.0), r, population))
    if shortfall_days:
        logger.warning(
            "deaths exceeded the infected pool on %d day(s); clamped so I >= 0", shortfall_days
        )
    return states


# ---------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class PolicyTimeline:
    """Daily indicator levels and the derived weekly policy-change series.

    ``week_starts[k]`` is the Sunday of week ``k``; ``cp[k]`` is +1 if any
    indicator became stricter that week, -1 if any was relaxed and none
    tightened, else 0; ``weeks_since_change[k]`` is 0 in a week with a
    change and otherwise one more than the week before.
    """

    region: str
    dates: tuple[date, ...]
    levels: np.ndarray = field(repr=False)
    week_starts: tuple[date, ...] = ()
    cp: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    weeks_since_change: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self) -> None:
        if len(self.cp) != len(self.week_starts) or len(self.weeks_since_change) != len(self.week_starts):
            raise DataError("cp must be defined for every week")


def read_policy_levels(source: CsvSource, region: str) -> tuple[list[date], np.ndarray]:
    """Daily (C2, C3, C6) levels for ``region`` from an OxCGRT-layout file.

    Missing values are carried forward (then backward for a leading gap);
    an indicator that is never reported is 0.
    """
    df = _read(source)
    cols = [str(c) for c in df.columns]
    country_col = _pick(cols, "CountryName")
    region_col = _pick(cols, "RegionName")
    date_col = _pick(cols, "Date")
    if country_col is None or date_col is None:
        raise SchemaError("policy file needs CountryName and Date columns")
    ind_cols = []
    for code in POLICY_INDICATORS:
        match = [c for c in cols if re.match(rf"^{code}[A-Z]?_", c) and "flag" not in c.lower()]
        if not match:
            raise SchemaError(f"policy file has no {code}_* indicator column")
        ind_cols.append(match[0])

    country, province = _split_region(region)
    mask = df[country_col].astype(str) == country
    if region_col is not None:
        names = df[region_col]
        if province is None:
            mask &= names.isna() | (names.astype(str).str.strip() == "")
        else:
            mask &= names.astype(str) == province
    elif province is not None:
        raise SchemaError("province requested but policy file has no RegionName column")
    rows = df.loc[mask]
    if rows.empty:
        raise UnknownRegionError(f"region {region!r} not found in policy file")

    when = pd.to_datetime(rows[date_col].astype(str), format="%Y%m%d", errors="coerce")
    if when.isna().any():
        raise SchemaError("policy Date column must be YYYYMMDD")
    levels = rows[ind_cols].apply(pd.to_numeric, errors="coerce")
    levels.index = when.dt.date
    levels = levels[~levels.index.duplicated(keep="last")].sort_index()
    dates = [levels.index[0] + timedelta(days=k) for k in range((levels.index[-1] - levels.index[0]).days + 1)]
    levels = levels.reindex(dates).ffill().bfill().fillna(0.0)
    return dates, levels.to_numpy(dtype=float)


def derive_policy_changes(
    dates: Sequence[date],
    levels: np.ndarray,
    prior_weeks_since_change: int = DEFAULT_PRIOR_WEEKS,
) -> tuple[list[date], np.ndarray, np.ndarray]:
    """Weekly policy changes from daily indicator levels.

    A change on day ``d`` compares its levels to day ``d - 1``; the first
    day has no predecessor and counts as unchanged. Weeks before the
    timeline are assumed change-free for ``prior_weeks_since_change`` weeks.
    Returns ``(week_starts, cp, weeks_since_change)``.
    """
    levels = np.asarray(levels, dtype=float)
    if len(dates) != len(levels):
        raise DataError("need one level row per date")
    if np.isnan(levels).any():
        raise DataError("policy levels must be present for every date")
    if len(dates) == 0:
        return [], np.zeros(0, dtype=int), np.zeros(0, dtype=int)

    diffs = np.zeros_like(levels)
    diffs[1:] = levels[1:] - levels[:-1]
    weeks: list[date] = []
    cp: list[int] = []
    for d, delta in zip(dates, diffs):
        ws = week_start(d)
        if not weeks or weeks[-1] != ws:
            weeks.append(ws)
            cp.append(0)
        if np.any(delta > 0):
            cp[-1] = 1
        elif np.any(delta < 0) and cp[-1] == 0:
            cp[-1] = -1

    since = []
    w = prior_weeks_since_change
    for c in cp:
        w = 0 if c != 0 else w + 1
        since.append(w)
    return weeks, np.asarray(cp, dtype=int), np.asarray(since, dtype=int)


def build_policy_timeline(
    region: str,
    dates: Sequence[date],
    levels: np.ndarray,
    prior_weeks_since_change: int = DEFAULT_PRIOR_WEEKS,
) -> PolicyTimeline:
    weeks, cp, since = derive_policy_changes(dates, levels, prior_weeks_since_change)
    return PolicyTimeline(region, tuple(dates), np.asarray(levels, dtype=float), tuple(weeks), cp, since)


def ingest_policy(source: CsvSource, region: str) -> PolicyTimeline:
    dates, levels = read_policy_levels(source, region)
    return build_policy_timeline(region, dates, levels)


# ---------------------------------------------------------------------------
# per-origin views


@dataclass(frozen=True)
class RegionData:
    """Everything known about a region, before any cleaning."""

    region: str
    population: float
    raw: RawSeries
    policy_dates: tuple[date, ...]
    policy_levels: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class RegionHistory:
    """Cleaned data strictly before ``origin`` (a Sunday).

    ``daily_states[-1]`` is the state at the end of ``origin - 1 day``.
    ``weekly_cp`` and ``weeks_since_change`` cover the whole weeks ending on
    that day, most recent last.
    """

    region: str
    origin: date
    population: float
    daily: DailySeries
    daily_states: list[SirState] = field(repr=False)
    weekly_cp: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    weeks_since_change: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_weeks(self) -> int:
        return (len(self.daily_states) - 1) // 7

    def weekly_states(self) -> list[SirState]:
        """States at week boundaries, aligned to the end of the series."""
        return self.daily_states[len(self.daily_states) - 1 - 7 * self.n_weeks :: 7]


def _levels_through(
    dates: Sequence[date], levels: np.ndarray, first: date, last: date
) -> tuple[list[date], np.ndarray]:
    # extend the policy record to cover [first, last] without inventing changes
    lo = min(first, dates[0]) if dates else first
    span = [lo + timedelta(days=k) for k in range((last - lo).days + 1)]
    if not dates:
        return span, np.zeros((len(span), len(POLICY_INDICATORS)))
    index = {d: k for k, d in enumerate(dates)}
    out = np.empty((len(span), levels.shape[1]))
    current = levels[0]
    for k, d in enumerate(span):
        if d in index:
            current = levels[index[d]]
        out[k] = current
    return span, out


def prepare_history(data: RegionData, origin: date) -> RegionHistory:
    """Clean and assemble everything reported strictly before ``origin``.

    Truncation happens on the raw cumulative counts, before cleaning, so
    nothing at or after the origin can influence the result.
    """
    if origin.weekday() != 6:
        raise DataError(f"origin {origin} is not a Sunday")
    raw = data.raw.truncate(origin)
    if not raw.dates or raw.dates[-1] != origin - timedelta(days=1):
        raise DataError(f"data for {data.region} do not reach the day before origin {origin}")
    daily = preprocess(raw)
    states = build_sir_series(daily.infections, daily.deaths, data.population)

    last = origin - timedelta(days=1)
    pol_dates = [d for d in data.policy_dates if d <= last]
    pol_levels = data.policy_levels[: len(pol_dates)]
    span, levels = _levels_through(pol_dates, pol_levels, daily.dates[0], last)
    weeks, cp, since = derive_policy_changes(span, levels)
    n_weeks = (len(states) - 1) // 7
    return RegionHistory(
        region=data.region,
        origin=origin,
        population=data.population,
        daily=daily,
        daily_states=states,
        weekly_cp=cp[-n_weeks:] if n_weeks else cp[:0],
        weeks_since_change=since[-n_weeks:] if n_weeks else since[:0],
    )


def weekly_totals(daily: DailySeries, week_starts: Sequence[date]) -> np.ndarray:
    """Sum of cleaned daily infections over each Sunday-Saturday week (NaN if incomplete)."""
    index = {d: k for k, d in enumerate(daily.dates)}
    out = np.full(len(week_starts), np.nan)
    for j, ws in enumerate(week_starts):
        if ws in index and index[ws] + 7 <= len(daily.infections):
            k = index[ws]
            out[j] = float(np.sum(daily.infections[k : k + 7]))
    return out
