import csv
import io
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simlr.data_pipeline import (
    DataError,
    NonMonotonicDatesError,
    RawSeries,
    RegionData,
    SchemaError,
    TooShortError,
    UnknownRegionError,
    build_sir_series,
    clamp_outliers,
    derive_policy_changes,
    fill_missing,
    first_difference,
    ingest_cases,
    ingest_policy,
    negatives_to_missing,
    prepare_history,
    preprocess,
    read_jhu_series,
    read_policy_levels,
    week_start,
)

FIX = Path(__file__).parent / "fixtures"
CASES = FIX / "cases_global.csv"
DEATHS = FIX / "deaths_global.csv"
POLICY = FIX / "policy.csv"
START = date(2020, 3, 1)


def steps_1_to_3(cum):
    out, _ = fill_missing(negatives_to_missing(first_difference(np.asarray(cum, dtype=float))))
    return out


def raw_from_daily(daily, start=START, deaths=None):
    cum = np.concatenate([[0.0], np.cumsum(daily)])
    dcum = np.zeros_like(cum) if deaths is None else np.concatenate([[0.0], np.cumsum(deaths)])
    dates = tuple(start + timedelta(days=k) for k in range(len(cum)))
    return RawSeries("X", dates, cum, dcum)


class TestIngestCases:
    def test_fixture_echo(self):
        raw = ingest_cases(CASES, DEATHS, "Canada/Alberta")
        assert raw.dates[0] == START and len(raw.dates) == 14
        assert raw.cumulative_cases.tolist() == [0, 2, 5, 9, 14, 20, 27, 35, 44, 54, 65, 77, 90, 104]
        assert raw.cumulative_deaths[-1] == 4

    def test_country_sums_subregions(self):
        with open(CASES, newline="") as fh:
            rows = [r for r in csv.reader(fh)]
        header, body = rows[0], rows[1:]
        expected = [
            sum(int(r[j]) for r in body if r[1] == "Canada") for j in range(4, len(header))
        ]
        raw = ingest_cases(CASES, DEATHS, "Canada")
        assert raw.cumulative_cases.tolist() == expected

    def test_country_without_provinces(self):
        raw = ingest_cases(CASES, DEATHS, "Italy")
        assert raw.cumulative_cases[:3].tolist() == [10, 20, 30]

    @pytest.mark.parametrize("region", ["Narnia", "Canada/Yukon"])
    def test_unknown_region(self, region):
        with pytest.raises(UnknownRegionError):
            ingest_cases(CASES, DEATHS, region)

    def test_non_monotonic_dates(self):
        df = pd.DataFrame({"Province/State": [""], "Country/Region": ["X"], "1/2/20": [1], "1/1/20": [0]})
        with pytest.raises(NonMonotonicDatesError):
            read_jhu_series(df, "X")

    def test_schema_mismatch(self):
        with pytest.raises(SchemaError):
            read_jhu_series(io.StringIO("Region,1/1/20\nX,1\n"), "X")
        with pytest.raises(SchemaError):
            read_jhu_series(io.StringIO("Country/Region,total\nX,1\n"), "X")

    def test_errors_are_distinct(self):
        kinds = {UnknownRegionError, NonMonotonicDatesError, SchemaError}
        assert len(kinds) == 3 and all(issubclass(k, DataError) for k in kinds)

    def test_missing_date_column_becomes_gap(self):
        df = pd.DataFrame({"Country/Region": ["X"], "1/1/20": [1], "1/2/20": [2], "1/4/20": [5]})
        dates, values = read_jhu_series(df, "X")
        assert len(dates) == 4
        assert np.isnan(values[2]) and values[3] == 5

    def test_us_layout_and_four_digit_years(self):
        df = pd.DataFrame(
            {
                "Admin2": ["A", "B"],
                "Province_State": ["Utah", "Utah"],
                "Country_Region": ["US", "US"],
                "1/1/2020": [1, 2],
                "1/2/2020": [3, 4],
            }
        )
        _, values = read_jhu_series(df, "US/Utah")
        assert values.tolist() == [3, 7]

    def test_gappy_raw_series_rejected(self):
        with pytest.raises(NonMonotonicDatesError):
            RawSeries("X", (START, START + timedelta(days=2)), np.zeros(2), np.zeros(2))


class TestPreprocessOracles:
    """Hand-computed outputs of the four cleaning steps."""

    def test_negative_diff(self):
        assert steps_1_to_3([100, 110, 105, 130]).tolist() == [10, 12.5, 12.5]

    def test_missing_run(self):
        assert steps_1_to_3([0, 10, np.nan, np.nan, 40]).tolist() == [10, 10, 10, 10]

    def test_negatives_then_missing_run(self):
        assert steps_1_to_3([0, 5, 3, 2, 11]).tolist() == [5, 3, 3, 3]

    def test_trailing_missing(self):
        out, filled = fill_missing(first_difference(np.array([0.0, 4.0, np.nan])))
        assert out.tolist() == [4, 0] and filled == 1

    def test_leading_missing(self):
        assert steps_1_to_3([np.nan, 5, 8]).tolist() == [1.5, 1.5]

    def test_first_difference_bridges_gap(self):
        d = first_difference(np.array([1.0, np.nan, 7.0, 9.0]))
        assert np.isnan(d[0]) and d[1:].tolist() == [6, 2]

    def test_constant_sigma_zero(self):
        out, n = clamp_outliers(np.full(30, 50.0))
        assert out.tolist() == [50.0] * 30 and n == 0

    def test_sigma_zero_spike(self):
        out, n = clamp_outliers(np.array([10.0] * 10 + [500.0]))
        assert out[-1] == 10.0 and n == 1

    def test_mu_plus_four_sigma(self):
        prev = [10.0, 12.0] * 5  # mean 11, population std 1
        out, n = clamp_outliers(np.array(prev + [20.0]))
        assert out[-1] == 15.0 and n == 1

    def test_equality_boundary_kept(self):
        out, n = clamp_outliers(np.array([10.0, 12.0] * 5 + [15.0]))
        assert out[-1] == 15.0 and n == 0

    def test_sequential_uses_clamped_values(self):
        out, n = clamp_outliers(np.array([10.0] * 10 + [500.0, 500.0]))
        assert out[-2:].tolist() == [10.0, 10.0] and n == 2

    def test_first_window_untouched(self):
        x = np.array([1.0, 1.0, 1.0, 100.0] + [1.0] * 8)
        out, n = clamp_outliers(x)
        assert out[3] == 100.0 and n == 0

    def test_full_preprocess(self):
        daily = np.array([10.0] * 12 + [500.0])
        cum = np.concatenate([[0.0], np.cumsum(daily)])
        cum[3] = cum[2] - 1  # a downward revision
        dates = tuple(START + timedelta(days=k) for k in range(len(cum)))
        out = preprocess(RawSeries("X", dates, cum, np.zeros_like(cum)))
        # day 2 went negative and takes half of day 3's 21
        assert out.infections[:4].tolist() == [10, 10, 10.5, 10.5]
        assert out.infections[-1] < 500 and out.n_clamped == 1 and out.n_filled == 1
        assert out.dates[0] == START + timedelta(days=1)

    def test_too_short(self):
        with pytest.raises(TooShortError):
            preprocess(raw_from_daily(np.ones(10)))
        preprocess(raw_from_daily(np.ones(11)))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 10_000), min_size=11, max_size=60))
    def test_idempotent(self, daily):
        once = preprocess(raw_from_daily(np.array(daily, dtype=float)))
        twice = preprocess(raw_from_daily(once.infections, deaths=once.deaths))
        np.testing.assert_allclose(twice.infections, once.infections, rtol=1e-9, atol=1e-9)
        np.testing.assert_array_equal(twice.deaths, once.deaths)


class TestCohorts:
    def test_recovery_after_fifteen_days(self):
        states = build_sir_series([10] + [0] * 20, [0] * 21, 100)
        assert states[15].i == 10 and states[16].i == 0 and states[16].r == 10

    def test_no_infections(self):
        states = build_sir_series([0] * 30, [0] * 30, 1000)
        assert all(s.s == 1000 and s.i == 0 and s.r == 0 for s in states)

    def test_deaths_deplete_oldest_first(self):
        deaths = [0] * 20
        deaths[3] = 2
        states = build_sir_series([10] + [0] * 19, deaths, 100)
        r = [s.r for s in states]
        assert r[4] - r[3] == 2 and r[16] - r[15] == 8
        assert sum(1 for a, b in zip(r, r[1:]) if b != a) == 2

    def test_two_cohorts(self):
        inf = [0] * 25
        inf[0], inf[5] = 6, 4
        deaths = [0] * 25
        deaths[7] = 7  # kills all of cohort 0 and one from cohort 5
        states = build_sir_series(inf, deaths, 50)
        assert states[8].i == 3 and states[8].r == 7
        assert states[16].i == 3  # cohort 0 gone already
        assert states[21].i == 0 and states[21].r == 10

    def test_deaths_exceeding_pool_clamped(self, caplog):
        states = build_sir_series([2, 0], [0, 5], 10)
        assert states[-1].i == 0 and states[-1].r == 2
        assert "clamped" in caplog.text

    def test_misaligned(self):
        with pytest.raises(DataError):
            build_sir_series([1, 2], [0], 10)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 500), st.integers(0, 30)), min_size=1, max_size=80),
        st.integers(0, 79),
        st.integers(1, 80),
    )
    def test_conservation_and_window_sums(self, rows, a, length):
        inf = [r[0] for r in rows]
        dea = [r[1] for r in rows]
        n = 1_000_000
        states = build_sir_series(inf, dea, n)
        assert all(s.s + s.i + s.r == n for s in states)
        a = min(a, len(inf))
        b = min(a + length, len(inf))
        assert sum(inf[a:b]) == states[a].s - states[b].s


class TestPolicy:
    def test_no_changes(self):
        dates = [START + timedelta(days=k) for k in range(28)]
        weeks, cp, since = derive_policy_changes(dates, np.ones((28, 3)), prior_weeks_since_change=7)
        assert cp.tolist() == [0, 0, 0, 0] and since.tolist() == [8, 9, 10, 11]
        assert weeks == [START + timedelta(weeks=k) for k in range(4)]

    def test_fixture_alberta(self):
        tl = ingest_policy(POLICY, "Canada/Alberta")
        assert tl.week_starts == (START, date(2020, 3, 8), date(2020, 3, 15))
        # workplace 1->2 midweek, then stay-home down with events up: stricter wins
        assert tl.cp.tolist() == [0, 1, 1]
        assert tl.weeks_since_change.tolist() == [53, 0, 0]

    def test_fixture_national(self):
        tl = ingest_policy(POLICY, "Canada")
        assert tl.cp.tolist() == [0, 1, 0] and tl.weeks_since_change.tolist() == [53, 0, 1]

    def test_relaxation_only(self):
        dates = [START + timedelta(days=k) for k in range(7)]
        levels = np.array([[2, 1, 1]] * 3 + [[1, 1, 1]] * 4, dtype=float)
        assert derive_policy_changes(dates, levels)[1].tolist() == [-1]

    def test_missing_values_forward_filled(self):
        _, levels = read_policy_levels(POLICY, "Canada/Alberta")
        assert levels[4, 0] == 1

    def test_partial_first_week(self):
        dates = [date(2020, 3, 4) + timedelta(days=k) for k in range(5)]
        weeks, cp, _ = derive_policy_changes(dates, np.zeros((5, 3)))
        assert weeks == [START, date(2020, 3, 8)]

    def test_gaps_rejected(self):
        with pytest.raises(DataError):
            derive_policy_changes([START], np.array([[np.nan, 1, 1]]))

    def test_unknown_and_schema(self):
        with pytest.raises(UnknownRegionError):
            ingest_policy(POLICY, "Canada/Yukon")
        with pytest.raises(SchemaError):
            ingest_policy(io.StringIO("CountryName,Date\nX,20200101\n"), "X")

    def test_week_start(self):
        assert week_start(date(2020, 7, 26)) == date(2020, 7, 26)
        assert week_start(date(2020, 8, 1)) == date(2020, 7, 26)


class TestHistory:
    def make_data(self, days=70):
        rng = np.random.default_rng(1)
        daily = rng.integers(50, 100, size=days).astype(float)
        raw = raw_from_daily(daily, deaths=np.ones(days))
        dates = list(raw.dates)
        levels = np.zeros((len(dates), 3))
        levels[30:, 0] = 1
        return RegionData("X", 1e6, raw, tuple(dates), levels)

    def test_alignment(self):
        data = self.make_data()
        origin = date(2020, 4, 26)
        h = prepare_history(data, origin)
        assert h.daily.dates[-1] == origin - timedelta(days=1)
        assert len(h.daily_states) == len(h.daily.dates) + 1
        assert len(h.weekly_cp) == h.n_weeks
        # level change on day 30 (2020-03-31) falls in the week starting 2020-03-29
        weeks_back = (origin - date(2020, 3, 29)).days // 7
        assert h.weekly_cp[-weeks_back] == 1 and h.weeks_since_change[-1] == weeks_back - 1

    def test_not_sunday(self):
        with pytest.raises(DataError, match="Sunday"):
            prepare_history(self.make_data(), date(2020, 4, 27))

    def test_beyond_data(self):
        with pytest.raises(DataError, match="do not reach"):
            prepare_history(self.make_data(days=30), date(2020, 4, 26))

    def test_ignores_future(self):
        data = self.make_data()
        origin = date(2020, 4, 19)
        base = prepare_history(data, origin)
        cum = data.raw.cumulative_cases.copy()
        k = data.raw.dates.index(origin)
        cum[k:] += 1e6
        changed = RegionData(
            "X", 1e6, RawSeries("X", data.raw.dates, cum, data.raw.cumulative_deaths),
            data.policy_dates, data.policy_levels,
        )
        other = prepare_history(changed, origin)
        np.testing.assert_array_equal(base.daily.infections, other.daily.infections)
