import json
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simlr.data_pipeline import RawSeries, RegionData
from simlr.eval import (
    UndefinedMapeError,
    default_builders,
    default_origins,
    long_csv,
    mape,
    n_excluded,
    rolling_evaluate,
    slow_builder,
    summary_csv,
    to_json,
)
from simlr.pgm import PgmConfig, default_cpts, default_soft_labels
from simlr.pgm.nn_cpd import init_nn_cpd
from simlr.sir_core import RateParams, SirState, simulate

from oracles import weekly_to_daily

START = date(2020, 3, 1)  # a Sunday
PGM = PgmConfig(default_cpts(), init_nn_cpd(default_soft_labels(), seed=0))


def region_from_daily(daily, population=1e6, levels=None, deaths=None):
    # one leading day so the first diff lands on START
    cum = np.concatenate([[0.0], np.cumsum(np.asarray(daily, dtype=float))])
    dcum = np.zeros_like(cum) if deaths is None else np.concatenate([[0.0], np.cumsum(deaths)])
    dates = tuple(START - timedelta(days=1) + timedelta(days=k) for k in range(len(cum)))
    if levels is None:
        levels = np.zeros((len(dates), 3))
    return RegionData("Synth", population, RawSeries("Synth", dates, cum, dcum), dates, levels)


def epidemic_region(weeks=30, seed=0):
    rng = np.random.default_rng(seed)
    n = 5e6
    days = 7 * weeks
    betas = 0.22 + 0.08 * np.sin(np.arange(days) / 25.0)
    states = simulate(SirState.initial(n, 500.0), [RateParams(b, 0.12) for b in betas])
    s = np.array([SirState.initial(n, 500.0).s] + [st.s for st in states])
    daily = np.round(-np.diff(s) * rng.uniform(0.9, 1.1, size=days))
    levels = np.zeros((days + 1, 3))
    levels[60:, 0] = 1
    levels[120:, 1] = 2
    levels[150:, 0] = 0
    return region_from_daily(daily, population=n, levels=levels, deaths=np.round(daily * 0.01))


class TestMape:
    def test_exact(self):
        assert mape([5, 7], [5, 7]) == 0.0

    def test_hand(self):
        assert mape([100, 200], [110, 180]) == pytest.approx(10.0, abs=1e-12)

    def test_zero_prediction(self):
        assert mape([100], [0]) == 100.0

    def test_zero_actual_excluded(self):
        assert mape([0, 100], [5, 90]) == pytest.approx(10.0)
        assert n_excluded([0, 100, 0]) == 2

    def test_all_zero(self):
        with pytest.raises(UndefinedMapeError):
            mape([0, 0], [1, 2])

    def test_lengths(self):
        with pytest.raises(ValueError):
            mape([1], [1, 2])

    @given(st.lists(st.tuples(st.floats(1, 1e6), st.floats(0, 1e6)), min_size=1, max_size=30))
    def test_non_negative(self, pairs):
        a, p = zip(*pairs)
        assert mape(a, p) >= 0


class TestSlowEvaluation:
    def test_constant_series(self):
        data = region_from_daily(weekly_to_daily([700] * 12))
        origins = [START + timedelta(weeks=k) for k in range(2, 8)]
        ev = rolling_evaluate(data, {"slow": slow_builder()}, origins)
        for h in range(1, 5):
            rep = ev.report("slow", h)
            assert rep.mape == 0.0 and rep.n_origins == 6

    def test_alternating_series(self):
        data = region_from_daily(weekly_to_daily([100, 200] * 8))
        origins = [START + timedelta(weeks=k) for k in range(2, 14)]
        ev = rolling_evaluate(data, {"slow": slow_builder()}, origins, horizon=1)
        # |200-100|/200 = 50% and |100-200|/100 = 100%, equally often
        assert ev.report("slow", 1).mape == pytest.approx(75.0, abs=1e-12)

    def test_targets_beyond_data_are_skipped(self):
        data = region_from_daily(weekly_to_daily([700] * 6))
        origin = START + timedelta(weeks=4)
        ev = rolling_evaluate(data, {"slow": slow_builder()}, [origin])
        assert [r.horizon for r in ev.records] == [1, 2]
        assert sorted(s.horizon for s in ev.skips) == [3, 4]

    def test_origin_without_data_skipped(self):
        data = region_from_daily(weekly_to_daily([700] * 6))
        ev = rolling_evaluate(data, {"slow": slow_builder()}, [START + timedelta(weeks=20)])
        assert not ev.records and len(ev.skips) == 1


@pytest.fixture(scope="module")
def epidemic():
    return epidemic_region()


@pytest.fixture(scope="module")
def evaluation(epidemic):
    origins = [START + timedelta(weeks=k) for k in range(8, 26)]
    return rolling_evaluate(epidemic, default_builders(PGM), origins)


class TestRollingEvaluate:
    def test_row_count(self, evaluation):
        n_origins, n_h, n_models = 18, 4, 3
        skipped = sum(4 if s.horizon is None else 1 for s in evaluation.skips)
        assert len(evaluation.records) == n_origins * n_h * n_models - skipped

    def test_all_models_scored(self, evaluation):
        reps = evaluation.reports()
        assert {r.model for r in reps} == {"simlr", "tfvsir", "slow"}
        assert all(r.mape is not None and r.mape >= 0 for r in reps)
        assert all(r.n_origins == len(r.origins) for r in reps)

    def test_identical_folds(self, epidemic):
        seen = {}

        def spy(name):
            def build(history, horizon):
                seen.setdefault(history.origin, []).append(
                    (name, [s for s in history.daily_states], history.weekly_cp.tobytes())
                )
                return [1.0] * horizon

            return build

        origin = START + timedelta(weeks=12)
        rolling_evaluate(epidemic, {"a": spy("a"), "b": spy("b")}, [origin])
        (_, sa, ca), (_, sb, cb) = seen[origin]
        assert sa == sb and ca == cb

    def test_deterministic(self, epidemic, evaluation):
        origins = [START + timedelta(weeks=k) for k in range(8, 26)]
        again = rolling_evaluate(epidemic, default_builders(PGM), origins)
        assert to_json(again) == to_json(evaluation)

    def test_outputs_agree(self, evaluation):
        doc = json.loads(to_json(evaluation, {"seed": 1}))
        lines = [l for l in summary_csv(evaluation).splitlines()]
        assert len(lines) - 1 == len(doc["summary"])
        for line, row in zip(lines[1:], doc["summary"]):
            fields = line.split(",")
            assert fields[0] == row["region"] and fields[1] == row["model"]
            assert int(fields[2]) == row["horizon"]
            assert float(fields[3]) == row["mape"]
        long_lines = long_csv(evaluation).splitlines()
        assert len(long_lines) - 1 == len(doc["records"]) == len(evaluation.records)

    def test_header_comment(self, evaluation):
        text = summary_csv(evaluation, header_comment="seed: 3\nversion: x")
        assert text.startswith("# seed: 3\n# version: x\n")


def test_default_origins():
    o = default_origins()
    assert len(o) == 39 and o[0] == date(2020, 7, 26) and o[-1] == date(2021, 4, 18)
    assert all(d.weekday() == 6 for d in o)


def _perturb(data, rng, origin):
    """Change one value of the raw data at or after ``origin``."""
    k0 = data.raw.dates.index(origin)
    k = int(rng.integers(k0, len(data.raw.dates)))
    cases = data.raw.cumulative_cases.copy()
    deaths = data.raw.cumulative_deaths.copy()
    levels = data.policy_levels.copy()
    kind = rng.integers(0, 4)
    if kind == 0:
        cases[k] += rng.uniform(1, 1e5)
    elif kind == 1:
        cases[k] = np.nan
    elif kind == 2:
        deaths[k] += rng.uniform(1, 1e3)
    else:
        levels[k:, rng.integers(0, 3)] += 1
    raw = RawSeries(data.region, data.raw.dates, cases, deaths)
    return RegionData(data.region, data.population, raw, data.policy_dates, levels)


def test_leakage_audit(epidemic):
    rng = np.random.default_rng(11)
    builders = default_builders(PGM)
    origins = [START + timedelta(weeks=k) for k in range(10, 26)]
    base = {}
    for origin in origins:
        ev = rolling_evaluate(epidemic, builders, [origin])
        base[origin] = [(r.model, r.horizon, r.predicted) for r in ev.records]
    for trial in range(50):
        origin = origins[trial % len(origins)]
        perturbed = _perturb(epidemic, rng, origin)
        ev = rolling_evaluate(perturbed, builders, [origin])
        assert [(r.model, r.horizon, r.predicted) for r in ev.records] == base[origin]
