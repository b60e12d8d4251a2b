"""Rolling-origin evaluation with weekly refits and MAPE scoring.

For each origin (a Sunday) every model sees the same history: raw data
strictly before the origin, cleaned from scratch. Forecasts for the next
one to four weeks are scored against weekly totals of the cleaned full
series.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from simlr.data_pipeline import DataError, RegionData, RegionHistory, prepare_history, preprocess, weekly_totals
from simlr.forecaster import (
    MAX_HORIZON,
    ColdStartError,
    fit_history,
    fitted_tfvsir_forecast,
    mixture_forecast,
    slow_forecast,
)
from simlr.param_fit import FitConfig
from simlr.pgm.chain import PgmConfig

logger = logging.getLogger(__name__)

FIRST_ORIGIN = date(2020, 7, 26)
N_ORIGINS = 39
MODELS = ("simlr", "tfvsir", "slow")

ModelBuilder = Callable[[RegionHistory, int], Sequence[float]]


class UndefinedMapeError(ValueError):
    pass


def default_origins(first: date = FIRST_ORIGIN, count: int = N_ORIGINS) -> list[date]:
    return [first + timedelta(weeks=k) for k in range(count)]


def ape(actual: float, predicted: float) -> float | None:
    """Absolute percentage error, or None when the actual is zero."""
    if actual == 0:
        return None
    return 100.0 * abs(actual - predicted) / abs(actual)


def mape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute percentage error over the entries with non-zero actuals."""
    if len(actual) != len(predicted):
        raise ValueError("actual and predicted differ in length")
    errors = [e for e in (ape(a, p) for a, p in zip(actual, predicted)) if e is not None]
    if not errors:
        raise UndefinedMapeError("MAPE is undefined: every actual value is zero")
    return float(np.mean(errors))


def n_excluded(actual: Sequence[float]) -> int:
    return sum(1 for a in actual if a == 0)


# ---------------------------------------------------------------------------
# model builders


def slow_builder() -> ModelBuilder:
    def build(history: RegionHistory, horizon: int) -> list[float]:
        last = history.weekly_states()
        return slow_forecast(last[-2].s - last[-1].s, horizon)

    return build


def tfvsir_builder(config: FitConfig = FitConfig()) -> ModelBuilder:
    def build(history: RegionHistory, horizon: int) -> list[float]:
        return fitted_tfvsir_forecast(fit_history(history, config), horizon)

    return build


def simlr_builder(pgm: PgmConfig, config: FitConfig = FitConfig()) -> ModelBuilder:
    def build(history: RegionHistory, horizon: int) -> list[float]:
        return [f.point for f in mixture_forecast(fit_history(history, config), pgm, horizon)]

    return build


def default_builders(pgm: PgmConfig, config: FitConfig = FitConfig()) -> dict[str, ModelBuilder]:
    return {
        "simlr": simlr_builder(pgm, config),
        "tfvsir": tfvsir_builder(config),
        "slow": slow_builder(),
    }


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ForecastRecord:
    region: str
    model: str
    horizon: int
    origin: date
    predicted: float
    actual: float
    error: float | None  # APE in percent; None when actual is zero


@dataclass(frozen=True)
class Skip:
    region: str
    model: str
    origin: date
    horizon: int | None
    reason: str


@dataclass(frozen=True)
class EvalReport:
    region: str
    model: str
    horizon: int
    origins: tuple[date, ...]
    errors: tuple[float, ...]
    mape: float | None
    n_origins: int
    n_excluded: int

    def __post_init__(self) -> None:
        if self.mape is not None and self.mape < 0:
            raise ValueError("MAPE cannot be negative")


@dataclass
class Evaluation:
    records: list[ForecastRecord] = field(default_factory=list)
    skips: list[Skip] = field(default_factory=list)

    def reports(self) -> list[EvalReport]:
        keys = sorted({(r.region, r.model, r.horizon) for r in self.records}, key=_report_order)
        out = []
        for region, model, horizon in keys:
            rows = sorted(
                (r for r in self.records if (r.region, r.model, r.horizon) == (region, model, horizon)),
                key=lambda r: r.origin,
            )
            errors = [r.error for r in rows if r.error is not None]
            out.append(
                EvalReport(
                    region=region,
                    model=model,
                    horizon=horizon,
                    origins=tuple(r.origin for r in rows),
                    errors=tuple(errors),
                    mape=float(np.mean(errors)) if errors else None,
                    n_origins=len(rows),
                    n_excluded=len(rows) - len(errors),
                )
            )
        return out

    def report(self, model: str, horizon: int) -> EvalReport:
        for rep in self.reports():
            if rep.model == model and rep.horizon == horizon:
                return rep
        raise KeyError((model, horizon))


def _report_order(key: tuple[str, str, int]) -> tuple:
    region, model, horizon = key
    rank = MODELS.index(model) if model in MODELS else len(MODELS)
    return (region, rank, model, horizon)


def rolling_evaluate(
    data: RegionData,
    builders: Mapping[str, ModelBuilder],
    origins: Iterable[date],
    horizon: int = MAX_HORIZON,
) -> Evaluation:
    """Refit and forecast at every origin, scoring each horizon ``1..horizon``.

    An origin whose history cannot be prepared, or a model that cannot fit
    it, is skipped with the reason recorded. Target weeks beyond the data
    are skipped per horizon.
    """
    if not 1 <= horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must be in 1..{MAX_HORIZON}")
    full = preprocess(data.raw)
    result = Evaluation()
    for origin in origins:
        try:
            history = prepare_history(data, origin)
        except DataError as exc:
            logger.info("skipping origin %s: %s", origin, exc)
            result.skips.extend(Skip(data.region, m, origin, None, str(exc)) for m in builders)
            continue
        targets = [origin + timedelta(weeks=h) for h in range(horizon)]
        actual = weekly_totals(full, targets)
        for name, build in builders.items():
            try:
                predicted = list(build(history, horizon))
            except (ColdStartError, DataError, ValueError) as exc:
                logger.info("skipping %s at %s: %s", name, origin, exc)
                result.skips.append(Skip(data.region, name, origin, None, str(exc)))
                continue
            for h, (a, p) in enumerate(zip(actual, predicted), start=1):
                if math.isnan(a):
                    result.skips.append(Skip(data.region, name, origin, h, "target week beyond data"))
                    continue
                result.records.append(ForecastRecord(data.region, name, h, origin, p, a, ape(a, p)))
    return result


# ---------------------------------------------------------------------------
# serialization

SUMMARY_FIELDS = ("region", "model", "horizon", "mape", "n_origins", "n_excluded")
LONG_FIELDS = ("region", "model", "horizon", "origin", "predicted", "actual", "error")


def summary_rows(evaluation: Evaluation) -> list[dict]:
    return [{k: getattr(rep, k) for k in SUMMARY_FIELDS} for rep in evaluation.reports()]


def long_rows(evaluation: Evaluation) -> list[dict]:
    rows = sorted(
        evaluation.records, key=lambda r: (*_report_order((r.region, r.model, r.horizon)), r.origin)
    )
    return [{k: (v.isoformat() if isinstance(v, date) else v) for k, v in asdict(r).items()} for r in rows]


def _csv_text(rows: Sequence[dict], fields: Sequence[str], header_comment: str | None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else _fmt(row[k])) for k in fields})
    return buf.getvalue()


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def summary_csv(evaluation: Evaluation, header_comment: str | None = None) -> str:
    return _csv_text(summary_rows(evaluation), SUMMARY_FIELDS, header_comment)


def long_csv(evaluation: Evaluation, header_comment: str | None = None) -> str:
    return _csv_text(long_rows(evaluation), LONG_FIELDS, header_comment)


def to_json(evaluation: Evaluation, meta: Mapping | None = None) -> str:
    doc = {
        "meta": dict(meta or {}),
        "summary": summary_rows(evaluation),
        "records": long_rows(evaluation),
        "skips": [
            {**asdict(s), "origin": s.origin.isoformat()} for s in evaluation.skips
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)
