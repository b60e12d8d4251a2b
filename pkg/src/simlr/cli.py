"""Command-line interface: ``simlr ingest | fit | forecast | evaluate``.

Settings come from an optional YAML config file; flags override it. The
data directory can also be set with the ``SIMLR_DATA_DIR`` environment
variable (flag > environment > config file > the config file's directory,
or the current directory without a config).

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from simlr import __version__
from simlr.data_pipeline import (
    DataError,
    RegionData,
    ingest_cases,
    prepare_history,
    preprocess,
    build_sir_series,
    read_jhu_population,
    read_policy_levels,
    build_policy_timeline,
)
from simlr.eval import default_builders, default_origins, long_csv, rolling_evaluate, summary_csv, to_json
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
from simlr.pgm.cpt import ConfigError, default_cpts, load_cpts
from simlr.pgm.nn_cpd import NnCpd, SoftLabelDataset, TrainingError, default_soft_labels, train_nn_cpd

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

DATA_DIR_ENV = "SIMLR_DATA_DIR"
DEFAULT_SOURCES = {
    "cases": "time_series_covid19_confirmed_global.csv",
    "deaths": "time_series_covid19_deaths_global.csv",
    "policy": "OxCGRT_latest.csv",
}
# mid-2020 estimates (Statistics Canada, US Census Bureau)
POPULATIONS = {
    "Canada/Alberta": 4_421_876,
    "Canada/British Columbia": 5_147_712,
    "Canada/Manitoba": 1_379_263,
    "Canada/Ontario": 14_734_014,
    "Canada/Quebec": 8_574_571,
    "Canada/Saskatchewan": 1_178_681,
    "Canada": 38_005_238,
    "US": 329_484_123,
}
MODELS = ("simlr", "tfvsir", "slow")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    region: str
    data_dir: Path = Path(".")
    cases: str = DEFAULT_SOURCES["cases"]
    deaths: str = DEFAULT_SOURCES["deaths"]
    policy: str = DEFAULT_SOURCES["policy"]
    population: float | None = None
    cpts: Path | None = None
    nn_weights: Path | None = None
    soft_labels: Path | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    origins: tuple[date, ...] = field(default_factory=lambda: tuple(default_origins()))
    seed: int = 0
    out: Path = Path("simlr-out")
    horizon: int = MAX_HORIZON

    def source(self, kind: str) -> Path:
        name = getattr(self, kind)
        path = Path(name)
        return path if path.is_absolute() else self.data_dir / path

    def input_files(self) -> dict[str, Path]:
        files = {k: self.source(k) for k in DEFAULT_SOURCES}
        for k in ("cpts", "nn_weights", "soft_labels"):
            if getattr(self, k) is not None:
                files[k] = Path(getattr(self, k))
        return files

    def check_files(self) -> None:
        for kind, path in self.input_files().items():
            if not path.is_file():
                raise UsageError(f"{kind} file not found: {path}")

    def describe(self) -> dict[str, Any]:
        """Canonical, path-independent view used for hashing."""
        d = {
            "region": self.region,
            "population": self.population,
            "fit": asdict(self.fit),
            "origins": [o.isoformat() for o in self.origins],
            "seed": self.seed,
            "horizon": self.horizon,
            "inputs": {k: _file_digest(p) for k, p in sorted(self.input_files().items())},
        }
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_date(value: Any) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise UsageError(f"not an ISO date: {value!r}") from exc


def _parse_origins(spec: Any) -> tuple[date, ...]:
    if isinstance(spec, Mapping):
        return tuple(default_origins(_parse_date(spec.get("first", "2020-07-26")), int(spec.get("count", 39))))
    if isinstance(spec, (list, tuple)):
        return tuple(_parse_date(v) for v in spec)
    raise UsageError("origins must be a list of dates or {first, count}")


_CONFIG_KEYS = {
    "region", "data_dir", "cases", "deaths", "policy", "population", "cpts",
    "nn_weights", "soft_labels", "fit", "origins", "seed", "out", "horizon",
}


def load_config(args: argparse.Namespace, environ: Mapping[str, str] = os.environ) -> RunConfig:
    raw: dict[str, Any] = {}
    base = Path(".")
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must be a mapping")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        base = path.parent

    def rel(p: Any) -> Path:
        p = Path(str(p))
        return p if p.is_absolute() else base / p

    region = args.region or raw.get("region")
    if not region:
        raise UsageError("no region given (use --region or set `region` in the config)")
    if getattr(args, "data_dir", None):
        data_dir = Path(args.data_dir)
    elif environ.get(DATA_DIR_ENV):
        data_dir = Path(environ[DATA_DIR_ENV])
    elif "data_dir" in raw:
        data_dir = rel(raw["data_dir"])
    else:
        data_dir = base

    fit_raw = raw.get("fit") or {}
    try:
        fit = FitConfig(**{k: float(v) for k, v in fit_raw.items()})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad fit options {fit_raw}: {exc}") from exc

    cfg = RunConfig(
        region=str(region),
        data_dir=data_dir,
        cases=str(raw.get("cases", DEFAULT_SOURCES["cases"])),
        deaths=str(raw.get("deaths", DEFAULT_SOURCES["deaths"])),
        policy=str(raw.get("policy", DEFAULT_SOURCES["policy"])),
        population=None if raw.get("population") is None else float(raw["population"]),
        cpts=None if raw.get("cpts") is None else rel(raw["cpts"]),
        nn_weights=None if raw.get("nn_weights") is None else rel(raw["nn_weights"]),
        soft_labels=None if raw.get("soft_labels") is None else rel(raw["soft_labels"]),
        fit=fit,
        origins=_parse_origins(raw["origins"]) if "origins" in raw else tuple(default_origins()),
        seed=int(raw.get("seed", 0)),
        out=rel(raw["out"]) if "out" in raw else Path("simlr-out"),
        horizon=int(raw.get("horizon", MAX_HORIZON)),
    )
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=Path(args.out))
    if getattr(args, "horizon", None) is not None:
        cfg = replace(cfg, horizon=args.horizon)
    if not 1 <= cfg.horizon <= MAX_HORIZON:
        raise UsageError(f"horizon must be in 1..{MAX_HORIZON}, got {cfg.horizon}")
    cfg.check_files()
    return cfg


# ---------------------------------------------------------------------------
# shared plumbing


def region_slug(region: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", region).strip("_")


def load_region(cfg: RunConfig) -> RegionData:
    raw = ingest_cases(cfg.source("cases"), cfg.source("deaths"), cfg.region)
    population = cfg.population
    if population is None:
        population = read_jhu_population(cfg.source("deaths"), cfg.region)
    if population is None:
        population = POPULATIONS.get(cfg.region)
    if population is None:
        raise UsageError(f"no population known for {cfg.region}; set `population` in the config")
    dates, levels = read_policy_levels(cfg.source("policy"), cfg.region)
    return RegionData(cfg.region, float(population), raw, tuple(dates), levels)


def load_pgm(cfg: RunConfig, need_nn: bool = True) -> PgmConfig:
    cpts = default_cpts() if cfg.cpts is None else load_cpts(cfg.cpts)
    if not need_nn:
        return PgmConfig(cpts)
    if cfg.nn_weights is not None:
        return PgmConfig(cpts, NnCpd.load(cfg.nn_weights))
    labels = default_soft_labels() if cfg.soft_labels is None else SoftLabelDataset.read_csv(cfg.soft_labels)
    return PgmConfig(cpts, train_nn_cpd(labels, seed=cfg.seed))


def meta(cfg: RunConfig, kind: str) -> dict[str, Any]:
    return {
        "format": f"simlr-{kind}",
        "format_version": 1,
        "simlr_version": __version__,
        "config_sha256": cfg.config_hash(),
        "seed": cfg.seed,
        "region": cfg.region,
    }


def header(m: Mapping[str, Any]) -> str:
    return "\n".join(f"{k}: {v}" for k, v in m.items())


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def table_csv(fields: Sequence[str], rows: Sequence[Sequence[Any]], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> int:
    data = load_region(cfg)
    daily = preprocess(data.raw)
    states = build_sir_series(daily.infections, daily.deaths, data.population)
    timeline = build_policy_timeline(cfg.region, data.policy_dates, data.policy_levels)
    m = meta(cfg, "ingest")
    out = cfg.out / region_slug(cfg.region)
    write_text(
        out / "raw.csv",
        table_csv(
            ["date", "cumulative_cases", "cumulative_deaths"],
            [(d.isoformat(), c, x) for d, c, x in zip(data.raw.dates, data.raw.cumulative_cases, data.raw.cumulative_deaths)],
            header(m),
        ),
    )
    write_text(
        out / "daily.csv",
        table_csv(
            ["date", "new_infections", "new_deaths", "s", "i", "r"],
            [
                (d.isoformat(), a, b, st.s, st.i, st.r)
                for d, a, b, st in zip(daily.dates, daily.infections, daily.deaths, states[1:])
            ],
            header(m),
        ),
    )
    write_text(
        out / "policy.csv",
        table_csv(
            ["week_start", "cp", "weeks_since_change"],
            [(w.isoformat(), int(c), int(s)) for w, c, s in zip(timeline.week_starts, timeline.cp, timeline.weeks_since_change)],
            header(m),
        ),
    )
    summary = {
        "meta": m,
        "population": data.population,
        "days": len(daily.dates),
        "weeks": len(daily.dates) // 7,
        "first_day": daily.dates[0].isoformat(),
        "last_day": daily.dates[-1].isoformat(),
        "missing_filled": daily.n_filled,
        "outliers_clamped": daily.n_clamped,
        "policy_weeks": len(timeline.week_starts),
        "policy_changes": int(np.count_nonzero(timeline.cp)),
    }
    write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"{cfg.region}: {summary['days']} days ({summary['first_day']} to {summary['last_day']}), "
        f"{summary['weeks']} weeks, {summary['missing_filled']} missing filled, "
        f"{summary['outliers_clamped']} outliers clamped, {summary['policy_changes']} policy-change weeks"
    )
    return EXIT_OK


def _single_origin(cfg: RunConfig, origin: date | None) -> date:
    if origin is not None:
        return origin
    if len(cfg.origins) == 1:
        return cfg.origins[0]
    raise UsageError("give --origin (the Sunday starting the first forecast week)")


def cmd_fit(cfg: RunConfig, origin: date | None) -> int:
    origin = _single_origin(cfg, origin)
    history = prepare_history(load_region(cfg), origin)
    fitted = fit_history(history, cfg.fit)
    pgm = load_pgm(cfg)
    out = cfg.out / region_slug(cfg.region)
    weights = out / f"nn_cpd_seed{cfg.seed}.npz"
    weights.parent.mkdir(parents=True, exist_ok=True)
    pgm.require_nn().save(weights)
    doc = {
        "meta": meta(cfg, "fit"),
        "origin": origin.isoformat(),
        "cpt_sha256": pgm.cpts.checksum,
        "nn_weights": weights.name,
        "trend": fitted.trend.to_dict(),
        "weekly": [
            {"week_index": w.week_index, "beta": w.beta, "gamma": w.gamma, "residual": w.residual, "clamped": w.clamped}
            for w in fitted.weekly_params
        ],
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    write_text(out / f"fit_{origin.isoformat()}.json", text)
    t = fitted.trend
    print(f"{cfg.region} at {origin}: {len(fitted.weekly_params)} weeks fitted; "
          f"alpha={list(t.alpha)} omega={list(t.omega)}")
    return EXIT_OK


FORECAST_FIELDS = (
    "region", "model", "origin", "horizon", "target_week", "point", "weight_trend", "weight_slow",
    "tfvsir", "slow", "ct_minus1", "ct_0", "ct_plus1",
    "cp1_minus1", "cp1_0", "cp1_plus1", "cp2_minus1", "cp2_0", "cp2_plus1",
)


def forecast_rows(cfg: RunConfig, origin: date, model: str) -> list[list[Any]]:
    history = prepare_history(load_region(cfg), origin)
    rows: list[list[Any]] = []
    if model == "simlr":
        fitted = fit_history(history, cfg.fit)
        for f in mixture_forecast(fitted, load_pgm(cfg, need_nn=cfg.horizon >= 3), cfg.horizon):
            cps = [v for dist in f.cp_forecasts for v in dist]
            cps += [None] * (6 - len(cps))
            rows.append([
                cfg.region, model, origin.isoformat(), f.horizon, f.target_week.isoformat(), f.point,
                f.weight_trend, f.weight_slow, f.tfvsir, f.slow, *f.ct, *cps,
            ])
        return rows
    if model == "tfvsir":
        points = fitted_tfvsir_forecast(fit_history(history, cfg.fit), cfg.horizon)
        weights = (1.0, 0.0)
    else:
        bounds = history.weekly_states()
        points = slow_forecast(bounds[-2].s - bounds[-1].s, cfg.horizon)
        weights = (0.0, 1.0)
    for h, p in enumerate(points, start=1):
        rows.append([
            cfg.region, model, origin.isoformat(), h, (origin + timedelta(weeks=h - 1)).isoformat(), p,
            *weights, p if model == "tfvsir" else None, p if model == "slow" else None, *[None] * 9,
        ])
    return rows


def cmd_forecast(cfg: RunConfig, origin: date | None, model: str) -> int:
    origin = _single_origin(cfg, origin)
    rows = forecast_rows(cfg, origin, model)
    text = table_csv(FORECAST_FIELDS, rows, header(meta(cfg, "forecast")))
    write_text(cfg.out / region_slug(cfg.region) / f"forecast_{model}_{origin.isoformat()}.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    data = load_region(cfg)
    pgm = load_pgm(cfg)
    evaluation = rolling_evaluate(data, default_builders(pgm, cfg.fit), cfg.origins, cfg.horizon)
    m = meta(cfg, "evaluation")
    out = cfg.out / region_slug(cfg.region)
    write_text(out / "eval_summary.csv", summary_csv(evaluation, header(m)))
    write_text(out / "eval_long.csv", long_csv(evaluation, header(m)))
    write_text(out / "eval.json", to_json(evaluation, m) + "\n")
    sys.stdout.write(summary_csv(evaluation))
    if evaluation.skips:
        print(f"# {len(evaluation.skips)} skipped forecast(s); see eval.json", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--region", help='region id, "Country" or "Country/Province"')
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--data-dir", help=f"directory with the input CSVs (overrides ${DATA_DIR_ENV})")
    common.add_argument("--out", help="output directory (default simlr-out)")
    common.add_argument("--seed", type=int, help="seed for network initialization (default 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="simlr", description="Epidemic forecasting with a policy-aware SIR mixture.")
    parser.add_argument("--version", action="version", version=f"simlr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("ingest", parents=[common], help="clean one region and write its series")
    p = sub.add_parser("fit", parents=[common], help="fit rates, trend and urgency network at an origin")
    p.add_argument("--origin", type=_origin_arg, help="Sunday starting the first forecast week")
    p = sub.add_parser("forecast", parents=[common], help="forecast 1-4 weeks after an origin")
    p.add_argument("--origin", type=_origin_arg, help="Sunday starting the first forecast week")
    p.add_argument("--horizon", type=int, help="weeks ahead, 1..4 (default 4)")
    p.add_argument("--model", choices=MODELS, default="simlr")
    p = sub.add_parser("evaluate", parents=[common], help="rolling-origin evaluation of all models")
    p.add_argument("--horizon", type=int, help="largest horizon scored, 1..4 (default 4)")
    return parser


def _origin_arg(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {value!r}") from None


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.origin)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.origin, args.model)
        return cmd_evaluate(cfg)
    except (UsageError, ConfigError) as exc:
        print(f"simlr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ColdStartError) as exc:
        print(f"simlr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"simlr: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001 - last-resort boundary
        logger.exception("unexpected failure")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
