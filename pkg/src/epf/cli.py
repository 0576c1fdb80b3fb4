"""``epf`` command-line entry point.

Subcommands: synth, backtest, ensemble, evaluate, gw, anc. A run is driven by
one JSON configuration; see ``configs/`` inside the package for examples.
Failures print a JSON object ``{"error": ..., "message": ...}`` on stderr
and exit non-zero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import scipy

from . import backtest as bt
from .features import CovariateConfig, build_raw, scale
from .ingest import IngestManifest, SyntheticConfig, generate_synthetic, load, write_dataset
from .interpret import anc
from .lear import LassoFit
from .metrics import SLICES, evaluate, format_table, percentile_slice, reports_to_csv, reports_to_json
from .significance import gw_matrix, matrix_to_csv, matrix_to_json, matrix_to_text
from .timeseries import MarketDataset, date_range

SCHEMA_VERSION = 1
EXIT_FAILURE = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    data: dict
    target_zone: str
    covariate_configs: list
    models: list
    cw_list: list
    rf: str
    test_range: object
    seed: int = 0
    output_dir: str = "epf-output"
    dnn: bt.DnnSettings = field(default_factory=bt.DnnSettings)
    strict_ensemble: bool = False
    save_fits: bool = True
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict)

    def dataset(self) -> MarketDataset:
        if "synthetic" in self.data:
            return generate_synthetic(self.synthetic_config())
        m = self.data["manifest"]
        if isinstance(m, str):
            path = self.base_dir / m
            doc = json.loads(path.read_text(encoding="utf-8"))
            return load(IngestManifest.from_dict(doc, path.parent))
        return load(IngestManifest.from_dict(m, self.base_dir))

    def synthetic_config(self) -> SyntheticConfig:
        doc = dict(self.data["synthetic"])
        doc.setdefault("seed", self.seed)
        return SyntheticConfig.from_dict(doc)

    def resolve_test_range(self, ds: MarketDataset) -> tuple[date, date]:
        tr = self.test_range
        if isinstance(tr, dict):
            n = int(tr["last_days"])
            return ds.span[1] - timedelta(days=n - 1), ds.span[1]
        return date.fromisoformat(tr[0]), date.fromisoformat(tr[1])

    def check_against(self, ds: MarketDataset) -> None:
        """Every zone and series the configuration names must exist in the loaded data."""
        have = set(ds.series)
        if ("price", self.target_zone) not in have:
            raise ConfigError("target_zone", f"no price series for zone {self.target_zone!r}")
        for i, cov in enumerate(self.covariate_configs):
            for v in cov.base_variables:
                if (v, self.target_zone) not in have:
                    raise ConfigError(f"covariate_configs[{i}].base_variables",
                                      f"no {v!r} series for zone {self.target_zone!r}")
            for z in cov.neighbor_price_zones:
                if ("price", z) not in have:
                    raise ConfigError(f"covariate_configs[{i}].neighbor_price_zones", f"no price series for zone {z!r}")

    def output_path(self, out_dir=None) -> Path:
        out = Path(out_dir or self.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError("output_dir", f"cannot create {out}: {exc.strerror}") from None
        if not os.access(out, os.W_OK):
            raise ConfigError("output_dir", f"{out} is not writable")
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def parse_run_config(doc: dict, base_dir=".") -> RunConfig:
    def need(key, kind):
        if key not in doc:
            raise ConfigError(key, "missing")
        if not isinstance(doc[key], kind):
            raise ConfigError(key, f"expected {kind.__name__ if isinstance(kind, type) else kind}")
        return doc[key]

    data = need("data", dict)
    if not ({"synthetic", "manifest"} & set(data)):
        raise ConfigError("data", "needs a 'synthetic' or 'manifest' entry")
    target = need("target_zone", str)
    covs = []
    for i, c in enumerate(need("covariate_configs", list)):
        try:
            covs.append(CovariateConfig.from_dict(c, target))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"covariate_configs[{i}]", str(exc)) from None
    if not covs:
        raise ConfigError("covariate_configs", "empty")
    models = need("models", list)
    for i, m in enumerate(models):
        if m not in ("LEAR", "DNN"):
            raise ConfigError(f"models[{i}]", f"unknown model {m!r}")
    cws = need("cw_list", list)
    for i, cw in enumerate(cws):
        if not isinstance(cw, int) or cw < 8:
            raise ConfigError(f"cw_list[{i}]", "calibration windows are integers >= 8")
    rf = need("rf", str)
    if rf not in bt.RECALIBRATION_FREQUENCIES:
        raise ConfigError("rf", f"must be one of {bt.RECALIBRATION_FREQUENCIES}")
    tr = doc.get("test_range")
    if isinstance(tr, list) and len(tr) == 2:
        try:
            date.fromisoformat(tr[0]), date.fromisoformat(tr[1])
        except (TypeError, ValueError):
            raise ConfigError("test_range", "expected two ISO dates") from None
    elif not (isinstance(tr, dict) and isinstance(tr.get("last_days"), int)):
        raise ConfigError("test_range", "expected [first, last] ISO dates or {\"last_days\": N}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "expected an integer")
    try:
        dnn = bt.DnnSettings.from_dict(doc.get("dnn", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError("dnn", str(exc)) from None
    unknown = set(doc) - {"schema_version", "data", "target_zone", "covariate_configs", "models", "cw_list",
                          "rf", "test_range", "seed", "output_dir", "dnn", "strict_ensemble", "save_fits"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    return RunConfig(data, target, covs, models, cws, rf, tr, seed, doc.get("output_dir", "epf-output"), dnn,
                     bool(doc.get("strict_ensemble", False)), bool(doc.get("save_fits", True)), Path(base_dir),
                     doc)


def read_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return parse_run_config(doc, path.parent)


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("epf") / "configs" / name))


# ---------------------------------------------------------------------------
# helpers


def slug(label: str) -> str:
    return label.replace("/", "+").replace(" ", "_")


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_json(path: Path, doc) -> None:
    write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"epf": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def all_slices(label, fc_values, actual, naive):
    return [evaluate(fc_values, actual, naive, percentile_slice(actual, s), label, s) for s in SLICES]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(config_path, out_dir) -> dict:
    doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if "data" in doc:
        rc = parse_run_config(doc, Path(config_path).parent)
        if "synthetic" not in rc.data:
            raise ConfigError("data.synthetic", "synth needs a synthetic data block")
        sc = rc.synthetic_config()
    else:
        sc = SyntheticConfig.from_dict(doc)
    ds = generate_synthetic(sc)
    manifest = write_dataset(ds, out_dir)
    write_json(Path(out_dir) / "synthetic_config.json", sc.to_dict())
    return manifest


def cmd_backtest(config_path, out_dir=None, seed=None) -> dict:
    rc = read_run_config(config_path)
    if seed is not None:
        rc.seed = seed
        rc.raw = dict(rc.raw, seed=seed)
    out = rc.output_path(out_dir)
    ds = rc.dataset()
    rc.check_against(ds)
    test = rc.resolve_test_range(ds)
    actual = bt.actual_prices(ds, test, rc.target_zone)
    naive = bt.naive_forecast(ds, test, rc.target_zone)
    files, runtime, reports = [], {}, []

    def emit(fc: bt.ForecastSet, name: str):
        fc.write_csv(out / "forecasts" / name)
        files.append(f"forecasts/{name}")

    emit(actual, "actual.csv")
    emit(naive, "naive.csv")
    reports += all_slices("naive", naive.values, actual.values, naive.values)
    gw_members = [naive]

    for cov in rc.covariate_configs:
        members = []
        for model in rc.models:
            for cw in rc.cw_list:
                cfg = bt.BacktestConfig(model, cw, rc.rf, cov, test, rc.seed, rc.dnn)
                res = bt.run_backtest(ds, cfg, keep_fits=True)
                fc = res.forecast
                emit(fc, f"{slug(fc.label)}.csv")
                runtime[fc.label] = fc.runtime.to_dict()
                reports += all_slices(fc.label, fc.values, actual.values, naive.values)
                members.append(fc)
                if rc.save_fits and model == "LEAR":
                    for fit, d0, d1 in res.fits:
                        fit = LassoFit(fit.columns, fit.beta, fit.intercept, fit.lam, fit.x_scaler, fit.y_scaler,
                                       cov.label, fit.groups, d0, d1)
                        name = f"fits/{slug(fc.label)}/{d0.isoformat()}.json"
                        write_text(out / name, fit.dumps())
                        files.append(name)
                if model == "DNN" and res.hyper is not None:
                    name = f"fits/{slug(fc.label)}/hyper.json"
                    write_json(out / name, res.hyper.to_dict())
                    files.append(name)
        ens = bt.ensemble(members, label=f"ensemble {cov.label}", strict=rc.strict_ensemble)
        emit(ens, f"{slug(ens.label)}.csv")
        runtime[ens.label] = ens.runtime.to_dict() if ens.runtime else None
        reports += all_slices(ens.label, ens.values, actual.values, naive.values)
        gw_members.append(ens)

    # a neighbour's published price used directly as the forecast
    neighbours = sorted({z for c in rc.covariate_configs for z in c.neighbor_price_zones})
    for z in neighbours:
        copy = bt.ForecastSet(f"price {z}", actual.days, bt.actual_prices(ds, test, z).values)
        emit(copy, f"{slug(copy.label)}.csv")
        reports += all_slices(copy.label, copy.values, actual.values, naive.values)
        gw_members.append(copy)

    write_text(out / "metrics.csv", reports_to_csv(reports))
    write_text(out / "metrics.json", reports_to_json(reports))
    write_text(out / "metrics.txt", format_table(reports))
    files += ["metrics.csv", "metrics.json", "metrics.txt"]
    if len(gw_members) >= 2 and len(actual.days) >= 30:
        labels, pv = gw_matrix(gw_members, actual.values)
        write_text(out / "gw.csv", matrix_to_csv(labels, pv))
        write_text(out / "gw.json", matrix_to_json(labels, pv))
        write_text(out / "gw.txt", matrix_to_text(labels, pv))
        files += ["gw.csv", "gw.json", "gw.txt"]

    manifest = {"schema_version": SCHEMA_VERSION, "config_hash": rc.config_hash(), "seed": rc.seed,
                "versions": versions(), "test_range": [test[0].isoformat(), test[1].isoformat()],
                "target_zone": rc.target_zone, "files": sorted(files)}
    write_json(out / "manifest.json", manifest)
    # wall-clock telemetry changes run to run, so it lives outside the manifest
    write_json(out / "runtime.json", {"schema_version": SCHEMA_VERSION, "runtime": runtime})
    return manifest


def cmd_ensemble(member_csvs, out, strict=False, label="ensemble") -> bt.ForecastSet:
    members = [bt.read_forecast_csv(p) for p in member_csvs]
    ens = bt.ensemble(members, label=label, strict=strict)
    ens.write_csv(out)
    return ens


def cmd_evaluate(forecast_csv, actual_csv, naive_csv, slice_flag="all"):
    fc = bt.read_forecast_csv(forecast_csv)
    act = bt.read_forecast_csv(actual_csv).restrict(fc.days)
    nv = bt.read_forecast_csv(naive_csv).restrict(fc.days)
    mask = percentile_slice(act.values, slice_flag)
    return evaluate(fc.values, act.values, nv.values, mask, fc.label, slice_flag)


def cmd_gw(forecast_csvs, actual_csv):
    fcs = [bt.read_forecast_csv(p) for p in forecast_csvs]
    days = fcs[0].days
    act = bt.read_forecast_csv(actual_csv).restrict(days)
    return gw_matrix([f.restrict(days) for f in fcs], act.values)


def cmd_anc(fit_jsons, config_path):
    """ANC over the days each stored LEAR fit served, rebuilt from the run's data."""
    rc = read_run_config(config_path)
    ds = rc.dataset()
    rc.check_against(ds)
    covs = {c.label: c for c in rc.covariate_configs}
    pairs = []
    for p in fit_jsons:
        fit = LassoFit.from_dict(json.loads(Path(p).read_text(encoding="utf-8")))
        if fit.config_label not in covs:
            raise ConfigError("covariate_configs", f"no configuration labelled {fit.config_label!r} for {p}")
        if fit.valid_from is None or fit.valid_to is None:
            raise ValueError(f"{p}: fit does not record the days it served")
        days = date_range(fit.valid_from, fit.valid_to)
        raw = build_raw(ds, covs[fit.config_label], days[0], days[-1])
        pairs.append((fit, scale(raw, days, fit.x_scaler, fit.y_scaler)))
    return anc(pairs)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epf", description="Day-ahead electricity price forecasting toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic coupled-market dataset as CSV/JSON files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("backtest", help="run the configured experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("ensemble", help="average member forecast CSVs")
    p.add_argument("members", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="ensemble")
    p.add_argument("--strict-ensemble", action="store_true")

    p = sub.add_parser("evaluate", help="accuracy metrics of one forecast")
    p.add_argument("forecast")
    p.add_argument("actual")
    p.add_argument("naive")
    p.add_argument("--slice", choices=SLICES, default="all")
    p.add_argument("--out")

    p = sub.add_parser("gw", help="Giacomini-White p-value matrix")
    p.add_argument("forecasts", nargs="+")
    p.add_argument("--actual", required=True)
    p.add_argument("--out")

    p = sub.add_parser("anc", help="absolute normalised contributions of LEAR feature groups")
    p.add_argument("fits", nargs="+")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    return ap


def _run(args) -> None:
    if args.command == "synth":
        m = cmd_synth(args.config, args.out)
        print(json.dumps({"written": len(m["entries"]), "out": args.out}))
    elif args.command == "backtest":
        m = cmd_backtest(args.config, args.out, args.seed)
        print(json.dumps({"files": len(m["files"]), "config_hash": m["config_hash"]}))
    elif args.command == "ensemble":
        ens = cmd_ensemble(args.members, args.out, args.strict_ensemble, args.label)
        print(json.dumps({"days": len(ens.days), "out": args.out}))
    elif args.command == "evaluate":
        rep = cmd_evaluate(args.forecast, args.actual, args.naive, args.slice)
        text = json.dumps({"schema_version": SCHEMA_VERSION, **rep.to_dict()}, indent=1) + "\n"
        if args.out:
            write_text(Path(args.out), text)
        sys.stdout.write(text)
    elif args.command == "gw":
        labels, pv = cmd_gw(args.forecasts, args.actual)
        if args.out:
            out = Path(args.out)
            write_text(out / "gw.csv", matrix_to_csv(labels, pv))
            write_text(out / "gw.json", matrix_to_json(labels, pv))
            write_text(out / "gw.txt", matrix_to_text(labels, pv))
        sys.stdout.write(matrix_to_text(labels, pv))
    elif args.command == "anc":
        rep = cmd_anc(args.fits, args.config)
        if args.out:
            write_text(Path(args.out), rep.dumps())
        sys.stdout.write(rep.dumps())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"error": "config", "key": exc.key, "message": str(exc)}) + "\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - the CLI reports every failure as JSON
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
