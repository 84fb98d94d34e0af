"""Command-line entry point: ``mlwsvm {train,predict,bench,impute}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 some benchmark
cells failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .dataset import Dataset, NormStats, apply_normalizer, fit_normalizer, invert_normalizer, save_dataset
from .errors import ConfigError, DataError, MlwsvmError
from .imputation import impute_with_model, rem_impute, write_trace
from .kernel_solver import load_model, save_model
from .metrics import accumulate, measures
from .multiclass import load_ova, ova_train, save_ova

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _overrides(args) -> dict:
    kw = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        ex.set_option(kw, key.strip(), value.strip())
    if getattr(args, "method", None):
        kw["methods"] = tuple(ex._split_list(args.method))
    if getattr(args, "ratios", None):
        ex.set_option(kw, "ratios", args.ratios)
    if getattr(args, "folds", None):
        kw["outer_folds"] = args.folds
    if getattr(args, "seed", None) is not None:
        kw["seeds"] = (args.seed, args.seed + 1, args.seed + 2)
    if getattr(args, "jobs", None):
        kw["jobs"] = args.jobs
    if getattr(args, "global_normalization", False):
        kw["normalization"] = "full"
    return kw


def _config(args, datasets=()) -> ex.ExperimentConfig:
    kw = _overrides(args)
    if datasets:
        kw["datasets"] = tuple(datasets)
    if args.config:
        return ex.load_config(args.config, kw)
    kw.setdefault("datasets", ())
    return ex.build_config(kw)


def _prep_path(model_path) -> Path:
    return Path(str(model_path) + ".prep.json")


def cmd_train(args) -> int:
    cfg = _config(args, [args.data])
    method = cfg.methods[0]
    raw = ex.load_any(args.data)
    stats = fit_normalizer(raw)
    imputed = rem_impute(apply_normalizer(raw, stats), cfg.imputation)
    x = np.ascontiguousarray(imputed.completed.features)
    seed = cfg.seeds[0]
    prep = {"method": method, "mean": stats.mean.tolist(), "stdev": stats.stdev.tolist(),
            "mu": imputed.mu.tolist(), "sigma": imputed.sigma.tolist(),
            "ridge": cfg.imputation.ridge, "feature_names": list(raw.feature_names)}
    if len(raw.class_ids) > 2:
        model = ova_train(x, raw.labels, lambda xs, ys, s: ex.train_method(method, xs, ys, cfg.multilevel, s),
                          seed)
        save_ova(model, args.out)
        prep["kind"] = "ova"
    else:
        binary = raw.binarize()
        pos = int(raw.labels[binary.labels == 1][0])
        neg = int(raw.labels[binary.labels == -1][0])
        model = ex.train_method(method, x, binary.labels, cfg.multilevel, seed)
        save_model(model, args.out)
        prep.update(kind="binary", positive=pos, negative=neg)
    _prep_path(args.out).write_text(json.dumps(prep, indent=1) + "\n")
    print(f"wrote {args.out} ({prep['kind']}, method {method})")
    return EXIT_OK


def cmd_predict(args) -> int:
    prep = json.loads(_prep_path(args.model).read_text())
    data = ex.load_any(args.data)
    stats = NormStats(np.asarray(prep["mean"]), np.asarray(prep["stdev"]))
    if data.n_features != len(stats.mean):
        raise DataError(f"model expects {len(stats.mean)} features, got {data.n_features}")
    data = impute_with_model(apply_normalizer(data, stats), prep["mu"], prep["sigma"], prep["ridge"])
    if prep["kind"] == "ova":
        pred = load_ova(args.model).predict(data.features)
    else:
        signs = load_model(args.model).predict(data.features)
        pred = np.where(signs > 0, prep["positive"], prep["negative"])
    lines = ["predicted"] + [str(int(p)) for p in pred]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    if prep["kind"] == "binary" and set(np.unique(data.labels)) <= {prep["positive"], prep["negative"]}:
        truth = np.where(data.labels == prep["positive"], 1, -1)
        try:
            m = measures(accumulate(np.where(pred == prep["positive"], 1, -1), truth)).rounded()
            print(f"SN={m.sn:.4f} SP={m.sp:.4f} G-mean={m.gmean:.4f} ACC={m.acc:.4f}", file=sys.stderr)
        except MlwsvmError:
            pass
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args, args.datasets)
    report = ex.run_experiment(cfg)
    if args.out:
        ex.emit_report(report, args.out, args.format, timing=not args.no_timing)
    else:
        sys.stdout.write(ex.format_report(report, args.format, timing=not args.no_timing))
    for row in report.failed:
        print(f"cell failed: {row.dataset} {row.method} ratio={row.ratio:g}: {row.error}", file=sys.stderr)
    return EXIT_PARTIAL if report.failed else EXIT_OK


def cmd_impute(args) -> int:
    overrides = {}
    for item in args.set or ():
        key, _, value = item.partition("=")
        ex.set_option(overrides, key.strip(), value.strip())
    if args.config:
        overrides = ex.parse_config(Path(args.config).read_text().splitlines(), overrides)
    try:
        rem = ex.RemConfig(**overrides.get("imputation", {}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raw = ex.load_any(args.data)
    # impute in z-score space, then map back; observed cells are copied verbatim
    stats = fit_normalizer(raw)
    result = rem_impute(apply_normalizer(raw, stats), rem)
    back = np.array(invert_normalizer(result.completed, stats).features)
    back[~raw.missing] = raw.features[~raw.missing]
    save_dataset(Dataset.from_arrays(back, raw.labels, raw.name, raw.feature_names), args.out)
    if args.trace:
        write_trace(result, args.trace)
    print(f"imputed {raw.n_missing} cells in {result.sweeps_used} sweeps (change {result.final_change:.3g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlwsvm", description="Multilevel weighted SVM with REM imputation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="fit and serialize a model")
    t.add_argument("data")
    t.add_argument("--method", default="mlwsvm", choices=ex.METHODS)
    t.add_argument("--out", required=True)
    common(t)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="apply a serialized model to a file")
    pr.add_argument("model")
    pr.add_argument("data")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="run the cross-validated benchmark")
    b.add_argument("datasets", nargs="*")
    b.add_argument("--method", help="comma-separated methods")
    b.add_argument("--ratios", help="comma-separated missing ratios")
    b.add_argument("--folds", type=int)
    b.add_argument("--jobs", type=int)
    b.add_argument("--global-normalization", action="store_true",
                   help="fit z-scores on the whole dataset instead of each training fold")
    b.add_argument("--out")
    b.add_argument("--format", choices=("csv", "markdown"), default="csv")
    b.add_argument("--no-timing", action="store_true", help="blank the seconds columns")
    common(b)
    b.set_defaults(func=cmd_bench)

    im = sub.add_parser("impute", help="REM imputation of a CSV file")
    im.add_argument("data")
    im.add_argument("--out", required=True)
    im.add_argument("--trace", help="per-sweep diagnostics CSV")
    im.add_argument("--config")
    im.add_argument("--set", action="append", metavar="KEY=VALUE")
    im.set_defaults(func=cmd_impute)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MlwsvmError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
