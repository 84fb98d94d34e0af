"""Cross-validated benchmark over datasets, methods and missing-value ratios.

Per outer fold the training rows go through: fit the normalizer, inject
MCAR cells, REM imputation, method-specific training with the UD search. Test
rows are normalized with the training statistics, any missing cells are
filled by one E-step under the frozen training Gaussian, and then predicted.
Test rows never reach MCAR injection, the REM M-steps or the search.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DENSE_CSV, SPARSE, Dataset, apply_normalizer, fit_normalizer, inject_mcar, load_dataset, \
    stratified_kfold
from .errors import ConfigError, MlwsvmError
from .imputation import RemConfig, impute_with_model, rem_impute
from .metrics import accumulate, measures
from .multilevel import MlConfig, direct_train, ml_train

log = logging.getLogger(__name__)

METHODS = ("svm", "wsvm", "mlsvm", "mlwsvm")
NORMALIZATION_MODES = ("train", "full")
PIPELINE = ("normalize-fit(train)", "inject_mcar(train)", "rem_impute(train)", "train")


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark sweep.

    ``normalization='train'`` fits z-scores on each training fold;
    ``'full'`` fits them once on the whole dataset before splitting.
    """

    datasets: tuple = ()
    methods: tuple = ("mlwsvm",)
    missing_ratios: tuple = (0.05, 0.10, 0.20, 0.40)
    outer_folds: int = 10
    seeds: tuple = (0, 1, 2)
    normalization: str = "train"
    jobs: int = 1
    multilevel: MlConfig = field(default_factory=MlConfig)
    imputation: RemConfig = field(default_factory=RemConfig)

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; expected some of {METHODS}")
        for r in self.missing_ratios:
            if not 0 <= r < 1:
                raise ConfigError(f"missing ratio {r} outside [0, 1)")
        if self.outer_folds < 2:
            raise ConfigError("outer_folds must be at least 2")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(f"normalization must be one of {NORMALIZATION_MODES}")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")


# --------------------------------------------------------------------------
# configuration files


def _coerce(text: str, like, key: str):
    try:
        if isinstance(like, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple) and like and isinstance(like[0], tuple):
            nums = [float(v) for v in text.replace(";", ",").split(",")]
            if len(nums) != 4:
                raise ValueError(text)
            return (nums[0], nums[1]), (nums[2], nums[3])
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None
    return text


def _split_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def parse_config(lines, base: dict | None = None) -> dict:
    """Parse flat ``key=value`` lines into keyword overrides.

    Keys are top-level fields (``datasets``, ``methods``, ``ratios``,
    ``folds``, ``seeds``, ``normalization``, ``jobs``) or
    ``multilevel.<field>`` / ``imputation.<field>``. ``#`` starts a comment.
    """
    out = dict(base or {})
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        set_option(out, key, value)
    return out


def set_option(out: dict, key: str, value: str) -> None:
    """Store one textual option in an override dict (see :func:`parse_config`)."""
    aliases = {"method": "methods", "ratios": "missing_ratios", "missing_ratio": "missing_ratios",
               "folds": "outer_folds", "dataset": "datasets", "seed": "seeds"}
    key = aliases.get(key, key)
    if key in ("datasets", "methods"):
        out[key] = tuple(_split_list(value))
    elif key == "missing_ratios":
        out[key] = tuple(_coerce(v, 0.0, key) for v in _split_list(value))
    elif key == "seeds":
        out[key] = tuple(_coerce(v, 0, key) for v in _split_list(value))
    elif key in ("outer_folds", "jobs"):
        out[key] = _coerce(value, 0, key)
    elif key == "normalization":
        out[key] = value
    elif "." in key:
        section, name = key.split(".", 1)
        cls = {"multilevel": MlConfig, "imputation": RemConfig}.get(section)
        if cls is None:
            raise ConfigError(f"unknown section {section!r}")
        defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
        if name not in defaults:
            raise ConfigError(f"unknown option {key!r}")
        out.setdefault(section, {})[name] = _coerce(value, defaults[name], key)
    else:
        raise ConfigError(f"unknown option {key!r}")


def build_config(overrides: dict) -> ExperimentConfig:
    kw = dict(overrides)
    try:
        if "multilevel" in kw:
            kw["multilevel"] = MlConfig(**kw["multilevel"])
        if "imputation" in kw:
            kw["imputation"] = RemConfig(**kw["imputation"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(**kw)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    kw = parse_config(text.splitlines())
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            kw.setdefault(key, {}).update(value)
        else:
            kw[key] = value
    return build_config(kw)


# --------------------------------------------------------------------------
# protocol


SPARSE_SUFFIXES = (".svm", ".libsvm", ".sparse")


def load_any(path) -> Dataset:
    """Load a dataset, choosing the format from the file extension."""
    path = Path(path)
    return load_dataset(path, SPARSE if path.suffix in SPARSE_SUFFIXES else DENSE_CSV)


def read_dataset(path) -> Dataset:
    """:func:`load_any` followed by binarization (minority class +1)."""
    return load_any(path).binarize()


def train_method(method: str, x, y, ml: MlConfig, seed: int):
    """Fit one of the four compared methods; returns the final SvmModel."""
    if method in ("mlsvm", "mlwsvm"):
        return ml_train(x, y, ml, weighted=method == "mlwsvm", seed=seed).final_model
    if method in ("svm", "wsvm"):
        return direct_train(x, y, weighted=method == "wsvm", config=ml, seed=seed)[0]
    raise ConfigError(f"unknown method {method!r}")


def _mcar_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold, 101]).generate_state(1)[0])


def run_fold(data: Dataset, train_rows, test_rows, method: str, ratio: float, seed: int,
             fold: int, config: ExperimentConfig) -> tuple:
    """One outer fold; returns ``(Measures, training seconds)``."""
    train, test = data.subset(train_rows), data.subset(test_rows)
    if config.normalization == "train":
        stats = fit_normalizer(train)
        train, test = apply_normalizer(train, stats), apply_normalizer(test, stats)
    if ratio > 0:
        train = inject_mcar(train, ratio, _mcar_seed(seed, fold))
    imputed = rem_impute(train, config.imputation)
    test = impute_with_model(test, imputed.mu, imputed.sigma, config.imputation.ridge)
    x = np.ascontiguousarray(imputed.completed.features)
    t0 = time.perf_counter()
    model = train_method(method, x, imputed.completed.labels, config.multilevel, seed)
    seconds = time.perf_counter() - t0
    m = measures(accumulate(model.predict(test.features), test.labels))
    return m, seconds


def _fold_job(args) -> tuple:
    data, tr, te, method, ratio, seed, fold, config = args
    try:
        return run_fold(data, tr, te, method, ratio, seed, fold, config)
    except MlwsvmError as exc:
        return f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    method: str
    ratio: float
    sn: float = math.nan
    sn_sd: float = math.nan
    sp: float = math.nan
    sp_sd: float = math.nan
    gmean: float = math.nan
    gmean_sd: float = math.nan
    acc: float = math.nan
    acc_sd: float = math.nan
    seconds: float = math.nan
    seconds_sd: float = math.nan
    runs: int = 0
    error: str = ""


@dataclass(frozen=True)
class Report:
    rows: tuple

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r.error]


def _mean_sd(values) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def _aggregate(name, method, ratio, results) -> ReportRow:
    errors = [r for r in results if isinstance(r, str)]
    if errors:
        return ReportRow(name, method, ratio, runs=len(results) - len(errors), error=errors[0])
    cols = {}
    for attr in ("sn", "sp", "gmean", "acc"):
        cols[attr], cols[attr + "_sd"] = _mean_sd([getattr(m, attr) for m, _ in results])
    cols["seconds"], cols["seconds_sd"] = _mean_sd([s for _, s in results])
    return ReportRow(name, method, ratio, runs=len(results), **cols)


def run_experiment(config: ExperimentConfig) -> Report:
    """Run every (dataset, method, ratio) cell over all seeds and outer folds.

    A failing cell is reported with its first error instead of aborting the sweep.
    """
    log.info("pipeline: %s; test rows: normalize-apply -> frozen E-step -> predict", " -> ".join(PIPELINE))
    rows = []
    for path in config.datasets:
        try:
            data = read_dataset(path)
            if config.normalization == "full":
                data = apply_normalizer(data, fit_normalizer(data))
            splits = [stratified_kfold(data, config.outer_folds, s) for s in config.seeds]
        except (MlwsvmError, OSError) as exc:
            for method in config.methods:
                for ratio in config.missing_ratios:
                    rows.append(ReportRow(Path(path).stem, method, ratio, error=f"{type(exc).__name__}: {exc}"))
            continue
        jobs, cells = [], []
        for method in config.methods:
            for ratio in config.missing_ratios:
                cells.append((method, ratio, len(jobs)))
                for seed, split in zip(config.seeds, splits):
                    for fold, (tr, te) in enumerate(split):
                        jobs.append((data, tr, te, method, ratio, seed, fold, config))
        if config.jobs > 1:
            with ProcessPoolExecutor(config.jobs) as pool:
                results = list(pool.map(_fold_job, jobs))
        else:
            results = [_fold_job(j) for j in jobs]
        per_cell = len(config.seeds) * config.outer_folds
        for method, ratio, start in cells:
            row = _aggregate(data.name, method, ratio, results[start:start + per_cell])
            log.info("%s %s ratio=%g gmean=%.4f error=%s", row.dataset, row.method, ratio, row.gmean, row.error)
            rows.append(row)
    return Report(tuple(rows))


# --------------------------------------------------------------------------
# output

COLUMNS = ("dataset", "method", "ratio", "sn", "sn_sd", "sp", "sp_sd", "gmean", "gmean_sd",
           "acc", "acc_sd", "seconds", "seconds_sd", "runs", "error")
HEADER = ("dataset", "method", "ratio", "SN", "SN_sd", "SP", "SP_sd", "G-mean", "G-mean_sd",
          "ACC", "ACC_sd", "seconds", "seconds_sd", "runs", "error")


def _cells(row: ReportRow, timing: bool) -> list:
    out = []
    for col in COLUMNS:
        v = getattr(row, col)
        if col.startswith("seconds"):
            out.append("" if not timing or math.isnan(v) else f"{v:.1f}")
        elif col in ("dataset", "method", "error", "runs"):
            out.append(str(v))
        elif col == "ratio":
            out.append(f"{v:g}")
        else:
            out.append("" if math.isnan(v) else f"{v:.4f}")
    return out


def format_report(report: Report, format: str = "csv", timing: bool = True) -> str:
    """Render a report; ``timing=False`` blanks the wall-clock columns."""
    if not report.rows:
        raise ConfigError("cannot emit an empty report")
    rows = [_cells(r, timing) for r in report.rows]
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(rows)
        return buf.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(HEADER) + " |", "|" + "---|" * len(HEADER)]
        lines += ["| " + " | ".join(c.replace("|", "/") for c in r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report format {format!r}")


def emit_report(report: Report, path, format: str = "csv", timing: bool = True) -> None:
    """Write the rendered report; an unwritable path raises OSError."""
    Path(path).write_text(format_report(report, format, timing))
