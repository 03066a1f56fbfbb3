"""
Benchmark Service
Runs the head comparison (quadrants or MNIST) over several seeds and writes
per-seed CSV, summary CSV/markdown tables and a run manifest
"""

import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from app.core.config import settings, validate_config
from app.core.errors import ConfigError, DataFormatError, DomainError
from app.servies.dataset_service import Dataset, DatasetService, dataset_service
from app.servies.head_service import HEADS, TABLE_ORDER, HeadKind, get_head, parse_head
from app.servies.metrics_service import (
    CONVENTIONS,
    METRIC_NAMES,
    MetricsReport,
    SeedMetrics,
    aggregate,
    evaluate_head,
)
from app.servies.network_service import ArchSpec, init_network, save_checkpoint
from app.servies.training_service import TrainConfig, train

logger = logging.getLogger("condor-ordinal.benchmark")

DATASETS = ("quadrants", "mnist")
DATASET_RANKS = {"quadrants": 4, "mnist": 10}
DEFAULT_HIDDEN = {"quadrants": [10, 10], "mnist": [128]}

PER_SEED_FILE = "per_seed.csv"
SUMMARY_CSV_FILE = "summary.csv"
SUMMARY_MD_FILE = "summary.md"
MANIFEST_FILE = "manifest.json"

PER_SEED_COLUMNS = ["DATASET", "ALGORITHM", "SEED", "WBCE", "MAE", "EMD", "ACCURACY", "EPOCHS"]
TABLE_COLUMNS = ["ALGORITHM", "WBCE", "MAE", "EMD", "ACCURACY"]
FLOAT_FORMAT = "%.8f"


class ExperimentConfig(BaseModel):
    """One benchmark: dataset, heads, architecture, training and seeds"""
    dataset: str = "quadrants"
    heads: List[HeadKind] = Field(default_factory=lambda: list(TABLE_ORDER))
    hidden: Optional[List[int]] = None
    activation: Literal["relu", "linear"] = "relu"
    train: TrainConfig = Field(default_factory=TrainConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    n: int = Field(default=1000, ge=4)
    test_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    mnist_full: bool = False
    mnist_train: int = Field(default=10000, ge=1)
    mnist_test: int = Field(default=2000, ge=1)
    data_dir: Optional[Path] = None
    out: Path = Field(default_factory=lambda: settings.RESULTS_DIR)
    save_checkpoints: bool = False

    @field_validator("dataset")
    @classmethod
    def _known_dataset(cls, value: str) -> str:
        if value not in DATASETS:
            raise ValueError(f"unknown dataset {value!r}; valid datasets: {', '.join(DATASETS)}")
        return value

    @field_validator("heads", mode="before")
    @classmethod
    def _known_heads(cls, value: Any) -> List[HeadKind]:
        names = [value] if isinstance(value, (str, HeadKind)) else list(value)
        if any(name == "all" for name in names):
            return list(TABLE_ORDER)
        kinds = [parse_head(name) for name in names]
        return [kind for kind in TABLE_ORDER if kind in kinds]

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"duplicate seeds: {seeds}")
        return seeds

    @model_validator(mode="after")
    def _arch_fits_dataset(self) -> "ExperimentConfig":
        if not self.heads:
            raise ValueError("at least one head is required")
        if self.hidden is None:
            self.hidden = list(DEFAULT_HIDDEN[self.dataset])
        for kind in self.heads:
            # width mismatches surface here, before any training
            self.arch_for(kind, input_dim=1)
        return self

    @property
    def num_ranks(self) -> int:
        return DATASET_RANKS[self.dataset]

    @property
    def mnist_dir(self) -> Path:
        return Path(self.data_dir) if self.data_dir else settings.mnist_dir

    def arch_for(self, kind: HeadKind, input_dim: int) -> ArchSpec:
        return ArchSpec(
            input_dim=input_dim,
            hidden=list(self.hidden or []),
            activation=self.activation,
            head=kind,
            num_ranks=self.num_ranks,
        )


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, output locations excluded"""
    payload = config.model_dump(mode="json", exclude={"out", "data_dir"})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _deep_merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping):
            merged[key] = _deep_merge(dict(merged.get(key) or {}), value)
        elif value is not None:
            merged[key] = value
    return merged


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a TOML experiment file into ExperimentConfig fields

    Top-level keys map directly; [train] feeds TrainConfig, [dataset] may hold
    name/n/test_fraction/mnist_* keys and [output] may hold out/save_checkpoints.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}") from e

    data = {k: v for k, v in raw.items() if k not in ("dataset", "output") or not isinstance(v, dict)}
    dataset = raw.get("dataset")
    if isinstance(dataset, dict):
        dataset = dict(dataset)
        if "name" in dataset:
            data["dataset"] = dataset.pop("name")
        data.update(dataset)
    output = raw.get("output")
    if isinstance(output, dict):
        data.update(output)
    return data


def build_config(config_file: Optional[Union[str, Path]] = None,
                 overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """File values, then CLI overrides (None means 'not given'), then validation"""
    data = load_config_file(config_file) if config_file else {}
    data = _deep_merge(data, overrides or {})
    return validate_config(ExperimentConfig, data)


@dataclass
class BenchmarkResult:
    config: ExperimentConfig
    reports: Dict[HeadKind, MetricsReport]
    per_seed: pd.DataFrame
    files: Dict[str, Path]


def per_seed_frame(dataset: str, rows: Mapping[HeadKind, List[SeedMetrics]]) -> pd.DataFrame:
    records = [
        {
            "DATASET": dataset,
            "ALGORITHM": get_head(kind).display_name,
            "SEED": row.seed,
            "WBCE": row.wbce,
            "MAE": row.mae,
            "EMD": row.emd,
            "ACCURACY": row.accuracy,
            "EPOCHS": row.epochs,
        }
        for kind in TABLE_ORDER if kind in rows
        for row in rows[kind]
    ]
    return pd.DataFrame.from_records(records, columns=PER_SEED_COLUMNS)


def summary_frame(reports: Mapping[HeadKind, MetricsReport]) -> pd.DataFrame:
    """Means under ALGORITHM, WBCE, MAE, EMD, ACCURACY followed by *_STD columns"""
    if not reports:
        raise DomainError("Cannot export an empty report")
    records = []
    for kind in TABLE_ORDER:
        if kind not in reports:
            continue
        report = reports[kind]
        record = {"ALGORITHM": report.head}
        record.update({name.upper(): report.mean[name] for name in METRIC_NAMES})
        record.update({f"{name.upper()}_STD": report.std[name] for name in METRIC_NAMES})
        records.append(record)
    columns = TABLE_COLUMNS + [f"{name.upper()}_STD" for name in METRIC_NAMES]
    return pd.DataFrame.from_records(records, columns=columns)


def fmt(mean: float, std: float, decimals: int = 4) -> str:
    return f"{mean:.{decimals}f} ± {std:.{decimals}f}"


def markdown_table(reports: Mapping[HeadKind, MetricsReport], dataset: str = "") -> str:
    if not reports:
        raise DomainError("Cannot export an empty report")
    first = next(iter(reports.values()))
    lines = [
        f"# {dataset or first.dataset} results in test set",
        "",
        f"K = {first.num_ranks}, seeds = {first.seeds}, mean ± sample std across seeds.",
        "",
        "| " + " | ".join(TABLE_COLUMNS) + " |",
        "| " + " | ".join(["---"] * len(TABLE_COLUMNS)) + " |",
    ]
    for kind in TABLE_ORDER:
        if kind not in reports:
            continue
        report = reports[kind]
        cells = [report.head] + [fmt(report.mean[name], report.std[name]) for name in METRIC_NAMES]
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "Conventions:", ""]
    lines += [f"- {key}: {value}" for key, value in sorted(first.conventions.items())]
    if any(report.single_seed_warning for report in reports.values()):
        lines += ["", "Warning: single seed, standard deviations are reported as 0."]
    return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise OSError(f"Failed to write {path}: {e}") from e
    return path


class Expectation(BaseModel):
    name: str
    passed: bool
    detail: str
    gating: bool = True


def _check(reports: Mapping[HeadKind, MetricsReport], needed: List[HeadKind], name: str,
           predicate: Callable[..., bool], describe: Callable[..., str], gating: bool = True) -> List[Expectation]:
    if not all(kind in reports for kind in needed):
        return []
    means = [reports[kind].mean for kind in needed]
    return [Expectation(name=name, passed=bool(predicate(*means)), detail=describe(*means), gating=gating)]


def evaluate_quadrants_expectations(reports: Mapping[HeadKind, MetricsReport]) -> List[Expectation]:
    """
    Directional checks on a quadrants run; checks whose heads are absent are skipped

    The categorical WBCE/EMD floors assume marginals read directly off the
    softmax. Here categorical marginals are rank-consistent tail sums, so
    those two are reported without gating.
    """
    C, W, R, G = HeadKind.CONDOR, HeadKind.CONDOR_WBCE, HeadKind.CORAL, HeadKind.CATEGORICAL
    checks: List[Expectation] = []
    checks += _check(reports, [C], "CONDOR MAE <= 0.05", lambda c: c["mae"] <= 0.05,
                     lambda c: f"MAE {c['mae']:.4f}")
    checks += _check(reports, [C], "CONDOR EMD <= 0.2", lambda c: c["emd"] <= 0.2,
                     lambda c: f"EMD {c['emd']:.4f}")
    checks += _check(reports, [W], "CONDOR-WBCE WBCE <= 0.25", lambda w: w["wbce"] <= 0.25,
                     lambda w: f"WBCE {w['wbce']:.4f}")
    checks += _check(reports, [R, W], "CORAL WBCE >= 2 x CONDOR-WBCE WBCE",
                     lambda r, w: r["wbce"] >= 2.0 * w["wbce"],
                     lambda r, w: f"{r['wbce']:.4f} vs {w['wbce']:.4f}")
    checks += _check(reports, [C], "CONDOR accuracy >= 0.95", lambda c: c["accuracy"] >= 0.95,
                     lambda c: f"accuracy {c['accuracy']:.4f}")
    checks += _check(reports, [G], "CATEGORICAL accuracy >= 0.95", lambda g: g["accuracy"] >= 0.95,
                     lambda g: f"accuracy {g['accuracy']:.4f}")
    checks += _check(reports, [R, C], "CORAL accuracy < CONDOR accuracy",
                     lambda r, c: r["accuracy"] < c["accuracy"],
                     lambda r, c: f"{r['accuracy']:.4f} vs {c['accuracy']:.4f}")
    checks += _check(reports, [G], "CATEGORICAL WBCE >= 1.0", lambda g: g["wbce"] >= 1.0,
                     lambda g: f"WBCE {g['wbce']:.4f}", gating=False)
    checks += _check(reports, [G], "CATEGORICAL EMD >= 0.8", lambda g: g["emd"] >= 0.8,
                     lambda g: f"EMD {g['emd']:.4f}", gating=False)
    return checks


def evaluate_mnist_expectations(reports: Mapping[HeadKind, MetricsReport]) -> List[Expectation]:
    """Orderings only; absolute values depend on the architecture and subset size"""
    C, R, G = HeadKind.CONDOR, HeadKind.CORAL, HeadKind.CATEGORICAL
    checks: List[Expectation] = []
    checks += _check(reports, [C, R], "CONDOR MAE < CORAL MAE", lambda c, r: c["mae"] < r["mae"],
                     lambda c, r: f"{c['mae']:.4f} vs {r['mae']:.4f}")
    checks += _check(reports, [C, G], "CONDOR EMD < CATEGORICAL EMD", lambda c, g: c["emd"] < g["emd"],
                     lambda c, g: f"{c['emd']:.4f} vs {g['emd']:.4f}")
    return checks


def evaluate_expectations(dataset: str, reports: Mapping[HeadKind, MetricsReport]) -> List[Expectation]:
    if dataset == "mnist":
        return evaluate_mnist_expectations(reports)
    return evaluate_quadrants_expectations(reports)


class BenchmarkService:
    """Trains and scores every head per seed and writes the result tables"""

    def __init__(self, datasets: Optional[DatasetService] = None):
        self.datasets = datasets or dataset_service

    def load_data(self, config: ExperimentConfig, seed: int) -> Tuple[Dataset, Dataset]:
        """Train/test pair for one seed"""
        if config.dataset == "quadrants":
            return self.datasets.quadrants(config.n, seed, config.test_fraction)
        if config.mnist_full:
            return self.datasets.mnist_split(seed, directory=config.mnist_dir)
        return self.datasets.mnist_split(seed, config.mnist_train, config.mnist_test, directory=config.mnist_dir)

    def run(self, config: ExperimentConfig, write: bool = True) -> BenchmarkResult:
        """
        Train and evaluate every head for every seed

        Per seed the data, split, weight init and mini-batch order all derive
        from that seed, so heads within a seed see identical data.
        """
        logger.info(f"Benchmark {config.dataset}: heads={[k.value for k in config.heads]} seeds={config.seeds}")
        rows: Dict[HeadKind, List[SeedMetrics]] = {kind: [] for kind in config.heads}
        digest = config_hash(config)

        for seed in config.seeds:
            train_ds, test_ds = self.load_data(config, seed)
            train_config = config.train.model_copy(update={"seed": seed})
            for kind in config.heads:
                net = init_network(config.arch_for(kind, train_ds.num_features), seed)
                model = train(net, train_ds, train_config)
                metrics = evaluate_head(kind, model.logits(test_ds.features), test_ds.ranks, config.num_ranks)
                rows[kind].append(SeedMetrics(seed=seed, epochs=model.history.epochs, **metrics))
                logger.info(
                    f"{get_head(kind).display_name} seed={seed}: "
                    + " ".join(f"{name}={metrics[name]:.4f}" for name in METRIC_NAMES)
                )
                if config.save_checkpoints and write:
                    save_checkpoint(net, config.out / "checkpoints" / f"{kind.value}_seed{seed}.npz", digest)

        reports = {
            kind: aggregate(rows[kind], head=get_head(kind).display_name,
                            dataset=config.dataset, num_ranks=config.num_ranks)
            for kind in config.heads
        }
        per_seed = per_seed_frame(config.dataset, rows)
        files = self.write_outputs(config, reports, per_seed) if write else {}
        return BenchmarkResult(config=config, reports=reports, per_seed=per_seed, files=files)

    def write_outputs(self, config: ExperimentConfig, reports: Mapping[HeadKind, MetricsReport],
                      per_seed: pd.DataFrame) -> Dict[str, Path]:
        out = Path(config.out)
        files = {
            "per_seed": _write_csv(per_seed, out / PER_SEED_FILE),
            "summary_csv": _write_csv(summary_frame(reports), out / SUMMARY_CSV_FILE),
            "summary_md": _write_text(out / SUMMARY_MD_FILE, markdown_table(reports, config.dataset)),
        }
        manifest = {
            "config": config.model_dump(mode="json", exclude={"out", "data_dir"}),
            "config_hash": config_hash(config),
            "seeds": config.seeds,
            "service_name": settings.SERVICE_NAME,
            "service_version": settings.SERVICE_VERSION,
            "numpy_version": np.__version__,
            "conventions": CONVENTIONS,
            "files": sorted(path.name for path in files.values()),
        }
        files["manifest"] = _write_text(out / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        logger.info(f"Results written to {out}")
        return files

    def load_per_seed(self, path: Union[str, Path]) -> Tuple[str, Dict[HeadKind, MetricsReport]]:
        """Re-aggregate a per_seed.csv into (dataset, reports)"""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Report not found: {path}")
        try:
            frame = pd.read_csv(path)
        except pd.errors.EmptyDataError:
            raise DomainError(f"Report {path} is empty") from None
        except pd.errors.ParserError as e:
            raise DataFormatError(f"Unreadable report: {e}", path=path) from e
        missing = [c for c in PER_SEED_COLUMNS if c not in frame.columns]
        if missing:
            raise DataFormatError(f"Report is missing columns {missing}", path=path)
        if frame.empty:
            raise DomainError(f"Report {path} has no rows")

        by_name = {definition.display_name: kind for kind, definition in HEADS.items()}
        dataset = str(frame["DATASET"].iloc[0])
        reports: Dict[HeadKind, MetricsReport] = {}
        for name, group in frame.groupby("ALGORITHM", sort=False):
            if name not in by_name:
                raise DataFormatError(f"Unknown algorithm {name!r} in report", path=path)
            rows = [
                SeedMetrics(seed=int(r.SEED), wbce=r.WBCE, mae=r.MAE, emd=r.EMD,
                            accuracy=r.ACCURACY, epochs=int(r.EPOCHS))
                for r in group.itertuples(index=False)
            ]
            reports[by_name[name]] = aggregate(rows, head=name, dataset=dataset,
                                               num_ranks=DATASET_RANKS.get(dataset, 2))
        return dataset, reports

    def export(self, input_path: Union[str, Path], fmt_name: str, out: Union[str, Path]) -> Path:
        """per_seed.csv -> summary table as csv or markdown, rows in table order"""
        if fmt_name not in ("csv", "markdown"):
            raise ConfigError(f"Unknown export format {fmt_name!r}; valid formats: csv, markdown")
        dataset, reports = self.load_per_seed(input_path)
        out = Path(out)
        if fmt_name == "csv":
            return _write_csv(summary_frame(reports), out)
        return _write_text(out, markdown_table(reports, dataset))

    def check(self, result: BenchmarkResult) -> List[Expectation]:
        """Directional expectations for a finished run"""
        return evaluate_expectations(result.config.dataset, result.reports)


# Global instance
benchmark_service = BenchmarkService()
