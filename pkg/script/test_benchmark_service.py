#!/usr/bin/env python3
"""
Tests for experiment configuration, benchmark runs, exports and expectations
"""

import struct
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from app.core.errors import ConfigError, DomainError
from app.servies.benchmark_service import (
    MANIFEST_FILE,
    PER_SEED_COLUMNS,
    PER_SEED_FILE,
    SUMMARY_CSV_FILE,
    SUMMARY_MD_FILE,
    TABLE_COLUMNS,
    BenchmarkService,
    ExperimentConfig,
    benchmark_service,
    build_config,
    config_hash,
    evaluate_expectations,
)
from app.servies.dataset_service import DatasetService
from app.servies.head_service import TABLE_ORDER, HeadKind
from app.servies.metrics_service import aggregate


def small_config(out, **overrides):
    data = {
        "dataset": "quadrants",
        "heads": ["coral", "condor"],
        "seeds": [0, 1],
        "n": 200,
        "train": {"max_epochs": 3, "patience": 1},
        "out": out,
    }
    data.update(overrides)
    return build_config(overrides=data)


def report(head, **means):
    row = {"seed": 0, "wbce": 0.1, "mae": 0.01, "emd": 0.05, "accuracy": 0.99}
    row.update(means)
    return aggregate([dict(row), dict(row, seed=1)], head=head, dataset="quadrants", num_ranks=4)


def test_config_defaults():
    config = ExperimentConfig()
    assert config.heads == list(TABLE_ORDER)
    assert config.hidden == [10, 10]
    assert config.seeds == [0, 1, 2]
    assert config.num_ranks == 4
    assert ExperimentConfig(dataset="mnist").hidden == [128]


def test_heads_are_ordered_and_all_expands():
    assert build_config(overrides={"heads": ["categorical", "condor"]}).heads == [HeadKind.CONDOR, HeadKind.CATEGORICAL]
    assert build_config(overrides={"heads": ["all"]}).heads == list(TABLE_ORDER)


@pytest.mark.parametrize("overrides", [
    {"heads": ["ordinal"]},
    {"dataset": "cifar"},
    {"seeds": []},
    {"seeds": [1, 1]},
    {"test_fraction": 1.5},
    {"train": {"max_epochs": 5, "patience": 9}},
])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        build_config(overrides=overrides)


def test_unknown_head_lists_choices():
    with pytest.raises(ConfigError, match="valid heads"):
        build_config(overrides={"heads": ["ordinal"]})


def test_toml_file_and_overrides(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(
        'heads = ["condor"]\n'
        "seeds = [0, 1]\n"
        "[dataset]\n"
        'name = "quadrants"\n'
        "n = 300\n"
        "[train]\n"
        "max_epochs = 5\n"
        "patience = 2\n"
        "[output]\n"
        'out = "somewhere"\n'
    )
    config = build_config(path, {"train": {"max_epochs": 4, "lr": None}, "seeds": None})
    assert config.n == 300
    assert config.seeds == [0, 1]
    assert config.train.max_epochs == 4
    assert config.train.patience == 2
    assert config.train.lr == 0.001
    assert config.out == Path("somewhere")


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seeds = [0,\n")
    with pytest.raises(ConfigError):
        build_config(bad)


def test_config_hash_ignores_output_location():
    a = build_config(overrides={"out": "a"})
    assert config_hash(a) == config_hash(build_config(overrides={"out": "b"}))
    assert config_hash(a) != config_hash(build_config(overrides={"out": "a", "seeds": [0]}))


def test_run_writes_tables(tmp_path):
    result = benchmark_service.run(small_config(tmp_path / "run"))
    assert list(result.reports) == [HeadKind.CONDOR, HeadKind.CORAL]
    assert list(result.per_seed.columns) == PER_SEED_COLUMNS
    assert list(result.per_seed["ALGORITHM"]) == ["CONDOR", "CONDOR", "CORAL", "CORAL"]
    assert all(1 <= epochs <= 3 for epochs in result.per_seed["EPOCHS"])
    for name in (PER_SEED_FILE, SUMMARY_CSV_FILE, SUMMARY_MD_FILE, MANIFEST_FILE):
        assert (tmp_path / "run" / name).exists()
    summary = pd.read_csv(tmp_path / "run" / SUMMARY_CSV_FILE)
    assert list(summary.columns[:5]) == TABLE_COLUMNS
    assert "| ALGORITHM | WBCE | MAE | EMD | ACCURACY |" in (tmp_path / "run" / SUMMARY_MD_FILE).read_text()


def test_run_is_reproducible(tmp_path):
    benchmark_service.run(small_config(tmp_path / "a"))
    benchmark_service.run(small_config(tmp_path / "b"))
    for name in (PER_SEED_FILE, SUMMARY_CSV_FILE, SUMMARY_MD_FILE, MANIFEST_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_saves_checkpoints(tmp_path):
    benchmark_service.run(small_config(tmp_path / "run", heads=["condor"], seeds=[0], save_checkpoints=True))
    assert (tmp_path / "run" / "checkpoints" / "condor_seed0.npz").exists()


def test_single_seed_warning_in_markdown(tmp_path):
    benchmark_service.run(small_config(tmp_path / "run", seeds=[3]))
    assert "single seed" in (tmp_path / "run" / SUMMARY_MD_FILE).read_text()


def test_export_formats(tmp_path):
    benchmark_service.run(small_config(tmp_path / "run"))
    per_seed = tmp_path / "run" / PER_SEED_FILE
    dataset, reports = benchmark_service.load_per_seed(per_seed)
    assert dataset == "quadrants"
    assert reports[HeadKind.CONDOR].seeds == [0, 1]

    markdown = benchmark_service.export(per_seed, "markdown", tmp_path / "table.md").read_text()
    assert markdown.index("| CONDOR |") < markdown.index("| CORAL |")
    table = pd.read_csv(benchmark_service.export(per_seed, "csv", tmp_path / "table.csv"))
    assert list(table["ALGORITHM"]) == ["CONDOR", "CORAL"]
    with pytest.raises(ConfigError):
        benchmark_service.export(per_seed, "html", tmp_path / "table.html")


def test_export_of_empty_report(tmp_path):
    empty = tmp_path / "per_seed.csv"
    empty.write_text(",".join(PER_SEED_COLUMNS) + "\n")
    with pytest.raises(DomainError):
        benchmark_service.export(empty, "markdown", tmp_path / "table.md")
    with pytest.raises(FileNotFoundError):
        benchmark_service.export(tmp_path / "missing.csv", "csv", tmp_path / "table.csv")


def test_quadrants_expectations():
    reports = {
        HeadKind.CONDOR: report("CONDOR"),
        HeadKind.CONDOR_WBCE: report("CONDOR-WBCE", wbce=0.1),
        HeadKind.CORAL: report("CORAL", wbce=0.5, accuracy=0.8),
        HeadKind.CATEGORICAL: report("CATEGORICAL", wbce=0.3, emd=0.1, accuracy=0.97),
    }
    checks = evaluate_expectations("quadrants", reports)
    assert all(check.passed for check in checks if check.gating)
    assert {check.name for check in checks if not check.gating} == {"CATEGORICAL WBCE >= 1.0", "CATEGORICAL EMD >= 0.8"}

    reports[HeadKind.CORAL] = report("CORAL", wbce=0.15, accuracy=0.995)
    failed = {check.name for check in evaluate_expectations("quadrants", reports) if not check.passed}
    assert "CORAL WBCE >= 2 x CONDOR-WBCE WBCE" in failed
    assert "CORAL accuracy < CONDOR accuracy" in failed


def test_expectations_skip_absent_heads():
    checks = evaluate_expectations("quadrants", {HeadKind.CONDOR: report("CONDOR")})
    assert {check.name for check in checks} == {"CONDOR MAE <= 0.05", "CONDOR EMD <= 0.2", "CONDOR accuracy >= 0.95"}


def test_mnist_expectations():
    reports = {
        HeadKind.CONDOR: report("CONDOR", mae=0.1, emd=0.2),
        HeadKind.CORAL: report("CORAL", mae=0.3),
        HeadKind.CATEGORICAL: report("CATEGORICAL", emd=0.4),
    }
    checks = evaluate_expectations("mnist", reports)
    assert len(checks) == 2
    assert all(check.passed for check in checks)


def write_fake_mnist(directory, train=20, test=10):
    rng = np.random.default_rng(0)
    for prefix, count in (("train", train), ("t10k", test)):
        pixels = rng.integers(0, 256, size=(count, 2, 2), dtype=np.uint8)
        labels = bytes(i % 10 for i in range(count))
        (directory / f"{prefix}-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, count, 2, 2) + pixels.tobytes())
        (directory / f"{prefix}-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, count) + labels)


def test_mnist_run_parses_each_part_once(tmp_path):
    write_fake_mnist(tmp_path)
    datasets = DatasetService(mnist_dir=tmp_path)
    service = BenchmarkService(datasets)
    config = build_config(overrides={
        "dataset": "mnist", "heads": ["condor"], "seeds": [0, 1], "hidden": [4],
        "mnist_train": 12, "mnist_test": 6, "data_dir": tmp_path,
        "train": {"max_epochs": 2, "patience": 1}, "out": tmp_path / "out",
    })
    train, test = service.load_data(config, seed=0)
    assert (train.size, test.size) == (12, 6)
    assert train.num_ranks == 10

    result = service.run(config, write=False)
    assert result.reports[HeadKind.CONDOR].seeds == [0, 1]
    assert datasets.mnist("train", tmp_path) is datasets.mnist("train", tmp_path)
    full_train, full_test = service.load_data(config.model_copy(update={"mnist_full": True}), seed=0)
    assert (full_train.size, full_test.size) == (20, 10)


def test_check_uses_the_run_dataset(tmp_path):
    result = benchmark_service.run(small_config(tmp_path / "run", heads=["condor"], seeds=[0]), write=False)
    names = {check.name for check in benchmark_service.check(result)}
    assert names == {"CONDOR MAE <= 0.05", "CONDOR EMD <= 0.2", "CONDOR accuracy >= 0.95"}
