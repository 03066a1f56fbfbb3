#!/usr/bin/env python3
"""
End-to-end benchmark runs at desk scale

The MNIST run is skipped unless the IDX files are present
(python -m app fetch-mnist).
"""

import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))

from app.core.config import settings
from app.servies.benchmark_service import benchmark_service, build_config
from app.servies.dataset_service import dataset_service
from app.servies.head_service import HeadKind


def test_quadrants_condor_converges(tmp_path):
    config = build_config(overrides={"dataset": "quadrants", "heads": ["condor"], "seeds": [0], "out": tmp_path})
    result = benchmark_service.run(config, write=False)
    report = result.reports[HeadKind.CONDOR]
    assert report.per_seed["mae"][0] <= 0.05
    assert report.per_seed["accuracy"][0] >= 0.9


def test_quadrants_table(tmp_path):
    config = build_config(overrides={"heads": ["all"], "seeds": [0, 1, 2], "out": tmp_path})
    result = benchmark_service.run(config, write=False)
    failed = [f"{c.name}: {c.detail}" for c in benchmark_service.check(result) if c.gating and not c.passed]
    assert not failed, failed


@pytest.mark.skipif(not dataset_service.mnist_available(settings.mnist_dir), reason="MNIST IDX files not downloaded")
def test_mnist_orderings(tmp_path):
    config = build_config(overrides={"dataset": "mnist", "seeds": [0], "out": tmp_path})
    result = benchmark_service.run(config, write=False)
    checks = benchmark_service.check(result)
    failed = [f"{c.name}: {c.detail}" for c in checks if c.gating and not c.passed]
    assert not failed, failed
