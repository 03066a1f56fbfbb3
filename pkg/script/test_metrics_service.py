#!/usr/bin/env python3
"""
Tests for the evaluation metrics and their aggregation across seeds
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from app.core.errors import DomainError
from app.servies.encoding_service import encode_batch
from app.servies.metrics_service import (
    accuracy,
    aggregate,
    emd,
    emd_bruteforce,
    evaluate_head,
    mae_rank,
    wbce_metric,
)


def test_mae_rank():
    assert mae_rank([1, 2, 3], [1, 2, 3]) == 0.0
    assert mae_rank([2, 3, 4], [1, 2, 3]) == 1.0
    assert mae_rank([1, 4], [2, 1]) == 2.0
    with pytest.raises(DomainError):
        mae_rank([1, 2], [1])


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 1], [2, 2]) == 0.0
    assert accuracy([1, 2, 3, 4], [1, 2, 1, 1]) == 0.5
    with pytest.raises(DomainError):
        accuracy([1], [1, 2])


def test_emd_examples():
    assert emd([[1.0, 0.0]], [[1, 0]]) == 0.0
    assert emd([0.9, 0.6], [1, 1]) == pytest.approx(0.5)
    # point mass on rank 2, truth rank 3
    assert emd([1.0, 0.0], [1, 1]) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        emd([0.5, 0.5], [1, 0, 0])


def test_emd_matches_cdf_distance():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        K = int(rng.integers(2, 9))
        p = np.sort(rng.uniform(size=K - 1))[::-1]
        enc = encode_batch([int(rng.integers(1, K + 1))], K)[0]
        assert abs(emd(p, enc) - emd_bruteforce(p, enc)) <= 1e-10


def test_wbce_examples():
    assert wbce_metric([0.5], [1]) == pytest.approx(np.log(2.0))
    assert wbce_metric([1.0, 1.0, 0.0], [1, 1, 0]) == pytest.approx(0.0, abs=1e-10)
    assert wbce_metric([0.8, 0.24], [1, 0]) == pytest.approx(-(np.log(0.8) + np.log(0.76)))


def test_metric_bounds():
    rng = np.random.default_rng(1)
    K = 6
    p = np.sort(rng.uniform(size=(200, K - 1)), axis=1)[:, ::-1]
    ranks = rng.integers(1, K + 1, size=200)
    enc = encode_batch(ranks, K)
    assert emd(p, enc) <= K - 1
    assert mae_rank(rng.integers(1, K + 1, size=200), ranks) <= K - 1
    perm = rng.permutation(200)
    assert emd(p[perm], enc[perm]) == pytest.approx(emd(p, enc))
    assert wbce_metric(p[perm], enc[perm]) == pytest.approx(wbce_metric(p, enc))


def test_evaluate_head_on_confident_logits():
    ranks = np.array([1, 2, 3, 4])
    enc = encode_batch(ranks, 4)
    logits = np.where(enc > 0, 30.0, -30.0)
    metrics = evaluate_head("condor", logits, ranks, 4)
    assert metrics["mae"] == 0.0
    assert metrics["accuracy"] == 1.0
    assert metrics["emd"] < 1e-9
    assert metrics["wbce"] < 1e-9


def test_aggregate_examples():
    def rows(values):
        return [{"seed": i, "wbce": v, "mae": v, "emd": v, "accuracy": v} for i, v in enumerate(values)]

    report = aggregate(rows([0.1, 0.1, 0.1]), head="CONDOR", dataset="quadrants", num_ranks=4)
    assert report.mean["mae"] == pytest.approx(0.1)
    assert report.std["mae"] == pytest.approx(0.0, abs=1e-12)
    assert report.seeds == [0, 1, 2]

    report = aggregate(rows([0.0, 1.0]))
    assert report.mean["emd"] == pytest.approx(0.5)
    assert report.std["emd"] == pytest.approx(0.7071, abs=1e-4)
    assert not report.single_seed_warning

    report = aggregate(rows([0.3]))
    assert report.std["wbce"] == 0.0
    assert report.single_seed_warning

    with pytest.raises(DomainError):
        aggregate([])
