"""
Metrics Service
WBCE, MAE, EMD and accuracy on a test set, and their mean +- std across seeds
"""

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator
from sklearn.metrics import accuracy_score, mean_absolute_error

from app.core.errors import DomainError
from app.servies.condor_service import PROB_CLIP, importance_weights
from app.servies.encoding_service import encode_batch, rank_distribution
from app.servies.head_service import HeadKind, get_head

logger = logging.getLogger("condor-ordinal.metrics")

METRIC_NAMES = ("wbce", "mae", "emd", "accuracy")

CONVENTIONS: Dict[str, str] = {
    "loss_reduction": "mean",
    "rank_estimate": "1 + count(p_k > 0.5); argmax for the categorical head",
    "emd": "L1 distance between rank CDFs, unit ground distance, one-hot truth",
    "wbce": f"lambda = 1, probabilities clamped to [{PROB_CLIP:g}, 1 - {PROB_CLIP:g}]",
    "categorical_marginals": "tail sums of the softmax",
    "std": "sample standard deviation (n - 1)",
}


def _paired_ranks(pred_ranks, true_ranks):
    pred = np.asarray(pred_ranks).reshape(-1)
    true = np.asarray(true_ranks).reshape(-1)
    if pred.shape != true.shape:
        raise DomainError(f"Length mismatch: {pred.shape[0]} predictions vs {true.shape[0]} labels")
    if pred.size == 0:
        raise DomainError("No examples to score")
    return pred, true


def _paired_marginals(p, enc):
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    y = np.atleast_2d(np.asarray(enc, dtype=np.float64))
    if p.shape != y.shape:
        raise DomainError(f"Marginals {p.shape} and encodings {y.shape} must have the same shape")
    if p.shape[0] == 0:
        raise DomainError("No examples to score")
    return p, y


def mae_rank(pred_ranks, true_ranks) -> float:
    """Mean |s_pred - s_true| with unit distance between ranks"""
    pred, true = _paired_ranks(pred_ranks, true_ranks)
    return float(mean_absolute_error(true, pred))


def accuracy(pred_ranks, true_ranks) -> float:
    pred, true = _paired_ranks(pred_ranks, true_ranks)
    return float(accuracy_score(true, pred))


def emd(p, enc) -> float:
    """Mean over examples of sum_k |p_k - y^(k)|"""
    p, y = _paired_marginals(p, enc)
    return float(np.mean(np.sum(np.abs(p - y), axis=1)))


def emd_from_distributions(pred_pmf, true_pmf) -> np.ndarray:
    """Per-example EMD between two rank pmfs: sum over k of |CDF difference|"""
    pred = np.atleast_2d(np.asarray(pred_pmf, dtype=np.float64))
    true = np.atleast_2d(np.asarray(true_pmf, dtype=np.float64))
    cdf_gap = np.cumsum(pred - true, axis=1)[:, :-1]
    return np.sum(np.abs(cdf_gap), axis=1)


def emd_bruteforce(p, enc) -> float:
    """EMD through the induced rank distributions; must agree with emd()"""
    p, y = _paired_marginals(p, enc)
    return float(np.mean(emd_from_distributions(rank_distribution(p), rank_distribution(y))))


def wbce_metric(p, enc, weights: Optional[np.ndarray] = None) -> float:
    """Mean over examples of sum_k lambda_k BCE(p_k, y^(k)) with clamped probabilities"""
    p, y = _paired_marginals(p, enc)
    lam = importance_weights(p.shape[1], weights)
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    per_example = -np.sum(lam * (y * np.log(p) + (1.0 - y) * np.log1p(-p)), axis=1)
    return float(np.mean(per_example))


def evaluate_head(kind: Union[str, HeadKind], logits: np.ndarray, ranks: np.ndarray,
                  num_ranks: int) -> Dict[str, float]:
    """All four test metrics for one head's logits"""
    head = get_head(kind)
    marginals = head.marginals(logits)
    predictions = head.predict(logits)
    enc = encode_batch(ranks, num_ranks)
    return {
        "wbce": wbce_metric(marginals, enc),
        "mae": mae_rank(predictions, ranks),
        "emd": emd(marginals, enc),
        "accuracy": accuracy(predictions, ranks),
    }


class SeedMetrics(BaseModel):
    seed: int
    wbce: float
    mae: float
    emd: float
    accuracy: float
    epochs: int = 0


class MetricsReport(BaseModel):
    head: str
    dataset: str
    num_ranks: int = Field(ge=2)
    seeds: List[int]
    per_seed: Dict[str, List[float]]
    mean: Dict[str, float]
    std: Dict[str, float]
    single_seed_warning: bool = False
    conventions: Dict[str, str] = Field(default_factory=lambda: dict(CONVENTIONS))

    @model_validator(mode="after")
    def _consistent(self) -> "MetricsReport":
        for name, values in self.per_seed.items():
            if len(values) != len(self.seeds):
                raise ValueError(f"{name}: {len(values)} values for {len(self.seeds)} seeds")
        if any(value < 0 for value in self.std.values()):
            raise ValueError("standard deviations must be >= 0")
        return self


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """(mean, sample std); std is 0 for a single value"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DomainError("Cannot aggregate an empty list")
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def aggregate(per_seed_reports: Sequence[Union[SeedMetrics, Mapping[str, float]]], head: str = "",
              dataset: str = "", num_ranks: int = 2) -> MetricsReport:
    """Mean and sample standard deviation of every metric across seeds"""
    if not per_seed_reports:
        raise DomainError("aggregate needs at least one per-seed report")
    rows = [r if isinstance(r, SeedMetrics) else SeedMetrics.model_validate(dict(r)) for r in per_seed_reports]

    per_seed = {name: [getattr(row, name) for row in rows] for name in METRIC_NAMES}
    mean, std = {}, {}
    for name, values in per_seed.items():
        mean[name], std[name] = mean_std(values)

    single = len(rows) == 1
    if single:
        logger.warning(f"{head or 'report'}: single seed, standard deviation reported as 0")
    return MetricsReport(
        head=head,
        dataset=dataset,
        num_ranks=num_ranks,
        seeds=[row.seed for row in rows],
        per_seed=per_seed,
        mean=mean,
        std=std,
        single_seed_warning=single,
    )
