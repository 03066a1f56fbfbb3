"""
Baseline Heads Service
CORAL (shared weights, per-threshold biases) and categorical softmax heads,
their losses, and the CORAL rank-consistency checker
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from app.core.errors import DomainError, NumericError
from app.servies.condor_service import (
    LOG_MIN,
    LOG_MAX,
    LossResult,
    as_logit_batch,
    reduce_loss,
    importance_weights,
    log_sigmoid,
    sigmoid,
)
from app.servies.encoding_service import as_rank_indices

logger = logging.getLogger("condor-ordinal.baseline")


@dataclass(frozen=True)
class CoralConsistency:
    """Outcome of coral_consistency_check"""
    consistent: bool
    witness: Optional[int] = None  # first 1-based k with b_k > b_{k-1}

    def __bool__(self) -> bool:
        return self.consistent


def coral_logits(a: Union[float, np.ndarray], biases: Sequence[float]) -> np.ndarray:
    """a(x) + b_k for every example and threshold"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(biases, dtype=np.float64).reshape(-1)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("Non-finite CORAL score or bias")
    return a[..., None] + b


def coral_forward(a: Union[float, np.ndarray], biases: Sequence[float]) -> np.ndarray:
    """p_k = sigma(a + b_k); monotone only when the biases are non-increasing"""
    return sigmoid(coral_logits(a, biases))


def coral_consistency_check(biases: Sequence[float]) -> CoralConsistency:
    """Consistent iff b_1 >= b_2 >= ... ; ties count as consistent"""
    b = np.asarray(biases, dtype=np.float64).reshape(-1)
    rises = np.flatnonzero(np.diff(b) > 0)
    if rises.size == 0:
        return CoralConsistency(consistent=True)
    # diff index i compares b_{i+1} with b_{i+2} in 1-based terms
    witness = int(rises[0]) + 2
    logger.debug("CORAL biases rise at k=%d: %s", witness, b.tolist())
    return CoralConsistency(consistent=False, witness=witness)


def coral_implied_conditionals(a: Union[float, np.ndarray], biases: Sequence[float]) -> np.ndarray:
    """
    CORAL marginals rewritten as conditionals: q_1 = p_1, q_k = p_k / p_{k-1}

    q_k = (e^a + e^{-b_{k-1}}) / (e^a + e^{-b_k}), which exceeds 1 exactly
    when b_k > b_{k-1}. Computed in log space.
    """
    log_p = log_sigmoid(coral_logits(a, biases))
    log_q = np.concatenate([log_p[..., :1], np.diff(log_p, axis=-1)], axis=-1)
    return np.exp(log_q)


def coral_wbce_loss(logits: np.ndarray, enc: np.ndarray, weights: Optional[np.ndarray] = None,
                    reduction: str = "mean") -> LossResult:
    """
    WBCE on CORAL marginals p_k = sigma(logits_k), logits_k = a(x) + b_k

    Gradient is returned w.r.t. the per-threshold logits:
    lambda_k (sigma(logits_k) - y^(k)). The CORAL layer folds it into the
    shared score (row sum) and the biases (column sum).
    """
    z, y, single = as_logit_batch(logits, enc)
    if np.any(y < 0) or np.any(y > 1):
        raise DomainError("WBCE targets must lie in [0, 1]")
    lam = importance_weights(z.shape[1], weights)
    log_p = np.clip(log_sigmoid(z), LOG_MIN, LOG_MAX)
    log_1mp = np.clip(log_sigmoid(-z), LOG_MIN, LOG_MAX)
    per_example = -np.sum(lam * (y * log_p + (1.0 - y) * log_1mp), axis=1)
    grad = lam * (sigmoid(z) - y)
    return reduce_loss(per_example, grad, reduction, single)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def categorical_forward(logits: np.ndarray) -> np.ndarray:
    """Softmax over the K class logits"""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("Non-finite logits passed to the categorical head")
    return np.exp(log_softmax(logits))


def cce_loss(logits: np.ndarray, true_index: Union[int, np.ndarray], reduction: str = "mean") -> LossResult:
    """
    Categorical cross-entropy -ln probs[true_index] in log-softmax form

    Args:
        logits: (K,) or (N, K)
        true_index: 1-based rank index (scalar or (N,))

    Returns:
        (loss, gradient w.r.t. logits = probs - onehot)
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    if not np.all(np.isfinite(logits)):
        raise NumericError("Non-finite logits passed to the categorical loss")
    index = as_rank_indices(true_index)
    num_classes = logits.shape[1]
    if index.shape[0] != logits.shape[0]:
        raise DomainError(f"Got {index.shape[0]} labels for {logits.shape[0]} logit rows")
    if np.any(index < 1) or np.any(index > num_classes):
        raise DomainError(f"Rank indices must lie in [1, {num_classes}]")

    log_probs = log_softmax(logits)
    rows = np.arange(logits.shape[0])
    log_true = log_probs[rows, index - 1]
    per_example = -np.maximum(log_true, LOG_MIN)
    grad = np.exp(log_probs)
    grad[rows, index - 1] -= 1.0
    # clamped rows have a constant loss
    grad[log_true < LOG_MIN] = 0.0
    return reduce_loss(per_example, grad, reduction, single)


def categorical_marginals(probs: np.ndarray) -> np.ndarray:
    """p_k = sum_{j > k} probs[j]; rank consistent by construction"""
    probs = np.asarray(probs, dtype=np.float64)
    tails = np.cumsum(probs[..., ::-1], axis=-1)[..., ::-1]
    return np.clip(tails[..., 1:], 0.0, 1.0)


def categorical_predict(probs: np.ndarray) -> Union[int, np.ndarray]:
    """Argmax class as a 1-based rank index"""
    probs = np.asarray(probs)
    index = 1 + np.argmax(probs, axis=-1)
    return int(index) if probs.ndim == 1 else index.astype(np.int64)
