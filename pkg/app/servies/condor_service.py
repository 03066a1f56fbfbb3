"""
CONDOR Head Service
Conditional probabilities, Markov-chain marginals and the ML / WBCE losses
with analytic gradients w.r.t. the K-1 head logits
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

from app.core.errors import ConsistencyError, DomainError, NumericError
from app.servies.encoding_service import is_monotone

logger = logging.getLogger("condor-ordinal.condor")

# Probabilities entering a logarithm are clamped to [PROB_CLIP, 1 - PROB_CLIP]
PROB_CLIP = 1e-12
LOG_MIN = float(np.log(PROB_CLIP))
LOG_MAX = float(np.log1p(-PROB_CLIP))

REDUCTIONS = ("mean", "sum", "none")

LossResult = Tuple[Union[float, np.ndarray], np.ndarray]


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    """ln sigma(z) = -softplus(-z)"""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(z))


def log1mexp(a: np.ndarray) -> np.ndarray:
    """ln(1 - e^a) for a < 0 without cancellation"""
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > -np.log(2.0), np.log(-np.expm1(a)), np.log1p(-np.exp(a)))


def importance_weights(num_tasks: int, values: Optional[np.ndarray] = None) -> np.ndarray:
    """lambda_k, all ones unless given; every entry must be > 0"""
    if values is None:
        return np.ones(num_tasks)
    lam = np.asarray(values, dtype=np.float64).reshape(-1)
    if lam.shape[0] != num_tasks:
        raise DomainError(f"Expected {num_tasks} importance weights, got {lam.shape[0]}")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise DomainError("Importance weights must be finite and strictly positive")
    return lam


def conditionals_from_logits(z: np.ndarray) -> np.ndarray:
    """q_k = sigma(z_k), strictly inside (0, 1) for finite logits"""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("Non-finite logits passed to the CONDOR head")
    return sigmoid(z)


def marginals_from_conditionals(q: np.ndarray) -> np.ndarray:
    """p_k = prod_{k' <= k} q_k' (left fold along the last axis)"""
    return np.cumprod(np.asarray(q, dtype=np.float64), axis=-1)


def marginals_from_logits(z: np.ndarray) -> np.ndarray:
    return marginals_from_conditionals(conditionals_from_logits(z))


def as_logit_batch(z: np.ndarray, enc: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(enc, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z, y = z[None, :], y[None, :]
    if z.shape != y.shape:
        raise DomainError(f"Logits {z.shape} and encodings {y.shape} must have the same shape")
    if z.ndim != 2 or z.shape[1] < 1:
        raise DomainError(f"Expected an (N, K-1) logit matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("Non-finite logits passed to the loss")
    return z, y, single


def reduce_loss(per_example: np.ndarray, grad: np.ndarray, reduction: str, single: bool) -> LossResult:
    if reduction == "mean":
        n = per_example.shape[0]
        loss, grad = float(per_example.mean()), grad / n
    elif reduction == "sum":
        loss = float(per_example.sum())
    elif reduction == "none":
        loss = per_example
    else:
        raise DomainError(f"Invalid reduction {reduction!r}; expected one of {REDUCTIONS}")
    if single:
        grad = grad[0]
        if reduction == "none":
            loss = float(per_example[0])
    return loss, grad


def prepend_boundary(y: np.ndarray) -> np.ndarray:
    """y^(k-1) for k = 1..K-1, using the boundary y^(0) = 1"""
    return np.concatenate([np.ones((y.shape[0], 1)), y[:, :-1]], axis=1)


def condor_ml_loss(z: np.ndarray, enc: np.ndarray, reduction: str = "mean") -> LossResult:
    """
    Maximum-likelihood CONDOR loss

    loss_n = -sum_k y^(k-1) [ y^(k) ln q_k + (1 - y^(k)) ln(1 - q_k) ]
    d loss_n / d z_k = y^(k-1) (sigma(z_k) - y^(k))

    Args:
        z: logits, (K-1,) or (N, K-1)
        enc: extended binary encodings, same shape
        reduction: "mean" (training default), "sum" or "none"

    Returns:
        (loss, gradient w.r.t. z)
    """
    z, y, single = as_logit_batch(z, enc)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("The ML loss needs binary encodings")
    if not is_monotone(y):
        raise ConsistencyError("The ML loss needs rank-consistent encodings")

    y_prev = prepend_boundary(y)
    log_q = np.clip(log_sigmoid(z), LOG_MIN, LOG_MAX)
    log_1mq = np.clip(log_sigmoid(-z), LOG_MIN, LOG_MAX)
    per_example = -np.sum(y_prev * (y * log_q + (1.0 - y) * log_1mq), axis=1)
    grad = y_prev * (sigmoid(z) - y)
    return reduce_loss(per_example, grad, reduction, single)


def condor_wbce_loss(z: np.ndarray, enc: np.ndarray, weights: Optional[np.ndarray] = None,
                     reduction: str = "mean") -> LossResult:
    """
    Weighted binary cross-entropy over the marginals p_k = prod q_k'

    Targets may be soft (in [0, 1]). The product is accumulated in log space,
    ln(1 - p_k) goes through log1mexp, and the gradient flows back through the
    cumulative sum: d ln p_k / d z_j = sigma(-z_j) for j <= k.
    """
    z, y, single = as_logit_batch(z, enc)
    if np.any(y < 0) or np.any(y > 1):
        raise DomainError("WBCE targets must lie in [0, 1]")
    lam = importance_weights(z.shape[1], weights)

    log_p_raw = np.cumsum(log_sigmoid(z), axis=1)
    clamped = (log_p_raw < LOG_MIN) | (log_p_raw > LOG_MAX)
    log_p = np.clip(log_p_raw, LOG_MIN, LOG_MAX)
    log_1mp = log1mexp(log_p)

    per_example = -np.sum(lam * (y * log_p + (1.0 - y) * log_1mp), axis=1)

    # dL/d ln p_k, then back through the running sum of log-sigmoids
    d_log_p = -lam * (y - (1.0 - y) * np.exp(log_p - log_1mp))
    d_log_p[clamped] = 0.0
    tail_sums = np.cumsum(d_log_p[:, ::-1], axis=1)[:, ::-1]
    grad = tail_sums * sigmoid(-z)
    return reduce_loss(per_example, grad, reduction, single)


def target_conditionals(p_star: np.ndarray, eps: float) -> np.ndarray:
    """
    q*_k = (p*_k + eps) / (p*_{k-1} + 2 eps), p*_0 = 1

    Builds conditionals strictly inside (0, 1) whose Markov-chain product
    reproduces any rank-consistent target p* up to O(eps).
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    p_star = np.asarray(p_star, dtype=np.float64)
    if np.any(p_star < 0) or np.any(p_star > 1):
        raise DomainError("Target marginals must lie in [0, 1]")
    if not is_monotone(p_star):
        raise DomainError("Target marginals must be non-increasing (rank consistent)")
    ones = np.ones(p_star.shape[:-1] + (1,))
    previous = np.concatenate([ones, p_star[..., :-1]], axis=-1)
    return (p_star + eps) / (previous + 2.0 * eps)


def target_logits(p_star: np.ndarray, eps: float) -> np.ndarray:
    """Upstream logits a*_k = logit(q*_k) that realise target_conditionals"""
    q = target_conditionals(p_star, eps)
    return np.log(q) - np.log1p(-q)


def sequence_negative_log_likelihood(q: np.ndarray, enc: np.ndarray) -> float:
    """
    Chain-rule NLL of a label sequence, feature constant excluded

    -sum_n sum_k ln[ y q y_prev + (1 - y)(1 - q y_prev) ]
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    y = np.atleast_2d(np.asarray(enc, dtype=np.float64))
    if q.shape != y.shape:
        raise DomainError(f"Conditionals {q.shape} and encodings {y.shape} must have the same shape")
    y_prev = prepend_boundary(y)
    likelihood = y * q * y_prev + (1.0 - y) * (1.0 - q * y_prev)
    return float(-np.sum(np.log(likelihood)))
