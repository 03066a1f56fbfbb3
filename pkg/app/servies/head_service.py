"""
Head Service
The four output heads compared in the benchmarks. They share the upstream
network and differ only in final layer and loss.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from app.core.errors import ConfigError
from app.servies.baseline_service import (
    categorical_forward,
    categorical_marginals,
    categorical_predict,
    cce_loss,
    coral_wbce_loss,
)
from app.servies.condor_service import (
    LossResult,
    condor_ml_loss,
    condor_wbce_loss,
    marginals_from_logits,
    sigmoid,
)
from app.servies.encoding_service import encode_batch, rank_from_marginals


class HeadKind(str, Enum):
    CONDOR = "condor"
    CONDOR_WBCE = "condor-wbce"
    CORAL = "coral"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class HeadDefinition:
    kind: HeadKind
    display_name: str
    layer: str  # "dense" or "coral"
    ordinal: bool
    loss: Callable[[np.ndarray, np.ndarray, int, Optional[np.ndarray], str], LossResult]
    marginals: Callable[[np.ndarray], np.ndarray]
    predict: Callable[[np.ndarray], np.ndarray]

    def output_width(self, num_ranks: int) -> int:
        return num_ranks - 1 if self.ordinal else num_ranks


def _condor_loss(logits, ranks, num_ranks, weights=None, reduction="mean"):
    return condor_ml_loss(logits, encode_batch(ranks, num_ranks), reduction=reduction)


def _condor_wbce_loss(logits, ranks, num_ranks, weights=None, reduction="mean"):
    return condor_wbce_loss(logits, encode_batch(ranks, num_ranks), weights, reduction=reduction)


def _coral_loss(logits, ranks, num_ranks, weights=None, reduction="mean"):
    return coral_wbce_loss(logits, encode_batch(ranks, num_ranks), weights, reduction=reduction)


def _categorical_loss(logits, ranks, num_ranks, weights=None, reduction="mean"):
    return cce_loss(logits, ranks, reduction=reduction)


def _coral_marginals(logits: np.ndarray) -> np.ndarray:
    return sigmoid(logits)


def _categorical_marginals(logits: np.ndarray) -> np.ndarray:
    return categorical_marginals(categorical_forward(logits))


def _ordinal_predict(marginals: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    def predict(logits: np.ndarray) -> np.ndarray:
        return np.atleast_1d(rank_from_marginals(marginals(logits)))
    return predict


def _categorical_predict(logits: np.ndarray) -> np.ndarray:
    return np.atleast_1d(categorical_predict(categorical_forward(logits)))


HEADS: Dict[HeadKind, HeadDefinition] = {
    HeadKind.CONDOR: HeadDefinition(
        HeadKind.CONDOR, "CONDOR", "dense", True,
        _condor_loss, marginals_from_logits, _ordinal_predict(marginals_from_logits),
    ),
    HeadKind.CONDOR_WBCE: HeadDefinition(
        HeadKind.CONDOR_WBCE, "CONDOR-WBCE", "dense", True,
        _condor_wbce_loss, marginals_from_logits, _ordinal_predict(marginals_from_logits),
    ),
    HeadKind.CORAL: HeadDefinition(
        HeadKind.CORAL, "CORAL", "coral", True,
        _coral_loss, _coral_marginals, _ordinal_predict(_coral_marginals),
    ),
    HeadKind.CATEGORICAL: HeadDefinition(
        HeadKind.CATEGORICAL, "CATEGORICAL", "dense", False,
        _categorical_loss, _categorical_marginals, _categorical_predict,
    ),
}

# Row order of the result tables
TABLE_ORDER: List[HeadKind] = [HeadKind.CONDOR, HeadKind.CONDOR_WBCE, HeadKind.CORAL, HeadKind.CATEGORICAL]


def parse_head(name: Union[str, HeadKind]) -> HeadKind:
    try:
        return HeadKind(name)
    except ValueError:
        valid = ", ".join(kind.value for kind in HeadKind)
        raise ConfigError(f"Unknown head {name!r}; valid heads: {valid}") from None


def get_head(kind: Union[str, HeadKind]) -> HeadDefinition:
    return HEADS[parse_head(kind)]


def head_loss(kind: Union[str, HeadKind], logits: np.ndarray, ranks: np.ndarray, num_ranks: int,
              weights: Optional[np.ndarray] = None, reduction: str = "mean") -> LossResult:
    """Training loss of a head and its gradient w.r.t. the head logits"""
    return get_head(kind).loss(logits, ranks, num_ranks, weights, reduction)


def head_marginals(kind: Union[str, HeadKind], logits: np.ndarray) -> np.ndarray:
    return get_head(kind).marginals(logits)


def head_predict(kind: Union[str, HeadKind], logits: np.ndarray) -> np.ndarray:
    """Threshold-count rank for ordinal heads, argmax for the categorical head"""
    return get_head(kind).predict(logits)
