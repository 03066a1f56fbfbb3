"""
Ordinal Encoding Service
Converts between rank labels, extended binary encodings and rank point estimates
"""

from dataclasses import dataclass
from typing import Any, Sequence, Tuple, Union

import numpy as np

from app.core.errors import ConsistencyError, DomainError

# Rank indices are 1-based ints; encodings and marginals are float/int arrays
# of length K-1 (one row per example for the batch variants).
RankLabel = int
BinaryEncoding = np.ndarray
MarginalProbs = np.ndarray

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class LabelAlphabet:
    """Ordered rank names r_1 < ... < r_K"""
    ranks: Tuple[Any, ...]

    def __post_init__(self):
        ranks = tuple(self.ranks)
        object.__setattr__(self, "ranks", ranks)
        if len(ranks) < 2:
            raise DomainError(f"An ordinal alphabet needs at least 2 ranks, got {len(ranks)}")
        if len(set(ranks)) != len(ranks):
            raise DomainError(f"Duplicate rank names in alphabet: {ranks}")

    @classmethod
    def from_count(cls, num_ranks: int) -> "LabelAlphabet":
        return cls(tuple(range(1, num_ranks + 1)))

    @property
    def K(self) -> int:
        return len(self.ranks)

    def index_of(self, rank: Any) -> RankLabel:
        try:
            return self.ranks.index(rank) + 1
        except ValueError:
            raise DomainError(f"Unknown rank {rank!r}; valid ranks: {list(self.ranks)}") from None

    def name_of(self, index: RankLabel) -> Any:
        _check_index(index, self.K)
        return self.ranks[index - 1]


def _check_index(index: int, num_ranks: int) -> None:
    if not float(index).is_integer():
        raise DomainError(f"Rank index {index} is not an integer")
    if not 1 <= int(index) <= num_ranks:
        raise DomainError(f"Rank index {index} outside [1, {num_ranks}]")


def as_rank_indices(values: ArrayLike) -> np.ndarray:
    """(N,) int64 rank indices; fractional or non-numeric labels are rejected, not truncated"""
    values = np.asarray(values).reshape(-1)
    if values.size == 0 or values.dtype.kind in "biu":
        return values.astype(np.int64)
    if values.dtype.kind != "f":
        raise DomainError(f"Rank labels must be integers, got dtype {values.dtype}")
    if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
        bad = values[~np.isfinite(values) | (values != np.round(values))]
        raise DomainError(f"Rank labels must be integers, got {bad[:5].tolist()}")
    return values.astype(np.int64)


def is_monotone(values: np.ndarray) -> bool:
    """True when every row is non-increasing along its last axis"""
    values = np.asarray(values)
    if values.shape[-1] < 2:
        return True
    return bool(np.all(np.diff(values, axis=-1) <= 0))


def encode(label: RankLabel, alphabet: LabelAlphabet) -> BinaryEncoding:
    """bits[k] = 1 iff label > k, k = 1..K-1"""
    _check_index(label, alphabet.K)
    return (int(label) > np.arange(1, alphabet.K)).astype(np.int8)


def encode_batch(ranks: ArrayLike, num_ranks: int) -> np.ndarray:
    """Vectorized encode: (N,) rank indices -> (N, K-1) bit matrix"""
    ranks = as_rank_indices(ranks)
    if ranks.size and (ranks.min() < 1 or ranks.max() > num_ranks):
        raise DomainError(f"Rank indices must lie in [1, {num_ranks}], got [{ranks.min()}, {ranks.max()}]")
    return (ranks[:, None] > np.arange(1, num_ranks)[None, :]).astype(np.int8)


def decode(enc: ArrayLike) -> RankLabel:
    """index = 1 + sum of bits; rejects non-monotone encodings"""
    bits = np.asarray(enc)
    if bits.ndim != 1:
        raise DomainError(f"decode expects a single encoding, got shape {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise DomainError(f"Encoding contains values other than 0/1: {bits.tolist()}")
    if not is_monotone(bits):
        raise ConsistencyError(f"Rank-inconsistent encoding {bits.tolist()}")
    return 1 + int(bits.sum())


def decode_batch(enc: np.ndarray) -> np.ndarray:
    bits = np.asarray(enc)
    if bits.ndim != 2:
        raise DomainError(f"decode_batch expects an (N, K-1) matrix, got shape {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        bad = np.flatnonzero(np.any((bits != 0) & (bits != 1), axis=1))
        raise DomainError(f"Encodings contain values other than 0/1 at rows {bad[:10].tolist()}")
    if not is_monotone(bits):
        bad = np.flatnonzero(np.any(np.diff(bits, axis=1) > 0, axis=1))
        raise ConsistencyError(f"Rank-inconsistent encodings at rows {bad[:10].tolist()}")
    return 1 + bits.sum(axis=1).astype(np.int64)


def rank_from_marginals(p: ArrayLike, threshold: float = 0.5) -> Union[RankLabel, np.ndarray]:
    """
    Rank point estimate 1 + |{k : p_k > threshold}|

    Works for a single vector (returns int) or an (N, K-1) matrix (returns an
    int array). Ties at the threshold do not count; monotonicity is not
    required so the same rule applies to every head.
    """
    p = np.asarray(p, dtype=np.float64)
    counts = 1 + np.sum(p > threshold, axis=-1)
    if p.ndim == 1:
        return int(counts)
    return counts.astype(np.int64)


def rank_distribution(p: ArrayLike) -> np.ndarray:
    """
    Induced pmf over the K ranks: out[s] = p_{s-1} - p_s with p_0 = 1, p_K = 0

    Accepts one marginal vector or a matrix of them (one per row).
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError("Marginal probabilities must lie in [0, 1]")
    if not is_monotone(p):
        raise ConsistencyError("Marginal probabilities are not rank consistent")
    ones = np.ones(p.shape[:-1] + (1,))
    zeros = np.zeros(p.shape[:-1] + (1,))
    padded = np.concatenate([ones, p, zeros], axis=-1)
    return padded[..., :-1] - padded[..., 1:]


def rank_mode(p: ArrayLike) -> Union[RankLabel, np.ndarray]:
    """Most probable rank under the induced pmf (ties -> lowest rank)"""
    pmf = rank_distribution(p)
    modes = 1 + np.argmax(pmf, axis=-1)
    return int(modes) if pmf.ndim == 1 else modes.astype(np.int64)


def rank_expected(p: ArrayLike) -> Union[RankLabel, np.ndarray]:
    """Expected rank 1 + sum(p_k), rounded half-up to the nearest index"""
    p = np.asarray(p, dtype=np.float64)
    expected = np.floor(1.0 + p.sum(axis=-1) + 0.5)
    return int(expected) if p.ndim == 1 else expected.astype(np.int64)
