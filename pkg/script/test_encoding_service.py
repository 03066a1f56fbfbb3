#!/usr/bin/env python3
"""
Tests for rank label <-> extended binary encoding conversions
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the repository root to Python path
sys.path.append(str(Path(__file__).parent.parent))

from app.core.errors import ConsistencyError, DomainError
from app.servies.encoding_service import (
    LabelAlphabet,
    as_rank_indices,
    decode,
    decode_batch,
    encode,
    encode_batch,
    is_monotone,
    rank_distribution,
    rank_expected,
    rank_from_marginals,
    rank_mode,
)


def test_alphabet_lookup():
    alphabet = LabelAlphabet(("bad", "ok", "good", "best"))
    assert alphabet.K == 4
    assert alphabet.index_of("good") == 3
    assert alphabet.name_of(1) == "bad"
    with pytest.raises(DomainError):
        alphabet.index_of("great")


def test_alphabet_rejects_degenerate_sets():
    with pytest.raises(DomainError):
        LabelAlphabet(("only",))
    with pytest.raises(DomainError):
        LabelAlphabet(("a", "b", "a"))


def test_encode_examples():
    alphabet = LabelAlphabet.from_count(5)
    np.testing.assert_array_equal(encode(3, alphabet), [1, 1, 0, 0])
    np.testing.assert_array_equal(encode(1, alphabet), [0, 0, 0, 0])
    np.testing.assert_array_equal(encode(5, alphabet), [1, 1, 1, 1])
    with pytest.raises(DomainError):
        encode(6, alphabet)
    with pytest.raises(DomainError):
        encode(0, alphabet)


def test_decode_inverts_encode():
    alphabet = LabelAlphabet.from_count(7)
    for rank in range(1, 8):
        assert decode(encode(rank, alphabet)) == rank


def test_decode_rejects_bad_encodings():
    with pytest.raises(ConsistencyError):
        decode([1, 0, 1])
    with pytest.raises(DomainError):
        decode([2, 0])
    with pytest.raises(DomainError):
        decode([[1, 0]])


def test_batch_encoding():
    enc = encode_batch([1, 3, 2], 3)
    np.testing.assert_array_equal(enc, [[0, 0], [1, 1], [1, 0]])
    np.testing.assert_array_equal(decode_batch(enc), [1, 3, 2])
    with pytest.raises(DomainError):
        encode_batch([4], 3)
    with pytest.raises(ConsistencyError):
        decode_batch(np.array([[0, 1]]))
    with pytest.raises(DomainError):
        decode_batch([[2, 0], [1, 0]])
    with pytest.raises(DomainError):
        decode_batch([[0.5, 0.0]])



def test_fractional_ranks_are_rejected():
    np.testing.assert_array_equal(as_rank_indices([1.0, 2.0]), [1, 2])
    assert as_rank_indices(np.array([3], dtype=np.uint8)).dtype == np.int64
    with pytest.raises(DomainError):
        encode_batch([2.9], 4)
    with pytest.raises(DomainError):
        encode(2.5, LabelAlphabet.from_count(4))
    with pytest.raises(DomainError):
        as_rank_indices([1.0, np.nan])
    with pytest.raises(DomainError):
        as_rank_indices(["2"])

def test_rank_from_marginals_threshold_is_strict():
    assert rank_from_marginals([0.9, 0.6, 0.2]) == 3
    assert rank_from_marginals([0.5, 0.5]) == 1
    np.testing.assert_array_equal(
        rank_from_marginals(np.array([[0.9, 0.6], [0.1, 0.0]])), [3, 1]
    )


def test_rank_distribution():
    np.testing.assert_allclose(rank_distribution([0.9, 0.6]), [0.1, 0.3, 0.6])
    pmf = rank_distribution(np.array([[1.0, 1.0], [0.0, 0.0]]))
    np.testing.assert_allclose(pmf, [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    with pytest.raises(ConsistencyError):
        rank_distribution([0.2, 0.7])
    with pytest.raises(DomainError):
        rank_distribution([1.2, 0.7])


def test_rank_distribution_sums_to_one():
    rng = np.random.default_rng(3)
    p = np.sort(rng.uniform(size=(50, 6)), axis=1)[:, ::-1]
    np.testing.assert_allclose(rank_distribution(p).sum(axis=1), 1.0)


def test_alternative_point_estimates():
    assert rank_mode([0.9, 0.6]) == 3
    assert rank_mode([0.4, 0.1]) == 1
    assert rank_expected([0.9, 0.6]) == 3
    assert rank_expected([0.3, 0.1]) == 1
    np.testing.assert_array_equal(rank_expected(np.array([[0.9, 0.6], [0.3, 0.1]])), [3, 1])


def test_is_monotone():
    assert is_monotone([1, 1, 0])
    assert is_monotone([0.5])
    assert not is_monotone([0, 1])
