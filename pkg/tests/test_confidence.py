import random

import pytest
from hypothesis import given, strategies as st

from refineqa.confidence import ConfidenceMetric, score
from refineqa.errors import EmptyTokenList, OutOfRangeProb

MIN = ConfidenceMetric.MIN_TOKEN_PROB
SEQ = ConfidenceMetric.SEQUENCE_PROB
IPPL = ConfidenceMetric.INVERSE_PERPLEXITY

prob_lists = st.lists(
    st.floats(min_value=1e-6, max_value=1.0, allow_nan=False, allow_infinity=False),
    min_size=1, max_size=64,
)


def test_min_token_prob_is_minimum():
    assert score([0.9, 0.5, 0.8], MIN).value == 0.5


def test_sequence_prob_is_product():
    assert score([0.9, 0.5, 0.8], SEQ).value == pytest.approx(0.36, abs=1e-12)


def test_inverse_perplexity_is_geometric_mean():
    expected = (0.9 * 0.5 * 0.8) ** (1.0 / 3.0)
    assert score([0.9, 0.5, 0.8], IPPL).value == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("metric", [MIN, SEQ, IPPL])
def test_single_token_degenerate_case(metric):
    assert score([0.7], metric).value == pytest.approx(0.7, abs=1e-15)
    assert score([0.7], metric).token_count == 1


def test_empty_list_rejected():
    with pytest.raises(EmptyTokenList):
        score([], MIN)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5, 2.0])
def test_out_of_range_rejected(bad):
    with pytest.raises(OutOfRangeProb):
        score([0.5, bad], MIN)


@given(prob_lists)
def test_ordering_chain(probs):
    seq = score(probs, SEQ).value
    low = score(probs, MIN).value
    geo = score(probs, IPPL).value
    assert seq <= low + 1e-12
    assert low <= 1.0
    assert seq <= geo + 1e-12
    assert geo <= max(probs) + 1e-12


@given(prob_lists, st.randoms(use_true_random=False))
def test_permutation_invariance(probs, rng):
    shuffled = list(probs)
    rng.shuffle(shuffled)
    for metric in (MIN, SEQ, IPPL):
        assert score(shuffled, metric).value == pytest.approx(
            score(probs, metric).value, rel=1e-9, abs=1e-12
        )


@given(prob_lists)
def test_appending_certain_token(probs):
    extended = list(probs) + [1.0]
    assert score(extended, MIN).value == score(probs, MIN).value
    assert score(extended, SEQ).value == pytest.approx(score(probs, SEQ).value, rel=1e-12)
    # Geometric mean weakly increases when a certain token joins.
    assert score(extended, IPPL).value >= score(probs, IPPL).value - 1e-12


def test_all_values_stay_in_unit_interval():
    rng = random.Random(11)
    for _ in range(200):
        probs = [rng.uniform(1e-4, 1.0) for _ in range(rng.randint(1, 30))]
        for metric in (MIN, SEQ, IPPL):
            value = score(probs, metric).value
            assert 0.0 < value <= 1.0


def test_underflow_surfaces_instead_of_clamping():
    with pytest.raises(OutOfRangeProb):
        score([1e-300] * 2, SEQ)
