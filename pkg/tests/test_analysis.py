import math

import numpy as np
import pytest

from refineqa.analysis import (
    CandidateView,
    RecordView,
    bootstrap_deltas,
    bootstrap_test,
    calibration,
    cost_report,
    grid_search,
    inflation_report,
    replay_select,
)
from refineqa.errors import IdMismatch, IncompleteRecord, TooFewRecords


def rv(instance_id, base, refined=(), correct=None, paths_explored=None,
       tokens=(100, 10), errored=False):
    """RecordView from (conf, correct) tuples."""
    if errored:
        return RecordView(instance_id=instance_id, correct=False, base=None, refined=(),
                          paths_explored=0, input_tokens=tokens[0], output_tokens=tokens[1],
                          errored=True)
    base_view = CandidateView(confidence=base[0], correct=base[1], path_index=0)
    refined_views = tuple(
        CandidateView(confidence=c, correct=ok, path_index=i + 1)
        for i, (c, ok) in enumerate(refined)
    )
    return RecordView(
        instance_id=instance_id,
        correct=base[1] if correct is None else correct,
        base=base_view,
        refined=refined_views,
        paths_explored=len(refined_views) if paths_explored is None else paths_explored,
        input_tokens=tokens[0],
        output_tokens=tokens[1],
    )


# Four planted record groups; see the per-threshold hand evaluations below.
PLANTED = [
    rv("a", base=(0.65, False), refined=[(0.75, True)]),
    rv("b", base=(0.72, True), refined=[(0.95, False)]),
    rv("c", base=(0.50, True), refined=[(0.55, False)]),
    rv("d", base=(0.55, False), refined=[(0.80, True)]),
]


# --- replay -------------------------------------------------------------------

def test_replay_tau1_zero_always_base():
    # Every base confidence is >= 0, so the skip always fires.
    base_accuracy = sum(1 for r in PLANTED if r.base.correct) / len(PLANTED)
    assert replay_select(PLANTED, tau1=0.0, tau2=0.1) == pytest.approx(base_accuracy)


def test_replay_tau2_one_never_accepts_refined():
    # Confidences live in (0, 1], so c_refined >= c_base + 1 is unreachable.
    base_accuracy = sum(1 for r in PLANTED if r.base.correct) / len(PLANTED)
    assert replay_select(PLANTED, tau1=1.0, tau2=1.0) == pytest.approx(base_accuracy)


@pytest.mark.parametrize("tau1,tau2,expected", [
    (0.7, 0.1, 1.00),   # a,b,c,d all resolve correctly
    (0.0, 0.0, 0.50),   # skip everywhere: b,c right
    (1.0, 0.0, 0.50),   # margin always met: a,d right
    (1.0, 0.3, 0.50),   # margin never met: b,c right
    (0.6, 0.1, 0.75),   # a skips (wrong), b skips (right), c rejects, d accepts
])
def test_replay_matches_hand_evaluation(tau1, tau2, expected):
    assert replay_select(PLANTED, tau1, tau2) == pytest.approx(expected)


def test_replay_incomplete_record():
    records = [rv("a", base=(0.3, True))]
    with pytest.raises(IncompleteRecord):
        replay_select(records, tau1=0.5, tau2=0.1)
    # Above the base confidence the skip fires and no refined data is needed.
    assert replay_select(records, tau1=0.2, tau2=0.1) == 1.0


def test_replay_counts_errored_records_incorrect():
    records = PLANTED + [rv("err", base=None, errored=True)]
    assert replay_select(records, 0.7, 0.1) == pytest.approx(4 / 5)


def test_replay_tie_breaks_to_lowest_path_index():
    record = rv("t", base=(0.2, False), refined=[(0.9, True), (0.9, False)])
    assert replay_select([record], tau1=0.5, tau2=0.0) == 1.0


def test_normalized_policy_compares_z_scores():
    records = [
        rv("r1", base=(0.5, False), refined=[(0.9, True)]),
        rv("r2", base=(0.6, True), refined=[(0.7, False)]),
    ]
    assert replay_select(records, tau1=1.0, tau2=0.0, policy="normalized") == 1.0
    assert replay_select(records, tau1=1.0, tau2=0.1, policy="threshold") == 0.5


def test_normalized_policy_degenerate_variance_keeps_base():
    records = [
        rv("r1", base=(0.5, True), refined=[(0.8, False)]),
        rv("r2", base=(0.5, True), refined=[(0.8, False)]),
    ]
    assert replay_select(records, tau1=1.0, tau2=0.0, policy="normalized") == 1.0


# --- grid search -----------------------------------------------------------------

def test_grid_covers_full_lattice():
    result = grid_search(PLANTED)
    assert len(result.grid) == 231  # 11 x 21
    tau1_values = sorted({t1 for t1, _, _ in result.grid})
    tau2_values = sorted({t2 for _, t2, _ in result.grid})
    assert tau1_values == [round(0.1 * i, 10) for i in range(11)]
    assert tau2_values == [round(-1.0 + 0.1 * i, 10) for i in range(21)]


def test_grid_custom_step():
    result = grid_search(PLANTED, tau1_step=0.5)
    assert len(result.grid) == 3 * 21


def test_grid_recovers_planted_peak():
    result = grid_search(PLANTED)
    assert result.best == (0.7, 0.1)


def test_grid_tie_breaks_to_smallest_thresholds():
    records = [rv("x", base=(0.5, True), refined=[(0.6, True)])]
    result = grid_search(records)
    assert result.best == (0.0, -1.0)


def test_grid_best_dominates_fixed_pair():
    for records in (PLANTED, [rv("x", base=(0.5, True), refined=[(0.6, False)])]):
        result = grid_search(records)
        best_accuracy = max(acc for _, _, acc in result.grid)
        assert best_accuracy >= replay_select(records, 0.7, 0.1)


# --- calibration ------------------------------------------------------------------

def test_calibration_one_record_per_bin():
    records = [rv(f"r{i}", base=(0.05 + 0.1 * i, i >= 5)) for i in range(10)]
    report = calibration(records, bins=10)
    assert [count for _, _, count in report.bins] == [1] * 10
    assert [acc for _, acc, _ in report.bins] == [0.0] * 5 + [1.0] * 5


def test_calibration_counts_partition_with_remainder_leading():
    records = [rv(f"r{i}", base=(0.01 + 0.004 * i, True)) for i in range(23)]
    report = calibration(records, bins=10)
    counts = [count for _, _, count in report.bins]
    assert counts == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]
    assert sum(counts) == 23


def test_calibration_sorted_by_confidence():
    records = [rv(f"r{i}", base=(conf, True))
               for i, conf in enumerate([0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.95])]
    report = calibration(records, bins=10)
    means = [conf for conf, _, _ in report.bins]
    assert means == sorted(means)


def test_calibration_strong_correlation_when_confidence_predicts():
    records = []
    for i in range(50):
        records.append(rv(f"lo{i}", base=(0.10 + 0.004 * i, False)))
        records.append(rv(f"hi{i}", base=(0.70 + 0.004 * i, True)))
    report = calibration(records)
    assert report.pearson_r > 0.9
    accuracies = [acc for _, acc, _ in report.bins]
    assert accuracies == sorted(accuracies)


def test_calibration_degenerate_is_nan_with_flag():
    records = [rv(f"r{i}", base=(0.5, True)) for i in range(10)]
    report = calibration(records)
    assert math.isnan(report.pearson_r)
    assert report.degenerate
    assert report.to_dict()["pearson_r"] is None


def test_calibration_too_few_records():
    with pytest.raises(TooFewRecords):
        calibration([rv("a", base=(0.5, True))] * 5, bins=10)


# --- inflation --------------------------------------------------------------------

def test_inflation_reproduces_published_magnitude():
    records = [rv(f"r{i}", base=(0.5, True), refined=[(0.61, True)]) for i in range(20)]
    report = inflation_report(records)
    assert report.delta == pytest.approx(0.11, abs=1e-12)


def test_inflation_zero_when_identical():
    records = [rv("r", base=(0.5, True), refined=[(0.5, True)])]
    assert inflation_report(records).delta == pytest.approx(0.0, abs=1e-15)


def test_inflation_mixed_set_matches_hand_arithmetic():
    records = [
        rv("a", base=(0.4, False), refined=[(0.5, False), (0.7, True)]),
        rv("b", base=(0.6, True), refined=[(0.65, False)]),
    ]
    report = inflation_report(records)
    assert report.mean_base_confidence == pytest.approx(0.5)
    assert report.mean_refined_confidence == pytest.approx((0.7 + 0.65) / 2)
    assert report.delta == pytest.approx((0.7 + 0.65) / 2 - 0.5)
    assert report.base_accuracy == pytest.approx(0.5)
    assert report.refined_accuracy == pytest.approx(0.5)


def test_inflation_requires_refined_candidates():
    with pytest.raises(IncompleteRecord):
        inflation_report([rv("a", base=(0.5, True))])


# --- bootstrap --------------------------------------------------------------------

def make_paired(correct_a, correct_b):
    a = [rv(f"i{j}", base=(0.5, bool(c)), correct=bool(c)) for j, c in enumerate(correct_a)]
    b = [rv(f"i{j}", base=(0.5, bool(c)), correct=bool(c)) for j, c in enumerate(correct_b)]
    return a, b


def test_bootstrap_identical_sets_give_p_one():
    a, b = make_paired([1, 0, 1, 1], [1, 0, 1, 1])
    result = bootstrap_test(a, b, b=500, seed=3)
    assert result.delta_orig == 0.0
    assert result.p_value == 1.0


def test_bootstrap_requires_positive_b():
    a, b = make_paired([1], [0])
    with pytest.raises(ValueError):
        bootstrap_test(a, b, b=0)


def test_bootstrap_id_mismatch():
    a, _ = make_paired([1, 0], [1, 0])
    b = [rv("other", base=(0.5, True), correct=True),
         rv("i0", base=(0.5, True), correct=True)]
    with pytest.raises(IdMismatch):
        bootstrap_test(a, b, b=10)


def test_bootstrap_deterministic_under_seed():
    a, b = make_paired([1, 1, 0, 1, 0], [1, 0, 0, 1, 1])
    first = bootstrap_test(a, b, b=2000, seed=7)
    second = bootstrap_test(a, b, b=2000, seed=7)
    assert first.p_value == second.p_value
    assert first.delta_orig == second.delta_orig


def test_bootstrap_p_monotone_in_delta_orig():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 2, size=30).astype(float)
    b = rng.integers(0, 2, size=30).astype(float)
    deltas = bootstrap_deltas(a, b, count=500, seed=11)
    thresholds = np.linspace(-1.0, 1.0, 21)
    p_values = [float(np.count_nonzero(deltas >= t)) / 500 for t in thresholds]
    assert all(p_values[i] >= p_values[i + 1] for i in range(len(p_values) - 1))


def test_bootstrap_zero_p_formats_as_less_than_floor():
    from refineqa.analysis import BootstrapResult

    assert BootstrapResult(b=10000, delta_orig=0.5, p_value=0.0, seed=0).formatted_p() == "<0.0001"
    assert BootstrapResult(b=1000, delta_orig=0.5, p_value=0.0, seed=0).formatted_p() == "<0.001"
    assert BootstrapResult(b=100, delta_orig=0.5, p_value=0.25, seed=0).formatted_p() == "0.2500"


# --- cost -------------------------------------------------------------------------

def test_cost_reproduces_skip_fraction_arithmetic():
    records = []
    for i in range(68):
        records.append(rv(f"s{i}", base=(0.9, True), paths_explored=0))
    for i in range(32):
        records.append(rv(f"e{i}", base=(0.3, True),
                          refined=[(0.5, True)] * 4, paths_explored=4))
    baseline = [rv(f"b{i}", base=(0.5, True), paths_explored=0) for i in range(100)]
    ledger = cost_report(records, baseline)
    assert ledger.avg_paths == pytest.approx(0.68 * 1 + 0.32 * (1 + 4), abs=1e-9)
    assert round(ledger.avg_paths, 1) == 2.3


def test_cost_normalization_weights_output_tokens_four_times():
    records = [rv("m", base=(0.5, True), tokens=(708, 84))]
    baseline = [rv("b", base=(0.5, True), tokens=(132, 13))]
    ledger = cost_report(records, baseline)
    assert ledger.normalized_cost == pytest.approx((708 + 4 * 84) / (132 + 4 * 13), abs=1e-12)
    assert round(ledger.normalized_cost, 1) == 5.7


def test_cost_against_itself_is_one():
    records = [rv("a", base=(0.5, True), tokens=(200, 40))]
    assert cost_report(records, records).normalized_cost == pytest.approx(1.0)


def test_cost_hand_summed_averages():
    records = [
        rv("a", base=(0.5, True), tokens=(100, 10), paths_explored=2),
        rv("b", base=(0.5, True), tokens=(300, 30), paths_explored=4),
    ]
    baseline = [rv("c", base=(0.5, True), tokens=(100, 10), paths_explored=0)]
    ledger = cost_report(records, baseline)
    assert ledger.avg_input_tokens == pytest.approx(200.0)
    assert ledger.avg_output_tokens == pytest.approx(20.0)
    assert ledger.avg_paths == pytest.approx(4.0)
    assert ledger.normalized_cost == pytest.approx((200 + 80) / (100 + 40))
