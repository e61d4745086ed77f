from itertools import product

import numpy as np
import pytest
from scipy import stats as st

from chameleon.core.errors import ContractError, UndefinedTestError
from chameleon.core.stats import (
    aggregate, cliques, holm_correct, improvement_over, mean_ranks, pair_key, significance_table,
    wilcoxon_signed_rank,
)


def brute_force_p(a, b):
    d = np.asarray(a) - np.asarray(b)
    d = d[d != 0]
    ranks = st.rankdata(np.abs(d))
    doubled = np.rint(2 * ranks).astype(int)
    observed = int(doubled[d > 0].sum())
    lower = upper = 0
    for signs in product((0, 1), repeat=len(d)):
        t = int(sum(r for r, s in zip(doubled, signs) if s))
        lower += t <= observed
        upper += t >= observed
    return min(1.0, 2.0 * min(lower, upper) / 2 ** len(d))


# --- Wilcoxon ---

def test_all_positive_differences_of_five():
    assert wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1]) == pytest.approx(0.0625)


@pytest.mark.parametrize("n", [5, 7, 9, 12])
def test_exact_p_matches_sign_flip_enumeration(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        a = rng.normal(size=n).round(1)  # rounding forces some tied magnitudes
        b = rng.normal(size=n).round(1)
        if np.all(a == b):
            continue
        assert wilcoxon_signed_rank(a, b) == pytest.approx(brute_force_p(a, b), rel=1e-12)


def test_symmetry():
    rng = np.random.default_rng(0)
    for n in (6, 14, 25):
        a, b = rng.normal(size=n), rng.normal(size=n)
        assert wilcoxon_signed_rank(a, b) == pytest.approx(wilcoxon_signed_rank(b, a), abs=1e-12)


def test_zero_differences_are_dropped():
    a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    b = [1.0, 1.0, 2.0, 3.0, 4.0, 5.0]  # first pair ties
    assert wilcoxon_signed_rank(a, b) == pytest.approx(brute_force_p(a[1:], b[1:]), rel=1e-12)


def test_identical_samples_are_undefined():
    with pytest.raises(UndefinedTestError):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])


def test_too_few_pairs():
    with pytest.raises(ContractError):
        wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])


def test_unequal_lengths():
    with pytest.raises(ContractError):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0, 0])


def test_normal_approximation_above_cutoff():
    n = 20
    a, b = np.arange(1, n + 1, dtype=float), np.zeros(n)
    mean, var = n * (n + 1) / 4, n * (n + 1) * (2 * n + 1) / 24
    expected = 2 * st.norm.sf((n * (n + 1) / 2 - mean) / np.sqrt(var))
    assert wilcoxon_signed_rank(a, b) == pytest.approx(expected)


def test_distinct_magnitudes_match_sign_flip_enumeration():
    rng = np.random.default_rng(11)
    for n in (5, 8, 13):
        a, b = rng.normal(size=n), rng.normal(size=n)
        assert wilcoxon_signed_rank(a, b) == pytest.approx(brute_force_p(a, b), rel=1e-9)


def test_tied_differences_above_cutoff_use_tie_corrected_variance():
    d = np.array([1, 1, 1, 2, 2, 3, 3, 3, 4, 5, 5, 6, 7, 7, 8, 9, -1, -2, -3, -4], dtype=float)
    n = len(d)
    ranks = st.rankdata(np.abs(d))
    _, ties = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (ties ** 3 - ties).sum() / 48
    z = (ranks[d > 0].sum() - n * (n + 1) / 4) / np.sqrt(var)
    assert wilcoxon_signed_rank(d, np.zeros(n)) == pytest.approx(2 * st.norm.sf(abs(z)))


# --- Holm ---

def test_holm_single_rejection():
    result = holm_correct([0.01])
    assert result.rejected == [True]
    assert result.thresholds == [0.05]


def test_holm_two_values():
    result = holm_correct([0.04, 0.01])
    assert result.thresholds == [pytest.approx(0.05), pytest.approx(0.025)]
    assert result.rejected == [True, True]


def test_holm_nothing_rejected():
    assert holm_correct([1.0, 1.0, 1.0]).rejected == [False, False, False]


def test_holm_stops_at_first_failure():
    # 0.001 <= 0.05/4, 0.02 > 0.05/3: everything after the first failure is retained.
    result = holm_correct([0.02, 0.001, 0.024, 0.04])
    assert result.rejected == [False, True, False, False]


def test_holm_monotone_in_alpha():
    rng = np.random.default_rng(1)
    p = rng.uniform(0, 0.1, size=8)
    previous = [False] * 8
    for alpha in (0.01, 0.02, 0.05, 0.1, 0.2):
        current = holm_correct(p, alpha).rejected
        assert all(c or not prev for c, prev in zip(current, previous))
        previous = current


# --- Ranks ---

def test_best_everywhere_has_rank_one():
    scores = np.array([[0.9, 0.5, 0.6], [0.8, 0.7, 0.1]])
    assert mean_ranks(scores)[0] == 1.0


def test_ties_are_averaged():
    assert mean_ranks([[0.5, 0.5], [0.3, 0.3]]).tolist() == [1.5, 1.5]


def test_loss_ranks_ascending():
    assert mean_ranks([[0.2, 0.9]], higher_is_better=False).tolist() == [1.0, 2.0]


def test_ranks_match_sort_based_oracle():
    rng = np.random.default_rng(4)
    scores = rng.uniform(size=(4, 6))
    expected = np.zeros(6)
    for row in scores:
        order = sorted(range(6), key=lambda j: -row[j])
        for position, j in enumerate(order, start=1):
            expected[j] += position
    assert np.allclose(mean_ranks(scores), expected / 4)
    assert mean_ranks(scores).sum() == pytest.approx(6 * 7 / 2)


def test_missing_cells():
    with pytest.raises(ContractError):
        mean_ranks([[0.5, np.nan]])


# --- Cliques and tables ---

def test_cliques_split_at_significant_pairs():
    ordered = ["a", "b", "c", "d"]
    rejected = {pair_key("a", "c"): True, pair_key("a", "d"): True, pair_key("b", "d"): True}
    assert cliques(ordered, rejected) == [["a", "b"], ["b", "c"], ["c", "d"]]


def test_no_rejections_gives_one_clique():
    assert cliques(["x", "y", "z"], {}) == [["x", "y", "z"]]


def test_significance_table_needs_five_datasets():
    table = significance_table(np.array([[0.9, 0.5], [0.8, 0.6]]), ["full", "random"], ["d1", "d2"])
    assert table.p_values[pair_key("full", "random")] is None
    assert table.note
    assert table.mean_ranks == {"full": 1.0, "random": 2.0}


def test_significance_table_with_enough_datasets():
    rng = np.random.default_rng(2)
    good = rng.uniform(0.8, 0.9, size=8)
    wobble = np.array([0.010, -0.011, 0.012, -0.013, 0.014, -0.015, 0.016, -0.017])
    scores = np.column_stack([good, good - 0.3, good - 0.3 + wobble])
    table = significance_table(scores, ["full", "yhat", "pad"], [f"d{i}" for i in range(8)])
    assert table.p_values[pair_key("full", "yhat")] == pytest.approx(2 / 2 ** 8)
    assert table.rejected[pair_key("full", "yhat")]
    assert not table.rejected[pair_key("yhat", "pad")]
    assert table.cliques == [["yhat", "pad"]]


def test_identical_variants_leave_the_pair_untested():
    scores = np.tile([[0.7, 0.7, 0.5]], (5, 1)) + np.arange(5)[:, None] * 0.01
    table = significance_table(scores, ["a", "b", "c"], list("vwxyz"))
    assert table.p_values[pair_key("a", "b")] is None
    assert table.p_values[pair_key("a", "c")] is not None


# --- Aggregation ---

def test_aggregate_uses_population_std():
    report = aggregate([
        {'seed': 0, 'loss': 0.5, 'accuracy': 0.8},
        {'seed': 1, 'loss': 0.7, 'accuracy': 0.6},
    ], dataset="d", mode="nosplit", variant="full")
    assert report.mean_accuracy == pytest.approx(0.7)
    assert report.std_accuracy == pytest.approx(0.1)
    assert report.std_loss == pytest.approx(0.1)
    assert report.n_seeds == 2
    assert report.to_dict()['n_seeds'] == 2


def test_aggregate_needs_a_seed():
    with pytest.raises(ContractError):
        aggregate([])


def test_improvement_over_random():
    reports = {
        name: aggregate([{'seed': 0, 'loss': 0.0, 'accuracy': acc}])
        for name, acc in (("random", 0.5), ("full", 0.9), ("yhat", 0.7))
    }
    gains = improvement_over(reports)
    assert gains == {"full": pytest.approx(0.4), "yhat": pytest.approx(0.2)}
    assert improvement_over({"full": reports["full"]}) == {}
