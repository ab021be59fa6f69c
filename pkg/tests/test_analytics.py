import math

import numpy as np
import pytest

from twophase_tdma import analytics as an


def H(n):
    return math.fsum(1 / k for k in range(1, n + 1))


def test_single_hop_examples():
    assert an.q_single_hop(10, 8) == 0.5
    assert an.q_single_hop(10, 9) == 1.0
    assert abs(an.q_single_hop(10_000, 0) - 1 / math.e) < 1e-4
    with pytest.raises(ValueError):
        an.q_single_hop(3, 3)


def test_q_min_examples():
    assert abs(an.q_min(3) - 0.363426) < 1e-6
    assert an.q_min(2) == pytest.approx(0.4375)
    assert abs(an.q_min(100_000) - (1 - math.exp(-0.25))) < 1e-3
    assert an.q_min_structural(4) == 0.375


def test_bound_examples():
    assert an.expected_rounds_bound(3) == pytest.approx(2.7516, abs=1e-4)
    assert an.expected_max_rounds_bound(16, 1) == 1.0
    assert an.expected_time_bound(4, 1.0, 2.0) == pytest.approx(7 / an.q_min(4))
    assert an.expected_max_geometric(1.0, 5) == pytest.approx(1.0)
    # the max of n geometrics grows with n
    assert an.expected_max_geometric(0.3, 50) > an.expected_max_geometric(0.3, 5)


def test_mean_rounds_below_bound_at_32():
    est = an.mean_rounds_single_hop(32, 20_000, seed=1)
    assert est.mean <= an.expected_rounds_bound(32)
    assert est.within(1 / an.q_single_hop(32, 0), k=4)


def test_example_matrix():
    b = an.ContentionMatrix(np.array([[1, 1, 1], [1, 1, 0], [1, 0, 1]]))
    assert b.beta.tolist() == [3, 2, 2]
    assert b.alpha.tolist() == [2, 1, 1]
    assert an.q_of_matrix(b) == pytest.approx(5 / 12)


def test_no_contenders_means_success():
    b = np.zeros((4, 4), dtype=int)
    b[0] = 1
    assert an.q_of_matrix(b) == 1.0


def test_uniform_matrix_is_single_hop():
    for S in (3, 6, 11):
        assert an.q_of_matrix(np.ones((S, S), dtype=int)) == pytest.approx(an.q_single_hop(S, 0))


def test_bad_matrix_rejected():
    with pytest.raises(ValueError):
        an.ContentionMatrix(np.array([[2, 0], [0, 1]]))


def test_worst_case_matrix_value():
    for S in (3, 4, 8, 20):
        m = an.worst_case_matrix(S)
        assert an.has_minimizer_structure(m.b)
        assert an.q_of_matrix(m) == pytest.approx((S + 2) / (4 * S))


def test_matrix_monte_carlo_agrees():
    m = an.worst_case_matrix(6)
    est = an.matrix_success(m, 40_000, seed=3)
    assert est.within(an.q_of_matrix(m))


def test_bmin_search_at_four():
    rep = an.verify_bmin_structure(4)
    assert rep.exhaustive and rep.structure_confirmed
    assert rep.q_min_found == pytest.approx(0.375)
    assert rep.q_closed_form < rep.q_structural
    assert any("S=4" in line for line in rep.lines())


def test_bmin_needs_three_slots():
    with pytest.raises(ValueError):
        an.verify_bmin_structure(2)


@pytest.mark.parametrize("k", [2, 8, 32])
def test_single_hop_monte_carlo(k):
    est = an.single_hop_success(k + 5, 5, 10_000, seed=0)
    assert est.within(an.q_single_hop(k + 5, 5))


def test_dtmc_examples():
    assert an.dslr_moves_bound(1) == 0.0
    assert an.dslr_dtmc_moves(1, 10).mean == 0.0
    assert an.dslr_moves_bound(4) == pytest.approx(11 / 6)
    assert abs(an.dslr_moves_exact(4) - H(3)) < 1e-12
    assert an.dslr_dtmc_moves(4, 100_000, seed=0).within(H(3))


def test_runtime_bound_lossless():
    assert an.dslr_runtime_bound(100, 20, 7, 0.0) == pytest.approx(math.log(100) * 7)
    assert an.dslr_runtime_bound(100, 20, 7, 0.1) > math.log(100) * 7
    with pytest.raises(ValueError):
        an.dslr_runtime_bound(100, 20, 7, 1.0)


def test_analytics_rows():
    rows = an.analytics_rows([4, 8])
    assert rows[0] == an.ANALYTICS_HEADER
    assert rows[1].startswith("4,0.3")
    assert len(rows) == 3
