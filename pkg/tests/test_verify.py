from fractions import Fraction

from contention.verify import (
    all_by, at_least_one_by, channel_table, compare_with_oracle, event_probability, outcome_tree, run_suite,
)


def test_outcome_tree_hand_values():
    d = outcome_tree([Fraction(1, 2)] * 3)
    assert sum(d.values()) == 1
    assert event_probability(d, at_least_one_by(1)) == Fraction(1, 2)
    assert event_probability(d, at_least_one_by(2)) == Fraction(3, 4)
    # one station may get through in round 1 and the other alone in round 2
    assert event_probability(d, all_by(2)) == Fraction(1, 4)
    assert event_probability(d, all_by(3)) == Fraction(1, 2)


def test_outcome_tree_leaves_over_two_rounds():
    d = outcome_tree([Fraction(1, 2)] * 2)
    assert set(d) == {(None, None), (1, None), (None, 1), (1, 2), (2, 1), (2, None), (None, 2)}
    assert d[(None, None)] == Fraction(1, 4)


def test_always_transmit_never_succeeds():
    d = outcome_tree([1, 1, 1])
    assert d == {(None, None): 1}


def test_channel_table_clean():
    assert channel_table() == []


def test_monte_carlo_matches_oracle_small():
    for cmp in compare_with_oracle([0.25, 0.5, 0.75], {"a": at_least_one_by(2), "b": all_by(3)}, 4000, 5):
        assert cmp.ok, cmp


def test_suite_passes():
    checks = run_suite(mc_trials=3000)
    assert all(c.ok for c in checks), [c for c in checks if not c.ok]
