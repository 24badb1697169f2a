import math

import pytest
from hypothesis import given, settings, strategies as st

from contention.adversary import batch_schedule
from contention.channel import ACKED, LISTEN, NOTHING_HEARD, ContractViolation, Data
from contention.engine import UNTIL_DELIVERED, UNTIL_OFF, run_simulation
from contention.nonadaptive import (
    AckMode, NakSchedule, NonAdaptiveWithK, ScheduleExhausted, SublinearDecrease, cumulative_sum,
    loglog_levels, nak_probability, nak_total_rounds, phi, schedule_csv, sublinear_probability,
)
from contention.rng import StationStream


def test_phi_examples():
    assert [phi(l, 16) for l in range(3)] == [16, 8, 16]
    with pytest.raises(ContractViolation):
        phi(3, 16)


def test_levels():
    assert [loglog_levels(k) for k in (4, 5, 16, 17, 256, 257, 65536)] == [1, 2, 2, 3, 3, 4, 4]
    with pytest.raises(ContractViolation):
        loglog_levels(3)


def test_nak_probability_examples():
    assert nak_probability(1, 16, 1) == 1 / 32
    assert nak_probability(16, 16, 1) == 1 / 32
    assert nak_probability(17, 16, 1) == 1 / 16
    assert nak_probability(25, 16, 1) == 1 / 8
    assert nak_probability(40, 16, 1) == 1 / 8
    with pytest.raises(ScheduleExhausted):
        nak_probability(41, 16, 1)


def test_total_rounds_examples():
    assert nak_total_rounds(16, 1) == 40
    assert nak_total_rounds(16, 4) == 160
    assert nak_total_rounds(256, 1) == 704


def test_total_rounds_below_three_ck_on_grid():
    for e in range(2, 21):
        for c in range(1, 17):
            assert nak_total_rounds(2 ** e, c) < 3 * c * 2 ** e


@settings(max_examples=200, deadline=None)
@given(st.integers(4, 1 << 22), st.integers(1, 16))
def test_total_rounds_below_three_ck_any_k(k, c):
    assert nak_total_rounds(k, c) < 3 * c * k


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 5000), st.integers(1, 4))
def test_nak_probabilities_in_range_and_nondecreasing(k, c):
    sched = NakSchedule(k, c)
    ps = [sched.probability(i) for i in range(1, sched.total_rounds + 1)]
    assert all(0 < p <= 0.5 for p in ps)
    assert all(a <= b for a, b in zip(ps, ps[1:]))


def test_sublinear_examples():
    assert sublinear_probability(1, 2) == pytest.approx(0.366204, abs=1e-6)
    assert sublinear_probability(3, 2) == pytest.approx(0.346574, abs=1e-6)
    assert sublinear_probability(7, 2) == pytest.approx(0.298627, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10_000), st.integers(1, 16))
def test_sublinear_positive_nonincreasing_and_small(i, b):
    p = sublinear_probability(i, b)
    assert 0 < sublinear_probability(i + 1, b) <= p <= math.log(3) / 3 < 0.5
    assert SublinearDecrease(b).probability(i) == pytest.approx(p, rel=1e-15)


def test_cumulative_sum_examples():
    assert cumulative_sum(lambda i: sublinear_probability(i, 1), 3) == pytest.approx(1.03467, abs=1e-5)
    assert cumulative_sum(lambda i: sublinear_probability(i, 1), 0) == 0
    assert cumulative_sum(NakSchedule(16, 1).probability, 40) == pytest.approx(3.0)


def test_full_schedule_sums_are_locked():
    assert cumulative_sum(NakSchedule(16, 1).probability, 40) == 3.0
    assert cumulative_sum(NakSchedule(256, 1).probability, 704) == 5.5
    assert cumulative_sum(NakSchedule(256, 8).probability, 8 * 704) == 44.0


@pytest.mark.parametrize("b", [1, 2, 4])
@pytest.mark.parametrize("i", [100, 1000, 10_000])
def test_sublinear_cumulative_bound_grid(b, i):
    assert cumulative_sum(SublinearDecrease(b).probability, i) < b * math.log(i / b) ** 2


def test_station_switches_off_on_ack_only_when_asked():
    on = SublinearDecrease(2, AckMode.SWITCH_OFF).new_station(Data(0))
    on.observe(ACKED)
    assert not on.alive
    off = SublinearDecrease(2, AckMode.IGNORE).new_station(Data(0))
    off.observe(ACKED)
    assert off.alive
    off.observe(NOTHING_HEARD)
    assert off.alive


def test_station_draws_bernoulli_from_schedule():
    st_ = NonAdaptiveWithK(16, 1).new_station(Data(0))
    rng = StationStream(0, 0)
    acts = [st_.act(1, rng) for _ in range(4000)]
    frac = sum(a is not LISTEN for a in acts) / 4000
    assert abs(frac - 1 / 32) < 0.01


def test_station_is_silent_past_schedule():
    st_ = NonAdaptiveWithK(4, 1).new_station(Data(0))
    rng = StationStream(0, 0)
    total = nak_total_rounds(4, 1)
    assert all(st_.act(i, rng) is LISTEN for i in range(total + 1, total + 50))
    assert st_.silent_forever and st_.alive


def test_termination_modes():
    assert SublinearDecrease(8).until == UNTIL_OFF
    assert SublinearDecrease(8, AckMode.IGNORE).until == UNTIL_DELIVERED


def test_no_ack_variant_keeps_transmitting_after_success():
    rec = run_simulation(SublinearDecrease(1, AckMode.IGNORE), batch_schedule(4), 4, seed=1, record_trace=True)
    assert rec.completed and all(s is not None for s in rec.first_success)
    assert all(x is None for x in rec.off_round)
    first = min(rec.first_success)
    sid = rec.first_success.index(first)
    assert rec.rounds_used > first
    # the first successful station stays on the air after its success
    assert any(sid in r.transmitters for r in rec.trace.rounds if r.round > first)


def test_exhausted_schedule_marks_trial_incomplete():
    # c = 1 is far too small for k = 4; with this seed three stations never get through
    rec = run_simulation(NonAdaptiveWithK(4, 1), batch_schedule(4), 4, max_rounds=400, seed=3)
    assert nak_total_rounds(4, 1) == 8
    assert not rec.completed and rec.rounds_used == 400
    assert rec.first_success == [None, None, 5, None]
    assert rec.off_round == [None, None, 5, None]


def test_schedule_csv():
    text = schedule_csv(NonAdaptiveWithK(16, 1), 41)
    lines = text.splitlines()
    assert lines[0] == "i,p"
    assert lines[1] == "1,0.03125"
    assert lines[17] == "17,0.0625"
    assert lines[41] == "41,0.0"


def test_bad_constants():
    with pytest.raises(ContractViolation):
        NakSchedule(16, 0)
    with pytest.raises(ContractViolation):
        SublinearDecrease(0)
