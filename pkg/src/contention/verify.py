"""Exact outcome-tree oracle and the invariant suite behind ``contention verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Callable, Sequence

from .adaptive import AdaptiveNoK, check_epoch_invariants
from .adversary import batch_schedule, trickle_schedule, wake_on_success_strategy
from .channel import (
    ACKED, LISTEN, NOTHING_HEARD, TRANSMITTED_NO_ACK, Data, FeedbackKind, OutcomeKind, Transmit,
    arbitrate, feedback_for,
)
from .engine import TrialRecord, run_simulation, trace_lines
from .nonadaptive import NonAdaptiveWithK, ScriptedProtocol, SublinearDecrease, cumulative_sum, nak_total_rounds
from .rng import trial_seeds


def outcome_tree(probs: Sequence[Fraction | float], stations: int = 2) -> dict[tuple, Fraction]:
    """Exact distribution of per-station success rounds for a batch start.

    Every station is woken at round 0 and transmits in round ``i`` with
    probability ``probs[i - 1]``; an acked station switches off.  The result
    maps a tuple of success rounds (``None`` for never) to its probability.
    The tree is enumerated leaf by leaf, independently of the engine.
    """
    probs = [Fraction(p) for p in probs]
    dist: dict[tuple, Fraction] = {}

    def walk(i: int, succ: tuple, weight: Fraction) -> None:
        if i > len(probs):
            dist[succ] = dist.get(succ, Fraction(0)) + weight
            return
        p = probs[i - 1]
        alive = [s for s in range(stations) if succ[s] is None]
        for choice in product((True, False), repeat=len(alive)):
            w = weight
            for c in choice:
                w *= p if c else 1 - p
            if w == 0:
                continue
            senders = [s for s, c in zip(alive, choice) if c]
            nxt = succ
            if len(senders) == 1:
                nxt = succ[:senders[0]] + (i,) + succ[senders[0] + 1:]
            walk(i + 1, nxt, w)

    walk(1, (None,) * stations, Fraction(1))
    return dist


def event_probability(dist: dict[tuple, Fraction], event: Callable[[tuple], bool]) -> Fraction:
    return sum((w for succ, w in dist.items() if event(succ)), Fraction(0))


def at_least_one_by(r: int) -> Callable[[tuple], bool]:
    return lambda succ: any(s is not None and s <= r for s in succ)


def all_by(r: int) -> Callable[[tuple], bool]:
    return lambda succ: all(s is not None and s <= r for s in succ)


@dataclass
class OracleComparison:
    name: str
    exact: float
    estimate: float
    stderr: float
    trials: int

    @property
    def ok(self) -> bool:
        return abs(self.estimate - self.exact) <= 3 * self.stderr


def compare_with_oracle(probs: Sequence[float], events: dict[str, Callable[[tuple], bool]],
                        trials: int, master_seed: int = 0) -> list[OracleComparison]:
    """Monte Carlo estimates from the engine against exact outcome-tree values, k = 2 batch."""
    dist = outcome_tree(probs, 2)
    protocol = ScriptedProtocol(probs)
    schedule = batch_schedule(2)
    hits = dict.fromkeys(events, 0)
    for s in trial_seeds(master_seed, trials):
        rec = run_simulation(protocol, schedule, 2, max_rounds=len(probs), seed=s)
        succ = tuple(rec.first_success)
        for name, ev in events.items():
            hits[name] += ev(succ)
    out = []
    for name, ev in events.items():
        exact = float(event_probability(dist, ev))
        est = hits[name] / trials
        out.append(OracleComparison(name, exact, est, math.sqrt(exact * (1 - exact) / trials), trials))
    return out


def channel_table(ms: Sequence[int] = (0, 1, 2, 5)) -> list[str]:
    """Check arbitration and feedback for each transmitter count; return violations."""
    problems = []
    for m in ms:
        n = m + 2
        actions = [(i, Transmit(Data(i)) if i < m else LISTEN) for i in range(n)]
        out = arbitrate(actions)
        want = OutcomeKind.SILENCE if m == 0 else OutcomeKind.SUCCESS if m == 1 else OutcomeKind.COLLISION
        if out.kind is not want:
            problems.append(f"m={m}: outcome {out.kind} expected {want}")
        for i, a in actions:
            fb = feedback_for(out, a, out.sender == i)
            if a is LISTEN:
                expect = FeedbackKind.HEARD if m == 1 else FeedbackKind.NOTHING_HEARD
                if fb.kind is not expect:
                    problems.append(f"m={m}: listener got {fb}")
                if m != 1 and fb is not NOTHING_HEARD:
                    problems.append(f"m={m}: listener can tell collision from silence")
            elif m == 1 and fb is not ACKED:
                problems.append(f"m={m}: lone sender not acked")
            elif m > 1 and fb is not TRANSMITTED_NO_ACK:
                problems.append(f"m={m}: colliding sender got {fb}")
    return problems


def record_problems(rec: TrialRecord, ack_switch_off: bool) -> list[str]:
    """Per-record invariants: success after activation, and for ack protocols no sending after success."""
    problems = []
    for i, (a, s, n) in enumerate(zip(rec.activation, rec.first_success, rec.transmissions)):
        if s is not None and s <= a:
            problems.append(f"station {i}: success {s} not after activation {a}")
        if s is not None and n < 1:
            problems.append(f"station {i}: success without transmitting")
    if ack_switch_off and rec.trace is not None:
        for r in rec.trace.rounds:
            for sid in r.transmitters:
                s = rec.first_success[sid]
                if s is not None and r.round > s:
                    problems.append(f"station {sid} transmitted in round {r.round} after success at {s}")
    return problems


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def run_suite(mc_trials: int = 20_000, seed: int = 0) -> list[Check]:
    """Deterministic checks plus a small Monte Carlo; each entry reports pass or fail."""
    checks = []
    p = channel_table()
    checks.append(Check("channel-table", not p, "; ".join(p)))

    bad = [(k, c) for k in (2 ** e for e in range(2, 21)) for c in range(1, 17)
           if nak_total_rounds(k, c) >= 3 * c * k]
    checks.append(Check("nak-total-rounds", not bad, str(bad[:5])))

    bad = []
    for b in (1, 2, 4):
        sub = SublinearDecrease(b)
        for i in (100, 1000, 10_000):
            if not cumulative_sum(sub.probability, i) < b * math.log(i / b) ** 2:
                bad.append((b, i))
    checks.append(Check("sublinear-cumulative", not bad, str(bad)))

    problems = []
    for proto, sched in ((NonAdaptiveWithK(16, 2), trickle_schedule(16, 3)),
                         (SublinearDecrease(2), batch_schedule(8))):
        for s in trial_seeds(seed, 3):
            a = run_simulation(proto, sched, sched.total, seed=s, record_trace=True, engine="vector")
            b = run_simulation(proto, sched, sched.total, seed=s, record_trace=True, engine="reference")
            if list(trace_lines(a)) != list(trace_lines(b)):
                problems.append(f"{proto.name} seed {s}: vector and reference traces differ")
            problems += record_problems(a, True)
    checks.append(Check("engine-paths-agree", not problems, "; ".join(problems[:5])))

    problems = []
    factories = (lambda: batch_schedule(16), lambda: trickle_schedule(16, 2),
                 lambda: wake_on_success_strategy(16, 2))
    for make in factories:
        for s in trial_seeds(seed, 3):
            rec = run_simulation(AdaptiveNoK(), make(), 16, seed=s, record_trace=True)
            if not rec.completed:
                problems.append(f"seed {s}: adaptive run incomplete")
            problems += check_epoch_invariants(rec.trace)
            problems += record_problems(rec, False)
    checks.append(Check("adaptive-epochs", not problems, "; ".join(problems[:5])))

    half = [0.5, 0.5, 0.5]
    for cmp in compare_with_oracle(half, {"one-by-2": at_least_one_by(2), "both-by-3": all_by(3)},
                                   mc_trials, seed):
        checks.append(Check(f"oracle-{cmp.name}", cmp.ok,
                            f"exact {cmp.exact:.4f} estimate {cmp.estimate:.4f} se {cmp.stderr:.4f}"))

    a = run_simulation(AdaptiveNoK(), trickle_schedule(8, 1), 8, seed=seed, record_trace=True)
    b = run_simulation(AdaptiveNoK(), trickle_schedule(8, 1), 8, seed=seed, record_trace=True)
    checks.append(Check("determinism", list(trace_lines(a)) == list(trace_lines(b))))
    return checks
