"""Acceptance suite: one test per criterion, at the stated trial counts and tolerances.

Each test records a single PASS/FAIL line (shown in the terminal summary)
before asserting.  The Monte Carlo criteria take minutes on one CPU.
"""

import math
from functools import lru_cache

import numpy as np
import pytest

from contention.adaptive import check_epoch_invariants
from contention.adversary import BlockingInstanceConfig, batch_schedule, blocking_instance, parse_adversary, verify_sigma_hat
from contention.cli import main as cli_main
from contention.engine import run_simulation, trace_lines
from contention.experiments import (
    ExperimentConfig, ProtocolSpec, blocking_experiment, energy_of, latency_of, run_one, run_trials,
    scaling_check, whp_fraction,
)
from contention.nonadaptive import SublinearDecrease, cumulative_sum, nak_total_rounds
from contention.rng import trial_seeds
from contention.verify import all_by, at_least_one_by, channel_table, compare_with_oracle

GRID = (16, 64, 256)
TRIALS = 200
WHP = 0.99
SPREAD = 2.0
SEED = 20240901


def config(name, k, adversary, trials=TRIALS, seed=SEED, traces=False, **kw):
    spec = ProtocolSpec(name, k if name == "nak" else None, **kw)
    return ExperimentConfig(spec, parse_adversary(adversary), k, trials, seed, record_traces=traces)


@lru_cache(maxsize=None)
def nak_runs(k, adversary):
    return run_trials(config("nak", k, adversary, c=8))


@lru_cache(maxsize=None)
def sublinear_runs(k, ack):
    return run_trials(config("sublinear", k, "batch", b=8, ack=ack))


def test_criterion_01_channel_semantics(report):
    problems = channel_table((0, 1, 2, 5))
    assert report(1, not problems, f"arbitration/feedback table m in (0,1,2,5); problems={problems}")


def test_criterion_02_nak_schedule_length(report):
    bad = [(2 ** e, c) for e in range(2, 21) for c in range(1, 17) if nak_total_rounds(2 ** e, c) >= 3 * c * 2 ** e]
    assert report(2, not bad, f"total rounds < 3ck on k=4..2^20 x c=1..16; violations={bad[:3]}")


NAK_ADVERSARIES = ("batch", "trickle:1", "wake-on-success:4")


def test_criterion_03_nak_latency(report):
    c = 8
    fractions = {}
    for adv in NAK_ADVERSARIES:
        for k in GRID:
            runs = nak_runs(k, adv)
            fractions[(adv, k)] = whp_fraction(runs, lambda r: latency_of(r)[1] <= 3 * c * k)
    worst = min(fractions, key=fractions.get)
    ok = all(f >= WHP for f in fractions.values())
    assert report(3, ok, f"every station within 3ck rounds; worst fraction {fractions[worst]:.3f} at {worst}, "
                         f"{TRIALS} trials per cell")


def test_criterion_04_nak_energy(report):
    details, ok = [], True
    for adv in NAK_ADVERSARIES:
        med = {k: float(np.median([energy_of(r) for r in nak_runs(k, adv)])) for k in GRID}
        bound = lambda k: k * math.log2(k)
        c_fit = med[GRID[0]] / bound(GRID[0])
        rep = scaling_check(med, bound, SPREAD)
        within = all(med[k] <= c_fit * bound(k) * (1 + 1e-12) for k in GRID)
        ok &= rep.ok and within
        details.append(f"{adv}: C={c_fit:.3f} spread={rep.spread:.3f}")
    assert report(4, ok, "median energy vs k log2 k; " + "; ".join(details))


def test_criterion_05_decrease_slowly(report):
    q, big_c, trials = 2.0, 32 * 2.0, 500
    details, ok = [], True
    for k in (64, 256):
        runs = run_trials(config("decrease-slowly", k, "batch", trials=trials, q=q))
        firsts = np.array([min(s for s in r.first_success if s is not None) if r.completed else np.inf
                           for r in runs])
        frac = float(np.mean(firsts <= big_c * k))
        fitted = float(np.quantile(firsts, 0.99, method="higher")) / k
        ok &= frac >= WHP
        details.append(f"k={k}: fraction {frac:.3f} within {big_c:g}k, fitted C(p99)={fitted:.3f}")
    assert report(5, ok, "; ".join(details))


def test_criterion_06_sawtooth(report):
    c_prime = 1.0
    runs = {k: run_trials(config("sawtooth", k, "batch")) for k in GRID}
    slots = {k: [r.rounds_used if r.completed else math.inf for r in runs[k]] for k in GRID}
    c_fit = max(slots[GRID[0]]) / GRID[0]
    fractions = {k: float(np.mean(np.array(slots[k]) <= SPREAD * c_fit * k)) for k in GRID}
    energy_ok = all(max(r.transmissions) <= c_prime * math.log2(r.rounds_used) ** 2 for k in GRID for r in runs[k])
    worst_tx = max(max(r.transmissions) / math.log2(r.rounds_used) ** 2 for k in GRID for r in runs[k])
    ok = all(f >= WHP for f in fractions.values()) and energy_ok
    assert report(6, ok, f"all acked within {SPREAD:g}*C*k slots, C={c_fit:.3f} fitted at k={GRID[0]}: "
                         f"fractions {[round(fractions[k], 3) for k in GRID]}; "
                         f"max tx/(log2 T)^2 = {worst_tx:.3f} <= {c_prime}")


def test_criterion_07_adaptive(report):
    details, ok, problems = [], True, []
    for adv in ("batch", "trickle:2", "wake-on-success:4"):
        medians = []
        for k in GRID:
            cfg = config("adaptive", k, adv, traces=True)
            passes, lat = 0, []
            for i, seed in enumerate(trial_seeds(cfg.master_seed, cfg.trials)):
                r = run_one(cfg, seed)
                done = r.completed and all(x is not None for x in r.off_round) and r.woken == k
                passes += done
                lat.append(latency_of(r)[1])
                bad = check_epoch_invariants(r.trace)
                if bad:
                    problems.append((adv, k, i, bad[0]))
            frac = passes / cfg.trials
            ok &= frac >= WHP
            medians.append(float(np.median(lat)))
            details.append(f"{adv} k={k}: off {frac:.3f}")
        ratios = [b / a for a, b in zip(medians, medians[1:])]
        ok &= all(x <= 6 for x in ratios)
        details.append(f"{adv} median max-latency {medians} ratios {[round(x, 2) for x in ratios]} (<= 6)")
    ok &= not problems
    assert report(7, ok, "; ".join(details) + f"; epoch violations {len(problems)} {problems[:2]}")


def _fitted_whp(metric_by_k, bound):
    """C fitted on the smallest k; fraction within SPREAD * C * bound(k) at each k."""
    c_fit = max(metric_by_k[GRID[0]]) / bound(GRID[0])
    fr = {k: float(np.mean(np.array(metric_by_k[k]) <= SPREAD * c_fit * bound(k))) for k in GRID}
    med = scaling_check({k: float(np.median(metric_by_k[k])) for k in GRID}, bound, SPREAD)
    return c_fit, fr, med


def test_criterion_08_sublinear_latency(report):
    ok, details = True, []
    bounds = {"on": lambda k: k * math.log(k) ** 2 / math.log(math.log(k)), "off": lambda k: k * math.log(k) ** 2}
    for ack in ("on", "off"):
        lat = {k: [latency_of(r)[1] for r in sublinear_runs(k, ack)] for k in GRID}
        c_fit, fr, med = _fitted_whp(lat, bounds[ack])
        ok &= all(f >= WHP for f in fr.values()) and med.ok
        details.append(f"ack {ack}: B={c_fit:.3f} fractions {[round(fr[k], 3) for k in GRID]} "
                       f"median-ratio spread {med.spread:.3f}")
    grid_bad = [(b, i) for b in (1, 2, 4) for i in (100, 1000, 10_000)
                if not cumulative_sum(SublinearDecrease(b).probability, i) < b * math.log(i / b) ** 2]
    ok &= not grid_bad
    assert report(8, ok, "; ".join(details) + f"; s(i) < b ln^2(i/b) violations {grid_bad}")


def test_criterion_09_sublinear_energy(report):
    ok, details = True, []
    bound = lambda k: k * math.log2(k) ** 2
    for ack in ("on", "off"):
        en = {k: [energy_of(r) for r in sublinear_runs(k, ack)] for k in GRID}
        c_fit, fr, med = _fitted_whp(en, bound)
        ok &= all(f >= WHP for f in fr.values()) and med.ok
        details.append(f"ack {ack}: C={c_fit:.3f} fractions {[round(fr[k], 3) for k in GRID]} "
                       f"median-ratio spread {med.spread:.3f}")
    assert report(9, ok, "energy vs k log2^2 k; " + "; ".join(details))


def test_criterion_10_blocking(report):
    k, gamma, b = 8192, 3, 1
    proto = SublinearDecrease(b)
    cfg = BlockingInstanceConfig(k, gamma, float(proto.probabilities(np.array([1]))[0]))
    sched = blocking_instance(cfg)
    verified, low, _ = verify_sigma_hat(sched, proto.probabilities, 39, (1, 76))
    rep = blocking_experiment(k, gamma, b, trials=100, seed=SEED)
    ok = verified and rep.window == (1, 76) and rep.zero_success_fraction >= 0.90
    assert report(10, ok, f"sigma_hat min {low:.3f} >= 39 on [1,76]: {verified}; zero-success fraction "
                          f"{rep.zero_success_fraction:.2f} over {rep.trials} trials (>= 0.90)")


def test_criterion_11_oracle(report):
    events = {"at least one success by round 2": at_least_one_by(2), "both succeed by round 3": all_by(3)}
    cmps = compare_with_oracle([0.5, 0.5, 0.5], events, 100_000, SEED)
    ok = all(c.ok for c in cmps)
    assert report(11, ok, "; ".join(f"{c.name}: exact {c.exact:.4f} MC {c.estimate:.4f} "
                                    f"({abs(c.estimate - c.exact) / c.stderr:.2f} se)" for c in cmps))


def test_criterion_12_replay(report, tmp_path, capsys):
    codes = []
    for argv in (["--protocol", "adaptive", "--k", "16", "--adversary", "wake-on-success:2"],
                 ["--protocol", "nak", "--k", "16", "--adversary", "trickle:1"],
                 ["--protocol", "sublinear", "--ack", "off", "--k", "8", "--adversary", "uniform:20"]):
        d = tmp_path / argv[1]
        codes.append(cli_main(["run", *argv, "--trials", "3", "--seed", "3", "--trace-dir", str(d)]))
        codes += [cli_main(["replay", str(f)]) for f in sorted(d.iterdir())]
    capsys.readouterr()
    ok = codes == [0] * len(codes)
    assert report(12, ok, f"stored runs replayed byte-identically: exit codes {codes}")
