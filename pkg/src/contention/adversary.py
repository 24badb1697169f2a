"""Wake-up adversaries.

An oblivious adversary commits to a schedule of ``(round, count)`` entries
before the run.  An adaptive one is queried at every round boundary with the
public history of the channel (outcome kinds and past wake counts, never
station identities) and answers how many stations to switch on.

Stations woken at the boundary of reference round ``t`` get activation
round ``t - 1`` and act for the first time in round ``t``.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import OutcomeKind

ProbabilitySequence = Callable[[np.ndarray], np.ndarray]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ObliviousSchedule:
    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        last = -1
        for t, count in self.entries:
            if t < 0 or count < 1:
                raise ScheduleError(f"bad schedule entry ({t}, {count})")
            if t < last:
                raise ScheduleError("schedule rounds must be non-decreasing")
            last = t

    @classmethod
    def from_rounds(cls, rounds: Sequence[int] | np.ndarray) -> "ObliviousSchedule":
        counts = Counter(int(t) for t in rounds)
        return cls(tuple(sorted(counts.items())))

    @property
    def total(self) -> int:
        return sum(c for _, c in self.entries)

    def activation_rounds(self) -> list[int]:
        out = []
        for t, c in self.entries:
            out.extend([t] * c)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "count"])
        w.writerows(self.entries)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObliviousSchedule":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(tuple((int(r["round"]), int(r["count"])) for r in rows))


@dataclass
class PublicHistory:
    """What an adaptive adversary may observe: per-round outcome kinds and wake counts."""

    outcomes: list[OutcomeKind] = field(default_factory=list)
    wakes: list[int] = field(default_factory=list)

    @property
    def next_round(self) -> int:
        return len(self.outcomes) + 1


class AdaptiveStrategy:
    """Online wake-up policy with a budget of ``k`` stations.

    Subclasses implement :meth:`decide`.  ``idle_when_empty`` declares that
    the policy never wakes anyone once the channel holds no alive station,
    which lets the engine stop instead of running to the round cap.
    """

    idle_when_empty = False

    def __init__(self, k: int):
        self.k = k
        self.remaining = k

    def decide(self, history: PublicHistory) -> int:
        raise NotImplementedError

    @property
    def exhausted(self) -> bool:
        return self.remaining == 0


class WakeOnSuccess(AdaptiveStrategy):
    """One station at the start, then ``burst`` more after every success."""

    idle_when_empty = True

    def __init__(self, k: int, burst: int):
        if burst < 1:
            raise ScheduleError("burst must be >= 1")
        super().__init__(k)
        self.burst = burst

    def decide(self, history: PublicHistory) -> int:
        if not history.outcomes:
            return 1
        if history.outcomes[-1] is OutcomeKind.SUCCESS:
            return self.burst
        return 0


WakeupSource = ObliviousSchedule | AdaptiveStrategy


def batch_schedule(k: int) -> ObliviousSchedule:
    if k < 1:
        raise ScheduleError("k must be >= 1")
    return ObliviousSchedule(((0, k),))


def trickle_schedule(k: int, gap: int) -> ObliviousSchedule:
    if k < 1 or gap < 0:
        raise ScheduleError("need k >= 1 and gap >= 0")
    return ObliviousSchedule.from_rounds([i * gap for i in range(k)])


def uniform_random_schedule(k: int, horizon: int, rng: np.random.Generator) -> ObliviousSchedule:
    if horizon < 1:
        raise ScheduleError("horizon must be >= 1")
    return ObliviousSchedule.from_rounds(rng.integers(0, horizon, size=k))


def wake_on_success_strategy(k: int, burst: int) -> WakeOnSuccess:
    return WakeOnSuccess(k, burst)


@dataclass(frozen=True)
class BlockingInstanceConfig:
    k: int
    gamma: float
    p1: float
    variant: str = "frontloaded"
    t1: int | None = None
    t2: int | None = None

    @property
    def threshold(self) -> float:
        return self.gamma * math.log2(self.k)

    @property
    def per_round(self) -> int:
        return max(1, math.ceil(self.threshold / self.p1))


def blocking_instance(config: BlockingInstanceConfig, rng: np.random.Generator | None = None) -> ObliviousSchedule:
    """Oblivious instance keeping the summed transmit probability high from round 1.

    ``frontloaded`` wakes ``r`` stations per round over ``[0, k // r)`` and
    parks the remainder at round ``k // r``.  ``twophase`` wakes ``r`` per
    round over ``[0, t1)`` then scatters the rest uniformly over ``[0, t2)``.
    """
    k, r = config.k, config.per_round
    if config.p1 <= 0 or config.p1 > 1:
        raise ScheduleError("p1 must lie in (0, 1]")
    if r > k:
        raise ScheduleError(f"per-round wake count {r} exceeds budget k={k}")
    if config.variant == "frontloaded":
        t1 = k // r
        rounds = [t for t in range(t1) for _ in range(r)]
        rounds += [t1] * (k - r * t1)
        return ObliviousSchedule.from_rounds(rounds)
    if config.variant == "twophase":
        if config.t1 is None or config.t2 is None or config.t1 < 1 or config.t2 < 1:
            raise ScheduleError("twophase needs t1 >= 1 and t2 >= 1")
        if 2 * r * config.t1 > k:
            raise ScheduleError(
                f"phase-1 budget r*t1 = {r * config.t1} exceeds k/2 = {k / 2}")
        if rng is None:
            raise ScheduleError("twophase needs an rng for the uniform phase")
        rounds = [t for t in range(config.t1) for _ in range(r)]
        rounds += rng.integers(0, config.t2, size=k - r * config.t1).tolist()
        return ObliviousSchedule.from_rounds(rounds)
    raise ScheduleError(f"unknown blocking variant {config.variant!r}")


def sigma_hat_series(schedule: ObliviousSchedule, probabilities: ProbabilitySequence,
                     last_round: int) -> np.ndarray:
    """sigma_hat[t] for t = 1..last_round, as a convolution of wake counts with p."""
    if last_round < 1:
        return np.zeros(0)
    woken = np.zeros(last_round, dtype=np.float64)
    for t, c in schedule.entries:
        if t < last_round:
            woken[t] += c
    p = np.asarray(probabilities(np.arange(1, last_round + 1)), dtype=np.float64)
    # sigma_hat[t] = sum_{tv < t} woken[tv] * p(t - tv)
    return np.convolve(woken, p)[:last_round]


def verify_sigma_hat(schedule: ObliviousSchedule, probabilities: ProbabilitySequence,
                     threshold: float, window: tuple[int, int]) -> tuple[bool, float, int]:
    lo, hi = window
    if lo < 1 or hi < lo:
        raise ValueError(f"bad window {window}")
    k = max(schedule.total, 1)
    if hi > k * k:
        raise ValueError(f"window end {hi} exceeds k^2 = {k * k}")
    series = sigma_hat_series(schedule, probabilities, hi)[lo - 1:]
    i = int(np.argmin(series))
    low = float(series[i])
    return low >= threshold, low, lo + i


@dataclass(frozen=True)
class AdversarySpec:
    """Parsed adversary configuration; ``build`` instantiates it for one run."""

    kind: str
    gap: int = 1
    horizon: int = 1
    burst: int = 1
    variant: str = "frontloaded"
    gamma: float = 3.0
    t1: int | None = None
    t2: int | None = None

    def build(self, k: int, rng: np.random.Generator, p1: float | None = None) -> WakeupSource:
        if self.kind == "batch":
            return batch_schedule(k)
        if self.kind == "trickle":
            return trickle_schedule(k, self.gap)
        if self.kind == "uniform":
            return uniform_random_schedule(k, self.horizon, rng)
        if self.kind == "wake-on-success":
            return wake_on_success_strategy(k, self.burst)
        if self.kind == "blocking":
            if p1 is None:
                raise ScheduleError("blocking instances need the protocol's first-round probability")
            cfg = BlockingInstanceConfig(k, self.gamma, p1, self.variant, self.t1, self.t2)
            return blocking_instance(cfg, rng)
        raise ScheduleError(f"unknown adversary {self.kind!r}")

    def __str__(self):
        if self.kind == "trickle":
            return f"trickle:{self.gap}"
        if self.kind == "uniform":
            return f"uniform:{self.horizon}"
        if self.kind == "wake-on-success":
            return f"wake-on-success:{self.burst}"
        if self.kind == "blocking":
            parts = [self.variant, _fmt(self.gamma)]
            if self.variant == "twophase":
                parts += [str(self.t1), str(self.t2)]
            return "blocking:" + ",".join(parts)
        return self.kind


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(x)


def parse_adversary(text: str) -> AdversarySpec:
    """Parse ``batch | trickle:gap | uniform:horizon | blocking:variant,gamma[,t1,t2] | wake-on-success:burst``."""
    name, _, arg = text.strip().partition(":")
    try:
        if name == "batch" and not arg:
            return AdversarySpec("batch")
        if name == "trickle":
            return AdversarySpec("trickle", gap=int(arg or 1))
        if name == "uniform":
            return AdversarySpec("uniform", horizon=int(arg))
        if name == "wake-on-success":
            return AdversarySpec("wake-on-success", burst=int(arg or 1))
        if name == "blocking":
            parts = [s.strip() for s in arg.split(",")] if arg else []
            variant = parts[0] if parts else "frontloaded"
            gamma = float(parts[1]) if len(parts) > 1 else 3.0
            t1 = int(parts[2]) if len(parts) > 2 else None
            t2 = int(parts[3]) if len(parts) > 3 else None
            if variant not in ("frontloaded", "twophase"):
                raise ScheduleError(f"unknown blocking variant {variant!r}")
            return AdversarySpec("blocking", variant=variant, gamma=gamma, t1=t1, t2=t2)
    except ValueError as exc:
        raise ScheduleError(f"cannot parse adversary {text!r}: {exc}") from exc
    raise ScheduleError(f"unknown adversary {text!r}")
