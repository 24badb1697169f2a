"""Non-adaptive protocols: transmit probability depends on the local round only.

``NonAdaptiveWithK(k, c)`` runs ``L + 1`` blocks, ``L = ceil(log2 log2 k)``;
block ``l`` lasts ``c * phi(l)`` rounds at probability ``2**l / (2k)``.
``SublinearDecrease(b)`` holds ``ln j / j`` for ``b`` rounds per
``j = 3, 4, 5, ...`` and never ends.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .channel import ACKED, LISTEN, ContractViolation, Data, Feedback, Transmit
from .engine import UNTIL_DELIVERED, UNTIL_OFF, StationProtocol, VectorizedProtocol
from .rng import StationStream


class ScheduleExhausted(IndexError):
    """A finite schedule was queried past its last round."""


def loglog_levels(k: int) -> int:
    """ceil(log2 log2 k), computed exactly as the least L with 2**(2**L) >= k."""
    if k < 4:
        raise ContractViolation(f"NonAdaptiveWithK needs k >= 4, got {k}")
    L = 0
    while (1 << (1 << L)) < k:
        L += 1
    return L


def phi(l: int, k: int) -> int:
    L = loglog_levels(k)
    if not 0 <= l <= L:
        raise ContractViolation(f"block index {l} outside 0..{L}")
    if l == L:
        return k
    return -(-k // (1 << l))


def nak_total_rounds(k: int, c: int) -> int:
    L = loglog_levels(k)
    return c * sum(phi(l, k) for l in range(L + 1))


@dataclass(frozen=True)
class NakSchedule:
    k: int
    c: int

    def __post_init__(self):
        if self.c < 1:
            raise ContractViolation("c must be a positive integer")
        loglog_levels(self.k)

    @cached_property
    def levels(self) -> int:
        return loglog_levels(self.k)

    @cached_property
    def block_lengths(self) -> list[int]:
        return [self.c * phi(l, self.k) for l in range(self.levels + 1)]

    @cached_property
    def boundaries(self) -> list[int]:
        """Last local round of each block."""
        out, acc = [], 0
        for n in self.block_lengths:
            acc += n
            out.append(acc)
        return out

    @property
    def total_rounds(self) -> int:
        return self.boundaries[-1]

    def probability(self, i: int) -> float:
        if i < 1:
            raise ContractViolation(f"local rounds start at 1, got {i}")
        if i > self.total_rounds:
            raise ScheduleExhausted(f"round {i} beyond schedule of {self.total_rounds}")
        l = bisect.bisect_left(self.boundaries, i)
        return (1 << l) / (2 * self.k)

    @cached_property
    def table(self) -> np.ndarray:
        """Probabilities indexed by local round; index 0 and the tail slot hold 0."""
        out = np.zeros(self.total_rounds + 2)
        start = 1
        for l, n in enumerate(self.block_lengths):
            out[start:start + n] = (1 << l) / (2 * self.k)
            start += n
        return out


def nak_probability(i: int, k: int, c: int) -> float:
    return NakSchedule(k, c).probability(i)


def sublinear_probability(i: int, b: int) -> float:
    if i < 1 or b < 1:
        raise ContractViolation("need i >= 1 and b >= 1")
    j = 3 + (i - 1) // b
    return math.log(j) / j


def cumulative_sum(probability: Callable[[int], float], i: int) -> float:
    """s(i): the sum of p(1..i)."""
    return math.fsum(probability(j) for j in range(1, i + 1))


class AckMode(enum.Enum):
    SWITCH_OFF = "on"
    IGNORE = "off"


class NaStation(StationProtocol):
    """Station driven by a fixed probability sequence; one draw per round."""

    __slots__ = ("payload", "p", "horizon", "switch_off", "alive", "silent_forever")

    def __init__(self, payload: Data, p: Callable[[int], float], horizon: int | None, switch_off: bool):
        self.payload = Transmit(payload)
        self.p = p
        self.horizon = horizon
        self.switch_off = switch_off
        self.alive = True
        self.silent_forever = False

    def act(self, local_round: int, rng: StationStream):
        u = rng.random()
        if self.horizon is not None and local_round >= self.horizon:
            self.silent_forever = True
        if u < self.p(local_round):
            return self.payload
        return LISTEN

    def observe(self, feedback: Feedback) -> None:
        if feedback is ACKED and self.switch_off:
            self.alive = False


class NonAdaptiveWithK(VectorizedProtocol):
    name = "nak"

    def __init__(self, k: int, c: int = 8):
        self.schedule = NakSchedule(k, c)
        self.k, self.c = k, c
        self.horizon = self.schedule.total_rounds
        self._table = self.schedule.table

    def probabilities(self, local_rounds: np.ndarray) -> np.ndarray:
        return self._table[np.minimum(local_rounds, self.horizon + 1)]

    def probability(self, i: int) -> float:
        return float(self._table[min(i, self.horizon + 1)])

    def new_station(self, payload: Data) -> NaStation:
        return NaStation(payload, self.probability, self.horizon, True)

    def config(self) -> dict:
        return {"name": self.name, "k": self.k, "c": self.c, "ack": "on"}


class SublinearDecrease(VectorizedProtocol):
    name = "sublinear"
    horizon = None

    def __init__(self, b: int = 8, ack: AckMode = AckMode.SWITCH_OFF):
        if b < 1:
            raise ContractViolation("b must be a positive integer")
        self.b = b
        self.ack = ack
        self.switch_off_on_ack = ack is AckMode.SWITCH_OFF
        self.until = UNTIL_OFF if self.switch_off_on_ack else UNTIL_DELIVERED
        self._by_j = np.zeros(0)

    def _values(self, j_max: int) -> np.ndarray:
        # cache of ln j / j indexed by j, grown geometrically
        if j_max >= self._by_j.size:
            n = max(2 * self._by_j.size, j_max + 1, 1024)
            j = np.arange(n, dtype=np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.log(j) / j
            vals[:3] = 0.0
            self._by_j = vals
        return self._by_j

    def probabilities(self, local_rounds: np.ndarray) -> np.ndarray:
        j = 3 + (np.asarray(local_rounds) - 1) // self.b
        return self._values(int(j.max()) if j.size else 3)[j]

    def probability(self, i: int) -> float:
        j = 3 + (i - 1) // self.b
        return float(self._values(j)[j])

    def new_station(self, payload: Data) -> NaStation:
        return NaStation(payload, self.probability, None, self.switch_off_on_ack)

    def config(self) -> dict:
        return {"name": self.name, "b": self.b, "ack": self.ack.value}


class ScriptedProtocol(VectorizedProtocol):
    """Fixed per-round probabilities ``probs[0], probs[1], ...`` then silence.

    Used for oracle cross-checks and hand-simulated scenarios.
    """

    name = "scripted"

    def __init__(self, probs, switch_off_on_ack: bool = True):
        self.probs = [float(p) for p in probs]
        self.horizon = len(self.probs)
        self.switch_off_on_ack = switch_off_on_ack
        self._table = np.array([0.0] + self.probs + [0.0])

    def probabilities(self, local_rounds: np.ndarray) -> np.ndarray:
        return self._table[np.minimum(local_rounds, self.horizon + 1)]

    def probability(self, i: int) -> float:
        return float(self._table[min(i, self.horizon + 1)])

    def new_station(self, payload: Data) -> NaStation:
        return NaStation(payload, self.probability, self.horizon, self.switch_off_on_ack)

    def config(self) -> dict:
        return {"name": self.name, "probs": self.probs}


def schedule_csv(protocol: VectorizedProtocol, rounds: int) -> str:
    """Export ``i, p(i)`` for local rounds ``1..rounds`` as CSV."""
    i = np.arange(1, rounds + 1)
    p = protocol.probabilities(i)
    lines = ["i,p"] + [f"{a},{b!r}" for a, b in zip(i.tolist(), p.tolist())]
    return "\n".join(lines) + "\n"
