"""Round-by-round execution of the slotted channel.

Each reference round ``t = 1, 2, ...``:

1. the wake-up source activates new stations (activation round ``t - 1``);
2. every alive station chooses Transmit or Listen from its local clock,
   its own state and its own random stream;
3. the channel is arbitrated;
4. feedback is delivered and stations update (possibly switching off).

Protocols never see station ids or the reference clock.  Non-adaptive
protocols also run on a vectorized path that consumes exactly the same
per-station random draws, so both paths produce identical records.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .adversary import (
    AdaptiveStrategy, ObliviousSchedule, PublicHistory, ScheduleError, WakeupSource,
)
from .channel import (
    ACKED, LISTEN, NOTHING_HEARD, SILENCE, TRANSMITTED_NO_ACK, Action, Data,
    Feedback, OutcomeKind, collision, heard, message_kind, success,
)
from .rng import StationStream, station_keys, uniforms_at

UNTIL_OFF = "off"
UNTIL_DELIVERED = "delivered"
UNTIL_FIRST_SUCCESS = "first_success"


class StationProtocol:
    """Per-station protocol state machine.

    ``act`` is called once per round while the station is alive and must
    return an action; ``observe`` receives that round's feedback.  Setting
    ``alive = False`` switches the station off for good.
    """

    alive = True
    silent_forever = False

    def act(self, local_round: int, rng: StationStream) -> Action:
        raise NotImplementedError

    def observe(self, feedback: Feedback) -> None:
        pass


class Protocol:
    """Factory of fresh per-station protocol states."""

    name = "protocol"
    until = UNTIL_OFF

    def new_station(self, payload: Data) -> StationProtocol:
        raise NotImplementedError

    def config(self) -> dict:
        return {"name": self.name}


class VectorizedProtocol(Protocol):
    """Non-adaptive protocol: one Bernoulli draw per local round.

    ``probabilities`` maps an array of local rounds (>= 1) to transmit
    probabilities; ``horizon`` is the last local round with a non-zero
    probability (``None`` when unbounded).
    """

    switch_off_on_ack = True
    horizon: int | None = None

    def probabilities(self, local_rounds: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def default_max_rounds(k: int) -> int:
    lg = math.ceil(math.log2(k)) if k > 1 else 0
    return 64 * k * (1 + lg * lg)


@dataclass(frozen=True, slots=True)
class RoundRecord:
    round: int
    woken: int
    transmitters: tuple[int, ...]
    outcome: OutcomeKind
    sender: int
    message: str
    # message kind per transmitter, aligned with ``transmitters``
    sent: tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round, "woken": self.woken,
            "transmitters": len(self.transmitters), "outcome": self.outcome.value,
            "sender": self.sender, "message": self.message,
        }, separators=(",", ":"))


@dataclass
class Trace:
    rounds: list[RoundRecord] = field(default_factory=list)
    # (round, station id, new status); only protocols exposing ``status`` emit these
    transitions: list[tuple[int, int, str]] = field(default_factory=list)


@dataclass
class TrialRecord:
    seed: int
    k: int
    activation: list[int]
    first_success: list[int | None]
    transmissions: list[int]
    off_round: list[int | None]
    completed: bool
    rounds_used: int
    warnings: list[str] = field(default_factory=list)
    trace: Trace | None = None

    @property
    def woken(self) -> int:
        return len(self.activation)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "k": self.k, "completed": self.completed,
            "rounds_used": self.rounds_used, "activation": self.activation,
            "first_success": self.first_success, "transmissions": self.transmissions,
            "off_round": self.off_round, "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(d["seed"], d["k"], d["activation"], d["first_success"], d["transmissions"],
                   d["off_round"], d["completed"], d["rounds_used"], d.get("warnings", []))


def trace_lines(record: TrialRecord) -> Iterator[str]:
    """Newline-delimited export: one line per round, then one summary line per station."""
    if record.trace is None:
        raise ValueError("record was produced without trace storage")
    for r in record.trace.rounds:
        yield r.to_json()
    for i, (a, s, n) in enumerate(zip(record.activation, record.first_success, record.transmissions)):
        yield json.dumps({"id": i, "activation": a,
                          "first_success": -1 if s is None else s,
                          "transmissions": n}, separators=(",", ":"))


class _Source:
    """Uniform view over oblivious schedules and adaptive strategies."""

    def __init__(self, source: WakeupSource, k: int):
        self.adaptive = isinstance(source, AdaptiveStrategy)
        self.history = PublicHistory()
        self.warnings: list[str] = []
        if self.adaptive:
            if source.k > k:
                raise ScheduleError(f"strategy budget {source.k} exceeds k={k}")
            self.strategy = source
        elif isinstance(source, ObliviousSchedule):
            if source.total > k:
                raise ScheduleError(f"schedule wakes {source.total} stations, budget is k={k}")
            self.pending = deque(source.entries)
        else:
            raise TypeError(f"not a wake-up source: {source!r}")

    def wakes(self, t: int) -> int:
        """Stations activated at round ``t - 1`` (they act from round ``t``)."""
        if self.adaptive:
            s = self.strategy
            n = 0 if s.exhausted else int(s.decide(self.history))
            if n < 0:
                raise ScheduleError(f"strategy returned a negative wake count {n}")
            if n > s.remaining:
                self.warnings.append(f"round {t}: adversary asked for {n} wakes, clamped to {s.remaining}")
                n = s.remaining
            s.remaining -= n
        else:
            n = 0
            while self.pending and self.pending[0][0] <= t - 1:
                n += self.pending.popleft()[1]
        self.history.wakes.append(n)
        return n

    def done(self, any_alive: bool) -> bool:
        if self.adaptive:
            return self.strategy.exhausted or (not any_alive and self.strategy.idle_when_empty)
        return not self.pending

    def next_wake_round(self) -> int | None:
        """Earliest reference round at which an oblivious schedule wakes someone."""
        if self.adaptive or not self.pending:
            return None
        return self.pending[0][0] + 1

    def record(self, kind: OutcomeKind) -> None:
        self.history.outcomes.append(kind)


def _skip_idle(src: _Source, t: int, nxt: int) -> None:
    # rounds t..nxt-1 are silent; round t's wake query already happened
    src.history.outcomes.extend([OutcomeKind.SILENCE] * (nxt - t))
    src.history.wakes.extend([0] * (nxt - t - 1))


def run_simulation(protocol: Protocol, source: WakeupSource, k: int, max_rounds: int | None = None,
                   seed: int = 0, record_trace: bool = False, until: str | None = None,
                   engine: str = "auto") -> TrialRecord:
    """Run one execution and return its :class:`TrialRecord`.

    ``until`` is ``"off"`` (every station switched off), ``"delivered"``
    (every station succeeded at least once) or ``"first_success"``; it
    defaults to the protocol's own setting.  ``engine`` selects
    ``"reference"`` (per-station objects), ``"vector"`` or ``"auto"``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_rounds is None:
        max_rounds = default_max_rounds(k)
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    until = until or protocol.until
    if until not in (UNTIL_OFF, UNTIL_DELIVERED, UNTIL_FIRST_SUCCESS):
        raise ValueError(f"unknown termination mode {until!r}")
    src = _Source(source, k)
    vectorizable = isinstance(protocol, VectorizedProtocol)
    if engine == "vector" and not vectorizable:
        raise ValueError(f"protocol {protocol.name} has no vectorized form")
    if engine not in ("auto", "vector", "reference"):
        raise ValueError(f"unknown engine {engine!r}")
    if vectorizable and engine != "reference":
        return _run_vector(protocol, src, k, max_rounds, seed, record_trace, until)
    return _run_reference(protocol, src, k, max_rounds, seed, record_trace, until)


class _Runtime:
    __slots__ = ("id", "tv", "proto", "rng", "status", "act", "observe")

    def __init__(self, sid, tv, proto, rng):
        self.id = sid
        self.tv = tv
        self.proto = proto
        self.rng = rng
        self.status = None
        self.act = proto.act
        self.observe = proto.observe


def _run_reference(protocol, src, k, max_rounds, seed, record_trace, until):
    activation: list[int] = []
    first_success: list[int | None] = []
    transmissions: list[int] = []
    off_round: list[int | None] = []
    alive: list[_Runtime] = []
    trace = Trace() if record_trace else None
    delivered = 0
    completed = False
    rounds_used = max_rounds

    def finished(any_alive):
        if until == UNTIL_OFF:
            return not any_alive and src.done(False)
        if until == UNTIL_DELIVERED:
            return delivered == len(activation) and src.done(any_alive)
        return False

    t = 1
    while t <= max_rounds:
        woken = src.wakes(t)
        for _ in range(woken):
            sid = len(activation)
            proto = protocol.new_station(Data(sid))
            rt = _Runtime(sid, t - 1, proto, StationStream(seed, sid))
            activation.append(t - 1)
            first_success.append(None)
            transmissions.append(0)
            off_round.append(None)
            alive.append(rt)
            if trace is not None:
                rt.status = getattr(proto, "status", None)
                if rt.status is not None:
                    trace.transitions.append((t - 1, sid, rt.status))
        if finished(bool(alive)):
            rounds_used, completed = t - 1, True
            break
        if trace is None and src.done(bool(alive)) and until != UNTIL_FIRST_SUCCESS:
            if all(rt.proto.silent_forever for rt in alive):
                break
        if not alive and trace is None:
            nxt = src.next_wake_round()
            if nxt is not None and nxt > t:
                _skip_idle(src, t, min(nxt, max_rounds + 1))
                t = nxt
                continue

        acts = [rt.act(t - rt.tv, rt.rng) for rt in alive]
        tx_pos = [i for i, a in enumerate(acts) if a is not LISTEN]
        m = len(tx_pos)
        if m == 0:
            outcome = SILENCE
            listener_fb = NOTHING_HEARD
        elif m == 1:
            sender = alive[tx_pos[0]]
            message = acts[tx_pos[0]].message
            outcome = success(sender.id, message)
            listener_fb = heard(message)
        else:
            outcome = collision(m)
            listener_fb = NOTHING_HEARD
        alive_before = alive
        fbs = [listener_fb] * len(alive)
        tx_fb = ACKED if m == 1 else TRANSMITTED_NO_ACK
        for i in tx_pos:
            transmissions[alive[i].id] += 1
            fbs[i] = tx_fb
        if m == 1 and first_success[outcome.sender] is None:
            first_success[outcome.sender] = t
            delivered += 1
        src.record(outcome.kind)

        for rt, fb in zip(alive, fbs):
            rt.observe(fb)
        if trace is not None:
            for rt in alive:
                st = getattr(rt.proto, "status", None)
                if st != rt.status:
                    rt.status = st
                    trace.transitions.append((t, rt.id, st))
        survivors = [rt for rt in alive if rt.proto.alive]
        if len(survivors) != len(alive):
            for rt in alive:
                if not rt.proto.alive:
                    off_round[rt.id] = t
            alive = survivors
        if trace is not None:
            sent = sorted((alive_before[i].id, message_kind(acts[i].message)) for i in tx_pos)
            trace.rounds.append(RoundRecord(
                t, woken, tuple(i for i, _ in sent), outcome.kind,
                -1 if outcome.sender is None else outcome.sender, message_kind(outcome.message),
                tuple(kind for _, kind in sent)))
        if until == UNTIL_FIRST_SUCCESS and m == 1:
            rounds_used, completed = t, True
            break
        t += 1
    else:
        completed = finished(bool(alive))

    return TrialRecord(seed, k, activation, first_success, transmissions, off_round,
                       completed, rounds_used, src.warnings, trace)


def _run_vector(protocol, src, k, max_rounds, seed, record_trace, until):
    ids = np.arange(k)
    keys = station_keys(seed, ids)
    tv = np.zeros(k, dtype=np.int64)
    first = np.full(k, -1, dtype=np.int64)
    off = np.full(k, -1, dtype=np.int64)
    tx_count = np.zeros(k, dtype=np.int64)
    live = np.zeros(0, dtype=np.int64)
    n_act = 0
    delivered = 0
    switch_off = protocol.switch_off_on_ack
    horizon = protocol.horizon
    trace = Trace() if record_trace else None
    completed = False
    rounds_used = max_rounds

    def finished(any_alive):
        if until == UNTIL_OFF:
            return not any_alive and src.done(False)
        if until == UNTIL_DELIVERED:
            return delivered == n_act and src.done(any_alive)
        return False

    t = 1
    while t <= max_rounds:
        woken = src.wakes(t)
        if woken:
            new = np.arange(n_act, n_act + woken)
            tv[new] = t - 1
            live = np.concatenate([live, new])
            n_act += woken
        if finished(live.size > 0):
            rounds_used, completed = t - 1, True
            break
        if trace is None and until != UNTIL_FIRST_SUCCESS and src.done(live.size > 0):
            if horizon is not None and (live.size == 0 or (t - tv[live]).min() > horizon):
                break
        if live.size == 0 and trace is None:
            nxt = src.next_wake_round()
            if nxt is not None and nxt > t:
                _skip_idle(src, t, min(nxt, max_rounds + 1))
                t = nxt
                continue

        local = t - tv[live]
        p = protocol.probabilities(local)
        u = uniforms_at(keys[live], local - 1)
        tx = live[u < p]
        m = tx.size
        if m:
            tx_count[tx] += 1
        if m == 1:
            s = int(tx[0])
            kind = OutcomeKind.SUCCESS
            if first[s] < 0:
                first[s] = t
                delivered += 1
            if switch_off:
                off[s] = t
                live = live[live != s]
        else:
            s = -1
            kind = OutcomeKind.SILENCE if m == 0 else OutcomeKind.COLLISION
        src.record(kind)
        if trace is not None:
            trace.rounds.append(RoundRecord(
                t, woken, tuple(int(x) for x in np.sort(tx)), kind, s, "data" if m == 1 else "none",
                ("data",) * m))
        if until == UNTIL_FIRST_SUCCESS and m == 1:
            rounds_used, completed = t, True
            break
        t += 1
    else:
        completed = finished(live.size > 0)

    n = n_act
    return TrialRecord(
        seed, k, tv[:n].tolist(),
        [None if x < 0 else int(x) for x in first[:n]],
        tx_count[:n].tolist(),
        [None if x < 0 else int(x) for x in off[:n]],
        completed, rounds_used, src.warnings, trace)


def sigma_hat(t: int, activations: Sequence[int], probabilities: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum of p(t - t_v) over every station activated before round ``t``."""
    local = [t - tv for tv in activations if tv < t]
    if not local:
        return 0.0
    return float(sum(float(probabilities(np.array([i]))[0]) for i in local))


def sigma(t: int, record: TrialRecord, probabilities: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum of p(t - t_v) over the stations alive in round ``t``."""
    total = 0.0
    for tv, off in zip(record.activation, record.off_round):
        if tv < t and (off is None or t <= off):
            total += float(probabilities(np.array([t - tv]))[0])
    return total
