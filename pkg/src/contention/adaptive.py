"""Adaptive contention resolution without knowledge of k.

Stations alternate between leader election (L) and dissemination (D).
In L they run DecreaseSlowly until one of them is acknowledged; that
station leads, every other L station becomes a follower, and all of them
start a shared round counter ``tc``.  In D, followers run sawtooth
back-off on odd ``tc``; on even ``tc`` the leader keeps newcomers waiting
with ``D_MODE`` bits and, at powers of two, everybody sends
``ANYBODY_THERE`` so that an acknowledged leader knows it is alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ACKED, ANYBODY_THERE, D_MODE, LISTEN, ContractViolation, Data, Feedback, FeedbackKind,
    Message, Transmit,
)
from .engine import UNTIL_FIRST_SUCCESS, Protocol, StationProtocol, Trace, VectorizedProtocol
from .rng import StationStream

WAITING, LEADER_ELECTION, DISSEMINATION, OFF = "waiting", "L", "D", "off"
LISTEN_WINDOW = 4


def ds_probability(i: int, q: float) -> float:
    if q <= 0 or i < 0:
        raise ContractViolation("need q > 0 and i >= 0")
    return q / (2 * q + i)


class DecreaseSlowly(VectorizedProtocol):
    """Wake-up protocol: transmit with probability q / (2q + i), i counting from 0.

    Standalone use stops at the first success; the acknowledged station is
    the leader.
    """

    name = "decrease-slowly"
    until = UNTIL_FIRST_SUCCESS
    horizon = None

    def __init__(self, q: float = 2.0):
        if q <= 0:
            raise ContractViolation("q must be positive")
        self.q = q

    def probabilities(self, local_rounds: np.ndarray) -> np.ndarray:
        return self.q / (2 * self.q + (np.asarray(local_rounds) - 1))

    def new_station(self, payload: Data) -> "_DecreaseSlowlyStation":
        return _DecreaseSlowlyStation(payload, self.q)

    def config(self) -> dict:
        return {"name": self.name, "q": self.q}


@dataclass(slots=True)
class DecreaseSlowlyState:
    q: float
    i: int = 0
    is_leader: bool = False

    def draw(self, rng: StationStream) -> bool:
        """One round: True to transmit."""
        tx = rng.random() < self.q / (2 * self.q + self.i)
        self.i += 1
        return tx


class _DecreaseSlowlyStation(StationProtocol):
    def __init__(self, payload: Data, q: float):
        self.payload = Transmit(payload)
        self.state = DecreaseSlowlyState(q)

    def act(self, local_round, rng):
        return self.payload if self.state.draw(rng) else LISTEN

    def observe(self, feedback):
        if feedback is ACKED:
            self.state.is_leader = True
            self.alive = False


def sawtooth_layout(phase: int) -> list[int]:
    """Subwindow sizes of one phase: 2**phase, 2**(phase-1), ..., 1."""
    if phase < 1:
        raise ContractViolation("phases start at 1")
    return [1 << e for e in range(phase, -1, -1)]


@dataclass(slots=True)
class SawtoothState:
    """Back-on/back-off: phases of halving subwindows, one uniform slot per subwindow."""

    phase: int = 1
    window: int = 0
    offset: int = 0
    chosen: int = 0
    done: bool = False
    started: bool = False

    def __post_init__(self):
        if self.phase < 1:
            raise ContractViolation("phases start at 1")
        self.window = 1 << self.phase

    def start(self, slot: int) -> None:
        """Enter at shared slot ``slot``; only the first slot of the layout is allowed."""
        if slot != 1:
            raise ContractViolation(f"sawtooth entered mid-schedule at slot {slot}")
        self.started = True

    def slot(self, rng: StationStream) -> bool:
        """Advance one slot; True if this station transmits in it."""
        if not self.started:
            raise ContractViolation("sawtooth used before start()")
        if self.offset == 0:
            self.chosen = rng.choice(self.window)
        self.offset += 1
        tx = self.offset == self.chosen
        if self.offset == self.window:
            self.offset = 0
            if self.window == 1:
                self.phase += 1
                self.window = 1 << self.phase
            else:
                self.window >>= 1
        return tx


class Sawtooth(Protocol):
    """Sawtooth back-off for stations woken together; every round is a slot."""

    name = "sawtooth"

    def __init__(self, initial_phase: int = 1):
        self.initial_phase = initial_phase

    def new_station(self, payload: Data) -> "_SawtoothStation":
        return _SawtoothStation(payload, self.initial_phase)

    def config(self) -> dict:
        return {"name": self.name, "sawtooth_initial_phase": self.initial_phase}


class _SawtoothStation(StationProtocol):
    def __init__(self, payload: Data, phase: int):
        self.payload = Transmit(payload)
        self.state = SawtoothState(phase)

    def act(self, local_round, rng):
        if local_round == 1:
            self.state.start(1)
        return self.payload if self.state.slot(rng) else LISTEN

    def observe(self, feedback):
        if feedback is ACKED:
            self.state.done = True
            self.alive = False


def is_control_round(tc: int, min_exponent: int) -> bool:
    """tc == 2**x for some integer x >= min_exponent."""
    return tc >= (1 << min_exponent) and tc & (tc - 1) == 0


class AdaptiveNoK(Protocol):
    """Two-mode adaptive protocol with one-bit control messages.

    ``min_control_exponent`` picks the first power of two used as an
    ``ANYBODY_THERE`` round: 2 makes tc = 4, 8, 16, ... control rounds and
    keeps tc = 2 a ``D_MODE`` round.
    """

    name = "adaptive"

    def __init__(self, q: float = 2.0, initial_phase: int = 1, min_control_exponent: int = 2):
        if q <= 0:
            raise ContractViolation("q must be positive")
        if min_control_exponent < 1:
            raise ContractViolation("control rounds need an exponent >= 1")
        self.q = q
        self.initial_phase = initial_phase
        self.min_control_exponent = min_control_exponent

    def new_station(self, payload: Data) -> "AdaptiveNokState":
        return AdaptiveNokState(payload, self.q, self.initial_phase, 1 << self.min_control_exponent)

    def config(self) -> dict:
        return {"name": self.name, "q": self.q, "sawtooth_initial_phase": self.initial_phase,
                "min_control_exponent": self.min_control_exponent}


class AdaptiveNokState(StationProtocol):
    """One station running AdaptiveNoK.

    ``status`` moves Waiting -> L -> D -> Off; Waiting repeats its 4-round
    listening window until it hears nothing, or hears ANYBODY_THERE last.
    """

    __slots__ = ("payload", "q", "initial_phase", "first_control", "mode", "window_rounds",
                 "last_heard", "tc", "is_leader", "delivered", "ds", "su", "sent", "alive")

    def __init__(self, payload: Data, q: float, initial_phase: int = 1, first_control: int = 4):
        self.payload = Transmit(payload)
        self.q = q
        self.initial_phase = initial_phase
        self.first_control = first_control
        self.mode = WAITING
        self.window_rounds = 0
        self.last_heard: Message | None = None
        self.tc = 0
        self.is_leader = False
        self.delivered = False
        self.ds: DecreaseSlowlyState | None = None
        self.su: SawtoothState | None = None
        self.sent: Transmit | None = None
        self.alive = True

    @property
    def status(self) -> str:
        if self.mode is DISSEMINATION:
            return "D-leader" if self.is_leader else "D-follower"
        return self.mode

    def act(self, local_round: int, rng: StationStream):
        mode = self.mode
        if mode is WAITING:
            self.sent = None
        elif mode is LEADER_ELECTION:
            self.sent = self.payload if self.ds.draw(rng) else None
        else:
            tc = self.tc
            if tc & 1:
                self.sent = None if self.is_leader or not self.su.slot(rng) else self.payload
            elif tc >= self.first_control and tc & (tc - 1) == 0:
                self.sent = _QUERY
            else:
                self.sent = _DMODE if self.is_leader else None
        return LISTEN if self.sent is None else self.sent

    def observe(self, feedback: Feedback) -> None:
        mode = self.mode
        if mode is DISSEMINATION:
            if feedback is ACKED:
                if self.sent is self.payload:
                    self.delivered = True
                    self._switch_off()
                    return
                if self.is_leader and self.sent is _QUERY:
                    self._switch_off()
                    return
            self.tc += 1
        elif mode is WAITING:
            self.window_rounds += 1
            if feedback.kind is FeedbackKind.HEARD:
                self.last_heard = feedback.message
            if self.window_rounds == LISTEN_WINDOW:
                # a message heard after the final ANYBODY_THERE means a new election already ran
                if self.last_heard is None or self.last_heard == ANYBODY_THERE:
                    self.mode = LEADER_ELECTION
                    self.ds = DecreaseSlowlyState(self.q)
                self.window_rounds = 0
                self.last_heard = None
        elif mode is LEADER_ELECTION:
            if feedback is ACKED:
                self.is_leader = self.ds.is_leader = True
                self.delivered = True
                self._enter_dissemination()
            elif feedback.kind is FeedbackKind.HEARD and isinstance(feedback.message, Data):
                self._enter_dissemination()
                self.su = SawtoothState(self.initial_phase)
                self.su.start(1)

    def _enter_dissemination(self):
        # the election round is tc = 0; the next round is tc = 1
        self.mode = DISSEMINATION
        self.tc = 1

    def _switch_off(self):
        self.mode = OFF
        self.alive = False


_QUERY = Transmit(ANYBODY_THERE)
_DMODE = Transmit(D_MODE)


@dataclass
class Epoch:
    leader: int
    election_round: int
    end_round: int | None
    members: tuple[int, ...]
    member_off_rounds: dict[int, int | None] = field(default_factory=dict)


class MalformedTrace(ValueError):
    pass


def epoch_extractor(trace: Trace) -> list[Epoch]:
    """Recover L/D epochs from the status transitions of an AdaptiveNoK trace."""
    if trace is None or not trace.transitions:
        raise MalformedTrace("trace carries no status transitions; was it recorded from AdaptiveNoK?")
    by_round: dict[int, list[tuple[int, str]]] = {}
    for t, sid, st in trace.transitions:
        by_round.setdefault(t, []).append((sid, st))
    off_round: dict[int, int] = {sid: t for t, sid, st in trace.transitions if st == OFF}
    epochs = []
    for t in sorted(by_round):
        leaders = [sid for sid, st in by_round[t] if st == "D-leader"]
        followers = tuple(sorted(sid for sid, st in by_round[t] if st == "D-follower"))
        if not leaders:
            if followers:
                raise MalformedTrace(f"round {t}: followers entered D without a leader")
            continue
        if len(leaders) > 1:
            raise MalformedTrace(f"round {t}: {len(leaders)} leaders elected at once")
        leader = leaders[0]
        epochs.append(Epoch(leader, t, off_round.get(leader), followers,
                            {f: off_round.get(f) for f in followers}))
    return epochs


def check_epoch_invariants(trace: Trace, min_control_exponent: int = 2) -> list[str]:
    """Return human-readable violations of the epoch invariants (empty when clean)."""
    problems = []
    try:
        epochs = epoch_extractor(trace)
    except MalformedTrace as exc:
        return [str(exc)]
    for prev, nxt in zip(epochs, epochs[1:]):
        if prev.end_round is None or nxt.election_round <= prev.end_round:
            problems.append(f"epochs at rounds {prev.election_round} and {nxt.election_round} overlap")
    statuses: dict[int, str] = {}
    transitions = sorted(trace.transitions)
    ti = 0
    for rec in trace.rounds:
        while ti < len(transitions) and transitions[ti][0] < rec.round:
            _, sid, st = transitions[ti]
            statuses[sid] = st
            ti += 1
        current = next((e for e in epochs if e.election_round < rec.round
                        and (e.end_round is None or rec.round <= e.end_round)), None)
        for sid, kind in zip(rec.transmitters, rec.sent):
            if statuses.get(sid) == WAITING:
                problems.append(f"round {rec.round}: waiting station {sid} transmitted")
            if not kind.startswith("bit"):
                continue
            if current is None:
                problems.append(f"round {rec.round}: control bit outside any D mode")
                continue
            tc = rec.round - current.election_round
            if kind == "bit0" and sid != current.leader:
                problems.append(f"round {rec.round}: D_MODE sent by {sid}, leader is {current.leader}")
            if kind == "bit1" and not is_control_round(tc, min_control_exponent):
                problems.append(f"round {rec.round}: ANYBODY_THERE at tc={tc}")
    for e in epochs:
        if e.end_round is None:
            continue
        for f, off in e.member_off_rounds.items():
            if off is None or off >= e.end_round:
                problems.append(f"follower {f} of epoch at {e.election_round} outlived its leader")
    data_successes: dict[int, int] = {}
    for rec in trace.rounds:
        if rec.outcome.value == "success" and rec.message == "data":
            data_successes[rec.sender] = data_successes.get(rec.sender, 0) + 1
    for sid, n in data_successes.items():
        if n != 1:
            problems.append(f"station {sid} delivered its packet {n} times")
    return problems
