"""Messages, actions, round outcomes and feedback on the shared channel.

The channel has no collision detection: a listener cannot tell a collision
from silence, and the only thing a transmitter learns is whether it was
acknowledged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Union


class ContractViolation(AssertionError):
    """Raised when a caller breaks an operation's precondition."""


@dataclass(frozen=True, slots=True)
class Data:
    tag: int


@dataclass(frozen=True, slots=True)
class ControlBit:
    bit: int

    def __post_init__(self):
        if self.bit not in (0, 1):
            raise ValueError(f"control bit must be 0 or 1, got {self.bit!r}")


Message = Union[Data, ControlBit]

D_MODE = ControlBit(0)
ANYBODY_THERE = ControlBit(1)


@dataclass(frozen=True, slots=True)
class Transmit:
    message: Message


class _Listen:
    __slots__ = ()

    def __repr__(self):
        return "LISTEN"

    def __reduce__(self):
        return "LISTEN"


LISTEN = _Listen()
Action = Union[Transmit, _Listen]


class OutcomeKind(enum.Enum):
    SILENCE = "silence"
    SUCCESS = "success"
    COLLISION = "collision"


@dataclass(frozen=True, slots=True)
class RoundOutcome:
    kind: OutcomeKind
    sender: int | None = None
    message: Message | None = None
    transmitters: int = 0


SILENCE = RoundOutcome(OutcomeKind.SILENCE)


def success(sender: int, message: Message) -> RoundOutcome:
    return RoundOutcome(OutcomeKind.SUCCESS, sender, message, 1)


def collision(m: int) -> RoundOutcome:
    if m < 2:
        raise ValueError("a collision needs at least two transmitters")
    return RoundOutcome(OutcomeKind.COLLISION, transmitters=m)


class FeedbackKind(enum.Enum):
    ACKED = "acked"
    TRANSMITTED_NO_ACK = "transmitted-no-ack"
    HEARD = "heard"
    NOTHING_HEARD = "nothing-heard"


@dataclass(frozen=True, slots=True)
class Feedback:
    kind: FeedbackKind
    message: Message | None = None


ACKED = Feedback(FeedbackKind.ACKED)
TRANSMITTED_NO_ACK = Feedback(FeedbackKind.TRANSMITTED_NO_ACK)
NOTHING_HEARD = Feedback(FeedbackKind.NOTHING_HEARD)


def heard(message: Message) -> Feedback:
    return Feedback(FeedbackKind.HEARD, message)


def arbitrate(actions: Iterable[tuple[int, Action]]) -> RoundOutcome:
    """Resolve one round: silence, a single success, or a collision."""
    sender = None
    message = None
    m = 0
    for station_id, action in actions:
        if action is LISTEN:
            continue
        m += 1
        sender, message = station_id, action.message
    if m == 0:
        return SILENCE
    if m == 1:
        return success(sender, message)
    return collision(m)


def feedback_for(outcome: RoundOutcome, action: Action, am_sender: bool) -> Feedback:
    if action is LISTEN:
        if am_sender:
            raise ContractViolation("a listening station cannot be the round's sender")
        if outcome.kind is OutcomeKind.SUCCESS:
            return heard(outcome.message)
        return NOTHING_HEARD
    if am_sender:
        if outcome.kind is not OutcomeKind.SUCCESS:
            raise ContractViolation("sender flag set on a round without a success")
        return ACKED
    return TRANSMITTED_NO_ACK


def message_kind(message: Message | None) -> str:
    if message is None:
        return "none"
    if isinstance(message, Data):
        return "data"
    return f"bit{message.bit}"
