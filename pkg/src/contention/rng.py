"""Counter-based random streams.

Every station owns a stream keyed by ``(trial_seed, station_id)``; the n-th
draw is a pure function of the key and n.  Wake-up order therefore cannot
shift one station's randomness onto another, and the vectorized engine can
reproduce exactly the draws the per-station engine makes.

The mixing function is the SplitMix64 finalizer.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_ID_SALT = 0xD1B54A32D192ED03
_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_vec(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def station_key(seed: int, station_id: int) -> int:
    return _mix((seed & _MASK) ^ _mix((station_id * _ID_SALT) & _MASK))


def station_keys(seed: int, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_vec(np.uint64(seed & _MASK) ^ _mix_vec(ids * np.uint64(_ID_SALT)))


def uniform_at(key: int, counter: int) -> float:
    """The ``counter``-th uniform in [0, 1) of the stream with ``key``."""
    z = _mix((key + counter * _GOLDEN) & _MASK)
    return (z >> 11) * _INV_2_53


def uniforms_at(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Vectorized :func:`uniform_at`; elementwise over ``keys`` and ``counters``."""
    counters = np.asarray(counters).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = _mix_vec(keys + counters * np.uint64(_GOLDEN))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


class StationStream:
    """Sequential view of one station's counter-based stream."""

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, station_id: int):
        self.key = station_key(seed, station_id)
        self.counter = 0

    def random(self) -> float:
        u = uniform_at(self.key, self.counter)
        self.counter += 1
        return u

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def choice(self, n: int) -> int:
        """Uniform integer in ``1..n``."""
        return min(int(self.random() * n), n - 1) + 1


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    """Independent 64-bit seeds for ``trials`` runs derived from one master seed."""
    ss = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1, np.uint64)[0]) for child in ss.spawn(trials)]


def adversary_rng(trial_seed: int) -> np.random.Generator:
    """Generator for random wake-up schedules, disjoint from station streams."""
    return np.random.default_rng(np.random.SeedSequence(trial_seed, spawn_key=(0xAD,)))
