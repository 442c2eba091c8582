"""Domain types for slice admission and the feasible occupancy space.

Classes are indexed from 0.  Resource quantities are integers in their
natural unit (Mbps, CPUs, GB), so feasibility checks are exact.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SliceClassSpec",
    "ResourceCapacity",
    "EventKind",
    "Event",
    "SmdpState",
    "Action",
    "StateSpaceTooLarge",
    "InfeasibleAccept",
    "DEFAULT_STATE_CEILING",
    "enumerate_states",
    "fits",
    "apply",
    "SlicingProblem",
]

DEFAULT_STATE_CEILING = 5000


class StateSpaceTooLarge(ValueError):
    """Raised when enumeration would exceed the configured ceiling."""


class InfeasibleAccept(ValueError):
    """Raised when an accept would violate a resource constraint."""


@dataclass(frozen=True)
class SliceClassSpec:
    class_id: int
    arrival_rate: float
    completion_rate: float
    reward: float
    radio_demand: int
    compute_demand: int
    storage_demand: int

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")
        if not self.arrival_rate > 0:
            raise ValueError(f"arrival_rate must be > 0, got {self.arrival_rate}")
        if not self.completion_rate > 0:
            raise ValueError(f"completion_rate must be > 0, got {self.completion_rate}")
        if not self.reward >= 0:
            raise ValueError(f"reward must be >= 0, got {self.reward}")
        demands = self.demands
        if min(demands) < 0:
            raise ValueError(f"demands must be >= 0, got {demands}")
        if max(demands) <= 0:
            raise ValueError("at least one demand must be positive")

    @property
    def demands(self) -> tuple[int, int, int]:
        return (self.radio_demand, self.compute_demand, self.storage_demand)


@dataclass(frozen=True)
class ResourceCapacity:
    radio: int
    compute: int
    storage: int

    def __post_init__(self):
        if min(self.as_tuple()) <= 0:
            raise ValueError(f"capacities must be strictly positive, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.radio, self.compute, self.storage)


class EventKind(enum.IntEnum):
    ARRIVAL = 0
    DEPARTURE = 1
    TRIVIAL = 2


@dataclass(frozen=True)
class Event:
    kind: EventKind
    class_id: int | None = None

    def __post_init__(self):
        if self.kind == EventKind.TRIVIAL:
            if self.class_id is not None:
                raise ValueError("trivial event carries no class")
        elif self.class_id is None or self.class_id < 0:
            raise ValueError(f"{self.kind.name.lower()} needs a class id")

    @classmethod
    def arrival(cls, c: int) -> "Event":
        return cls(EventKind.ARRIVAL, c)

    @classmethod
    def departure(cls, c: int) -> "Event":
        return cls(EventKind.DEPARTURE, c)

    @classmethod
    def trivial(cls) -> "Event":
        return cls(EventKind.TRIVIAL)

    @property
    def is_arrival(self) -> bool:
        return self.kind == EventKind.ARRIVAL

    def code(self, n_classes: int) -> int:
        """Integer code: arrivals 0..C-1, departures C..2C-1, trivial 2C."""
        if self.kind == EventKind.ARRIVAL:
            return self.class_id
        if self.kind == EventKind.DEPARTURE:
            return n_classes + self.class_id
        return 2 * n_classes

    @classmethod
    def from_code(cls, code: int, n_classes: int) -> "Event":
        if code < n_classes:
            return cls.arrival(code)
        if code < 2 * n_classes:
            return cls.departure(code - n_classes)
        if code == 2 * n_classes:
            return cls.trivial()
        raise ValueError(f"event code {code} out of range for {n_classes} classes")

    def label(self) -> str:
        if self.kind == EventKind.TRIVIAL:
            return "trivial"
        return f"{self.kind.name.lower()}:{self.class_id}"


@dataclass(frozen=True)
class SmdpState:
    occupancy: tuple[int, ...]
    event: Event

    def __post_init__(self):
        object.__setattr__(self, "occupancy", tuple(int(n) for n in self.occupancy))
        if min(self.occupancy, default=0) < 0:
            raise ValueError(f"negative occupancy {self.occupancy}")
        c = self.event.class_id
        if c is not None and c >= len(self.occupancy):
            raise ValueError(f"event class {c} out of range")
        if self.event.kind == EventKind.DEPARTURE and self.occupancy[c] < 1:
            raise ValueError(f"departure of class {c} from empty class in {self.occupancy}")


class Action(enum.IntEnum):
    REJECT = 0
    ACCEPT = 1


def _demand_matrix(specs: Sequence[SliceClassSpec]) -> np.ndarray:
    # shape (C, 3)
    return np.array([s.demands for s in specs], dtype=np.int64).reshape(len(specs), 3)


def _check_specs(specs: Sequence[SliceClassSpec]):
    if len(specs) == 0:
        raise ValueError("need at least one slice class")
    ids = [s.class_id for s in specs]
    if ids != list(range(len(specs))):
        raise ValueError(f"class ids must be 0..C-1 in order, got {ids}")


def _used(occ: Sequence[int], demands: np.ndarray) -> np.ndarray:
    return np.asarray(occ, dtype=np.int64) @ demands


def enumerate_states(
    specs: Sequence[SliceClassSpec],
    cap: ResourceCapacity,
    max_states: int = DEFAULT_STATE_CEILING,
) -> list[tuple[int, ...]]:
    """Return every feasible occupancy vector in lexicographic order.

    Raises
    ------
    StateSpaceTooLarge
        If more than ``max_states`` occupancies are feasible.
    """
    _check_specs(specs)
    demands = _demand_matrix(specs)
    capv = np.array(cap.as_tuple(), dtype=np.int64)
    states: list[tuple[int, ...]] = []

    def bound(c: int, used: np.ndarray) -> int:
        free = capv - used
        d = demands[c]
        pos = d > 0
        return int(np.min(free[pos] // d[pos]))

    # depth-first in lexicographic order; every prefix is feasible by construction
    def walk(prefix: list[int], used: np.ndarray):
        c = len(prefix)
        if c == len(specs):
            states.append(tuple(prefix))
            if len(states) > max_states:
                raise StateSpaceTooLarge(
                    f"state space too large: more than {max_states} occupancies"
                )
            return
        for n in range(bound(c, used) + 1):
            walk(prefix + [n], used + n * demands[c])

    walk([], np.zeros(3, dtype=np.int64))
    return states


def _check_class(class_id: int, specs: Sequence[SliceClassSpec]):
    if not 0 <= class_id < len(specs):
        raise ValueError(f"unknown class_id {class_id}")


def fits(
    occ: Sequence[int],
    class_id: int,
    specs: Sequence[SliceClassSpec],
    cap: ResourceCapacity,
) -> bool:
    """True iff one more class ``class_id`` slice still satisfies all capacities."""
    _check_class(class_id, specs)
    demands = _demand_matrix(specs)
    used = _used(occ, demands) + demands[class_id]
    return bool(np.all(used <= np.array(cap.as_tuple())))


def apply(
    state: SmdpState,
    action: Action,
    specs: Sequence[SliceClassSpec],
    cap: ResourceCapacity,
) -> tuple[int, ...]:
    """Occupancy after resolving ``state.event`` with ``action``.

    Non-arrival events ignore the action; they are always a no-op decision.
    """
    occ = list(state.occupancy)
    ev = state.event
    if ev.kind == EventKind.ARRIVAL:
        if Action(action) == Action.ACCEPT:
            if not fits(occ, ev.class_id, specs, cap):
                raise InfeasibleAccept(
                    f"accepting class {ev.class_id} at {tuple(occ)} exceeds capacity"
                )
            occ[ev.class_id] += 1
    elif ev.kind == EventKind.DEPARTURE:
        occ[ev.class_id] -= 1
    return tuple(occ)


class SlicingProblem:
    """Slice classes plus capacity, with the state space precomputed as index tables.

    Decision states ``(occupancy, event)`` are flattened to
    ``x = s * (2C + 1) + event_code``.  ``up[s, c]`` is the index of the
    occupancy after accepting class ``c`` (``-1`` if it does not fit) and
    ``down[s, c]`` the index after a class ``c`` departure (``-1`` if empty).
    """

    def __init__(
        self,
        specs: Sequence[SliceClassSpec],
        capacity: ResourceCapacity,
        max_states: int = DEFAULT_STATE_CEILING,
    ):
        self.specs = tuple(specs)
        self.capacity = capacity
        self.states = enumerate_states(self.specs, capacity, max_states)
        self.index = {occ: i for i, occ in enumerate(self.states)}
        C = self.n_classes
        self.counts = np.array(self.states, dtype=np.int64).reshape(-1, C)
        self.arrival_rates = np.array([s.arrival_rate for s in self.specs], dtype=float)
        self.completion_rates = np.array([s.completion_rate for s in self.specs], dtype=float)
        self.rewards = np.array([s.reward for s in self.specs], dtype=float)
        self.demands = _demand_matrix(self.specs)
        self.used = self.counts @ self.demands  # (S, 3)
        S = len(self.states)
        self.up = np.full((S, C), -1, dtype=np.int64)
        self.down = np.full((S, C), -1, dtype=np.int64)
        for i, occ in enumerate(self.states):
            for c in range(C):
                bumped = list(occ)
                bumped[c] += 1
                self.up[i, c] = self.index.get(tuple(bumped), -1)
                if occ[c] > 0:
                    bumped[c] -= 2
                    self.down[i, c] = self.index[tuple(bumped)]
        self.event_rates = self.arrival_rates.sum() + self.counts @ self.completion_rates
        self.uniform_rate = float(self.event_rates.max())

    @property
    def n_classes(self) -> int:
        return len(self.specs)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_events(self) -> int:
        return 2 * self.n_classes + 1

    @property
    def n_decision_states(self) -> int:
        return self.n_states * self.n_events

    def headroom(self, s: int, c: int) -> int:
        """How many more class ``c`` slices fit on top of occupancy index ``s``."""
        free = np.array(self.capacity.as_tuple(), dtype=np.int64) - self.used[s]
        d = self.demands[c]
        pos = d > 0
        return int(np.min(free[pos] // d[pos]))

    def encode(self, state: SmdpState) -> int:
        try:
            s = self.index[state.occupancy]
        except KeyError:
            raise ValueError(f"occupancy {state.occupancy} is not feasible") from None
        return s * self.n_events + state.event.code(self.n_classes)

    def decode(self, x: int) -> SmdpState:
        s, e = divmod(int(x), self.n_events)
        return SmdpState(self.states[s], Event.from_code(e, self.n_classes))

    def valid_decision_states(self) -> np.ndarray:
        """Indices of ``(s, e)`` pairs that can occur (departures need n_c >= 1)."""
        C = self.n_classes
        ok = np.ones((self.n_states, self.n_events), dtype=bool)
        ok[:, C:2 * C] = self.counts > 0
        return np.flatnonzero(ok.ravel())

    def __repr__(self):
        return (
            f"SlicingProblem(n_classes={self.n_classes}, capacity={self.capacity.as_tuple()}, "
            f"n_states={self.n_states})"
        )
