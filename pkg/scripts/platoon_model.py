#!/usr/bin/env python3
"""
Platoon dispatching model
Parameters, slot events, actions and the single-slot dynamics shared by the
DP solvers, the steady-state analysis and the simulator.

Slot semantics: the truck arrival (if any) joins the queue first, then the
action is chosen for the post-arrival queue y and the slot cost is charged
on y (hold: y, dispatch with a platoon: y-1, dispatch alone: y-1+kappa).
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Tuple

import numpy as np

from scripts.platoon_errors import DomainError, ParameterError

# Queue length at the start of a slot
QueueState = int


@dataclass(frozen=True)
class ModelParams:
    """Arrival probabilities, dispatch surcharge and discount factor"""
    p: float
    q: float
    kappa: float
    beta: float = 0.99

    @property
    def ratio(self) -> float:
        """A = p(1-q) / ((1-p)q), the geometric ratio of the stationary law"""
        return self.p * (1 - self.q) / ((1 - self.p) * self.q)


def validate_params(p: float, q: float, kappa: float, beta: float = 0.99) -> ModelParams:
    """Build ModelParams, rejecting out-of-range values field by field"""
    if not 0 < p < 1:
        raise ParameterError('p', f"p out of open interval (0, 1): {p}")
    if not 0 < q < 1:
        raise ParameterError('q', f"q out of open interval (0, 1): {q}")
    if not math.isfinite(kappa):
        raise ParameterError('kappa', f"kappa must be finite: {kappa}")
    if kappa < 0:
        raise ParameterError('kappa', f"kappa must be >= 0: {kappa}")
    if not 0 < beta < 1:
        raise ParameterError('beta', f"beta out of open interval (0, 1): {beta}")
    return ModelParams(float(p), float(q), float(kappa), float(beta))


class SlotEvent(Enum):
    """Arrival combinations of one slot, in (truck, platoon) order"""
    NO_ARRIVALS = (False, False)
    PLATOON_ONLY = (False, True)
    TRUCK_ONLY = (True, False)
    BOTH = (True, True)

    @property
    def truck(self) -> bool:
        return self.value[0]

    @property
    def platoon(self) -> bool:
        return self.value[1]

    @property
    def index(self) -> int:
        return 2 * self.truck + self.platoon

    @classmethod
    def from_flags(cls, truck: bool, platoon: bool) -> 'SlotEvent':
        return cls((bool(truck), bool(platoon)))

    def probability(self, params: ModelParams) -> float:
        pt = params.p if self.truck else 1 - params.p
        pp = params.q if self.platoon else 1 - params.q
        return pt * pp


# Ordered by SlotEvent.index
EVENTS: Tuple[SlotEvent, ...] = (
    SlotEvent.NO_ARRIVALS,
    SlotEvent.PLATOON_ONLY,
    SlotEvent.TRUCK_ONLY,
    SlotEvent.BOTH,
)


class Action(Enum):
    HOLD = 'hold'
    DISPATCH = 'dispatch'


class SlotOutcome(NamedTuple):
    next_state: QueueState
    cost: float


def post_arrival(x: QueueState, event: SlotEvent) -> int:
    return x + 1 if event.truck else x


def event_distribution(params: ModelParams) -> List[Tuple[SlotEvent, float]]:
    """The four slot events with their probabilities"""
    return [(event, event.probability(params)) for event in EVENTS]


def event_probabilities(params: ModelParams) -> np.ndarray:
    """Event probabilities as an array indexed by SlotEvent.index"""
    return np.array([event.probability(params) for event in EVENTS])


def transition_step(
    x: QueueState,
    event: SlotEvent,
    action: Action,
    kappa: float
) -> SlotOutcome:
    """Apply one slot: arrival first, then the action on the post-arrival queue"""
    if x < 0:
        raise DomainError(f"Queue length must be >= 0, got {x}")

    y = post_arrival(x, event)

    if action is Action.HOLD:
        return SlotOutcome(y, float(y))

    if y < 1:
        raise DomainError(f"Cannot dispatch from an empty queue (x={x}, event={event.name})")

    if event.platoon:
        return SlotOutcome(y - 1, float(y - 1))
    return SlotOutcome(y - 1, y - 1 + kappa)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Dispatch with every platoon; dispatch alone iff the queue exceeds m"""
    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ParameterError('m', f"threshold must be >= 0, got {self.m}")

    def action(self, x: QueueState, event: SlotEvent) -> Action:
        y = post_arrival(x, event)
        if y >= 1 and (event.platoon or y > self.m):
            return Action.DISPATCH
        return Action.HOLD


def threshold_action(x: QueueState, event: SlotEvent, m: int) -> Action:
    return ThresholdPolicy(m).action(x, event)


def transition_table(params: ModelParams, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tabulate the slot dynamics under the threshold policy

    Returns:
        (next_states, costs), both of shape (m + 2, 4), indexed by
        (state, SlotEvent.index) for states 0..m+1
    """
    policy = ThresholdPolicy(m)
    next_states = np.zeros((m + 2, len(EVENTS)), dtype=np.int64)
    costs = np.zeros((m + 2, len(EVENTS)), dtype=float)

    for x in range(m + 2):
        for event in EVENTS:
            outcome = transition_step(x, event, policy.action(x, event), params.kappa)
            next_states[x, event.index] = outcome.next_state
            costs[x, event.index] = outcome.cost

    return next_states, costs
