#!/usr/bin/env python3
"""
Dynamic programming for the platoon dispatching problem
Finite-horizon and discounted value iteration on a truncated queue,
policy extraction, threshold detection and structural diagnostics.

Truncation: the queue is capped at x_max. Under the default boundary a truck
arriving at a full station leaves in the same slot, with the arriving platoon
if there is one, alone (paying kappa) otherwise. Nothing is lost for free, so
whenever the policy dispatches below the cap the truncated chain coincides
with the unbounded one. Boundary.DISCARD instead drops the arriving truck
(post-arrival queue min(x+1, x_max)); arrivals at the cap then cost nothing
later, which bends J_k downwards at x_max - 1.

Actions whose costs agree within TIE_TOLERANCE resolve to hold.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Tuple, Union

import numpy as np

from scripts.platoon_errors import ConvergenceError, DomainError, ParameterError, StructureViolation
from scripts.platoon_model import Action, ModelParams, event_probabilities

logger = logging.getLogger(__name__)

CONVEXITY_TOLERANCE = 1e-9
TIE_TOLERANCE = 1e-9
DEFAULT_MAX_SWEEPS = 1_000_000



class Boundary(Enum):
    """What happens to a truck arriving at a full station"""
    DISPATCH = 'dispatch'
    DISCARD = 'discard'


@dataclass(frozen=True)
class TruncationConfig:
    """Queue cap, the margin the threshold must keep below it, and the cap rule"""
    x_max: int = 200
    margin: int = 10
    boundary: Boundary = Boundary.DISPATCH

    def __post_init__(self):
        if self.x_max < 2:
            raise ParameterError('x_max', f"x_max must be >= 2, got {self.x_max}")
        if self.margin < 0:
            raise ParameterError('margin', f"margin must be >= 0, got {self.margin}")

    def is_reliable(self, threshold: int) -> bool:
        return threshold <= self.x_max - self.margin


@dataclass(frozen=True, eq=False)
class ValueTable:
    """
    Cost-to-go J(x) for x = 0..x_max

    event_values[e, x] is the optimized cost of the slot started in x given
    event e (SlotEvent.index), so values = probabilities @ event_values.
    """
    values: np.ndarray
    event_values: np.ndarray
    iterations: int
    beta: float
    reliable: bool = True

    @property
    def x_max(self) -> int:
        return len(self.values) - 1


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Contingent actions indexed by the post-arrival queue y = 0..x_max"""
    dispatch_alone: np.ndarray
    dispatch_with_platoon: np.ndarray

    @property
    def x_max(self) -> int:
        return len(self.dispatch_alone) - 1

    def action(self, y: int, platoon: bool) -> Action:
        table = self.dispatch_with_platoon if platoon else self.dispatch_alone
        return Action.DISPATCH if table[y] else Action.HOLD


class ConvexityReport(NamedTuple):
    passed: bool
    min_second_difference: float
    # State with the smallest second difference
    location: int


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _bellman(
    J: np.ndarray,
    params: ModelParams,
    boundary: Boundary = Boundary.DISPATCH
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One application of the slot recursion to J

    Returns:
        (event_values, dispatch_alone, dispatch_with_platoon); the policy arrays
        cover post-arrival queues 0..x_max+1, the last entry being the overflow
    """
    n = len(J)
    y = np.arange(n + 1, dtype=float)

    # hold[y] = y + beta J(y); holding an overflowing truck is inadmissible
    hold = np.full(n + 1, np.inf)
    hold[:n] = y[:n] + params.beta * J

    # down[y] = hold[y-1], the continuation after dispatching one truck
    down = np.full(n + 1, np.inf)
    down[1:] = hold[:n]

    alone = down + params.kappa
    dispatch_alone = alone < hold - TIE_TOLERANCE
    dispatch_with_platoon = down < hold - TIE_TOLERANCE
    no_platoon = np.minimum(hold, alone)
    with_platoon = np.minimum(hold, down)

    after_truck = np.arange(1, n + 1)
    if boundary is Boundary.DISCARD:
        after_truck[-1] = n - 1

    event_values = np.vstack([
        no_platoon[:n],
        with_platoon[:n],
        no_platoon[after_truck],
        with_platoon[after_truck],
    ])
    return event_values, dispatch_alone, dispatch_with_platoon


def _policy(dispatch_alone: np.ndarray, dispatch_with_platoon: np.ndarray) -> PolicyTable:
    return PolicyTable(
        dispatch_alone=_frozen(dispatch_alone[:-1].copy()),
        dispatch_with_platoon=_frozen(dispatch_with_platoon[:-1].copy()),
    )


def value_iterate_finite(
    params: ModelParams,
    horizon: int,
    trunc: TruncationConfig
) -> Tuple[List[ValueTable], List[PolicyTable]]:
    """
    Finite-horizon recursion from J_0 = 0

    Returns:
        (tables, policies) where tables[k-1] is J_k and policies[k-1] the
        stage policy used with k slots to go
    """
    if horizon < 1:
        raise ParameterError('horizon', f"horizon must be >= 1, got {horizon}")

    probs = event_probabilities(params)
    J = np.zeros(trunc.x_max + 1)
    tables: List[ValueTable] = []
    policies: List[PolicyTable] = []

    for stage in range(1, horizon + 1):
        event_values, alone, with_platoon = _bellman(J, params, trunc.boundary)
        J = probs @ event_values
        policy = _policy(alone, with_platoon)
        reliable = trunc.is_reliable(extract_threshold(policy))
        policies.append(policy)
        tables.append(ValueTable(_frozen(J.copy()), _frozen(event_values), stage, params.beta, reliable))

    unreliable = [t.iterations for t in tables if not t.reliable]
    if unreliable:
        logger.warning(
            f"Truncation at x_max={trunc.x_max} unreliable for {len(unreliable)} of {horizon} stages "
            f"(first stage {unreliable[0]})"
        )
    return tables, policies


def value_iterate_discounted(
    params: ModelParams,
    trunc: TruncationConfig,
    tol: float = 1e-6,
    max_sweeps: int = DEFAULT_MAX_SWEEPS
) -> Tuple[ValueTable, PolicyTable]:
    """
    Iterate the recursion to its fixed point

    Stops once successive tables differ by less than tol(1-beta)/(2 beta) in
    sup norm, so the greedy policy of the last table is tol-optimal.

    Raises:
        ConvergenceError: the sweep cap was reached first
    """
    if not tol > 0:
        raise ParameterError('tol', f"tol must be > 0, got {tol}")

    probs = event_probabilities(params)
    threshold = tol * (1 - params.beta) / (2 * params.beta)
    J = np.zeros(trunc.x_max + 1)
    residual = np.inf

    for sweep in range(1, max_sweeps + 1):
        event_values, _, _ = _bellman(J, params, trunc.boundary)
        J_next = probs @ event_values
        residual = float(np.max(np.abs(J_next - J)))
        J = J_next
        if residual < threshold:
            break
    else:
        raise ConvergenceError(residual, max_sweeps)

    _, alone, with_platoon = _bellman(J, params, trunc.boundary)
    policy = _policy(alone, with_platoon)
    m = extract_threshold(policy)
    reliable = trunc.is_reliable(m)

    logger.info(f"Discounted solve converged in {sweep} sweeps (residual {residual:.2e}), threshold {m}")
    if not reliable:
        logger.warning(f"Threshold {m} is within margin {trunc.margin} of x_max={trunc.x_max}")

    table = ValueTable(_frozen(J), _frozen(event_values), sweep, params.beta, reliable)
    return table, policy


def q_difference(values: ValueTable, x: int, params: ModelParams) -> float:
    """
    Event-weighted forward difference that decides the no-platoon action at x

    Hold is optimal iff the result is <= (kappa - 1) / beta.
    """
    if not 1 <= x <= values.x_max - 1:
        raise DomainError(f"q_difference needs 1 <= x <= {values.x_max - 1}, got {x}")
    probs = event_probabilities(params)
    return float(probs @ (values.event_values[:, x] - values.event_values[:, x - 1]))


def check_convexity(values: Union[ValueTable, np.ndarray]) -> ConvexityReport:
    """Smallest second difference J(x+1) + J(x-1) - 2J(x) and where it occurs"""
    table = values.values if isinstance(values, ValueTable) else np.asarray(values, dtype=float)
    if len(table) < 3:
        raise DomainError(f"Convexity check needs at least 3 entries, got {len(table)}")

    second = table[2:] + table[:-2] - 2 * table[1:-1]
    worst = int(np.argmin(second))
    min_second = float(second[worst])
    passed = min_second >= -CONVEXITY_TOLERANCE
    return ConvexityReport(passed, min_second, worst + 1)


def extract_threshold(policy: PolicyTable) -> int:
    """
    Threshold m of a policy: hold alone for y <= m, dispatch alone for y > m

    Returns x_max when the policy never dispatches alone within the table.

    Raises:
        StructureViolation: the policy is not of threshold type, or it holds
        a truck while a platoon is present
    """
    alone = policy.dispatch_alone
    with_platoon = policy.dispatch_with_platoon

    if alone[0] or with_platoon[0]:
        raise StructureViolation("Dispatch from an empty queue", [0])

    held = np.flatnonzero(~with_platoon[1:]) + 1
    if held.size:
        raise StructureViolation("Truck held while a platoon is present", held.tolist())

    dispatching = np.flatnonzero(alone)
    if not dispatching.size:
        return policy.x_max

    m = int(dispatching[0]) - 1
    gaps = np.flatnonzero(~alone[m + 1:]) + m + 1
    if gaps.size:
        raise StructureViolation(f"Policy holds above its threshold {m}", gaps.tolist())
    return m


def scaled_discounted_value(values: ValueTable) -> float:
    """(1 - beta) J(0), which tends to the optimal average cost as beta -> 1"""
    return (1 - values.beta) * float(values.values[0])
