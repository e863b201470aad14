#!/usr/bin/env python3
"""
Average-cost analysis of threshold policies
Stationary distributions (closed form and linear-solve oracle), the printed
closed-form average costs, their limit as m grows, and the threshold search.

The oracle value (stationary law of the induced chain times event-enumerated
slot costs) is the canonical average cost. The printed closed forms are evaluated as printed and
compared against it; for p == q and m >= 2 the printed branch exceeds the
oracle by p(1-p)/(m+1).
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from scripts.platoon_errors import DomainError, ParameterError, SingularSystemError, ThresholdSearchError
from scripts.platoon_model import (
    EVENTS,
    ModelParams,
    event_probabilities,
    threshold_action,
    transition_step,
    transition_table,
)

logger = logging.getLogger(__name__)

EQUAL_RATES_TOLERANCE = 1e-12
GEOMETRIC_SUM_TOLERANCE = 1e-6
DISCREPANCY_TOLERANCE = 1e-9
DEFAULT_M_CAP = 200
# Decreases of the cost curve smaller than this count as its plateau
SEARCH_TOLERANCE = 1e-12
BALANCE_TOLERANCE = 1e-10


class Branch(Enum):
    """Case of the printed average-cost formula"""
    M_ZERO = 'm=0'
    M_ONE = 'm=1'
    EQUAL_RATES = 'm>=2:p=q'
    GENERAL = 'm>=2:p!=q'


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    """Stationary law of the queue under pi_m; zero above m"""
    probabilities: np.ndarray
    m: int
    ratio: float


@dataclass(frozen=True)
class AverageCostResult:
    j_closed: float
    j_oracle: float
    branch: Branch
    discrepancy: float
    distribution: StationaryDistribution

    @property
    def flagged(self) -> bool:
        return self.discrepancy > DISCREPANCY_TOLERANCE


class ThresholdSearch(NamedTuple):
    m_star: int
    cost_curve: List[float]


def _check_threshold(m: int):
    if m < 0:
        raise ParameterError('m', f"threshold must be >= 0, got {m}")


def factor_a(params: ModelParams) -> float:
    return params.ratio


def _equal_rates(a: float) -> bool:
    return abs(a - 1) < EQUAL_RATES_TOLERANCE


def _f0(a: float, m: int) -> float:
    if _equal_rates(a):
        return 1 / (m + 1)
    if abs(a - 1) < GEOMETRIC_SUM_TOLERANCE:
        return 1 / float(np.sum(a ** np.arange(m + 1)))
    return (a - 1) / (a ** (m + 1) - 1)


def stationary_closed_form(params: ModelParams, m: int) -> StationaryDistribution:
    """f(x) = A^x f(0) for x <= m, f(0) from the normalization"""
    _check_threshold(m)
    a = factor_a(params)
    if m == 0:
        f = np.ones(1)
    else:
        f = a ** np.arange(m + 1) * _f0(a, m)
    f.setflags(write=False)
    return StationaryDistribution(f, m, a)


def _transition_matrix(params: ModelParams, m: int) -> np.ndarray:
    next_states, _ = transition_table(params, m)
    probs = event_probabilities(params)

    P = np.zeros((m + 1, m + 1))
    for x in range(m + 1):
        for event in EVENTS:
            target = next_states[x, event.index]
            if target > m:
                raise DomainError(f"pi_{m} leaves [0, {m}] from state {x} on {event.name}")
            P[x, target] += probs[event.index]
    return P


def stationary_oracle(params: ModelParams, m: int) -> StationaryDistribution:
    """
    Stationary law of the chain induced by pi_m, built from its transition matrix

    pi_m moves the queue by at most one per slot, so balance across the cut
    between x and x+1 gives f(x+1) = f(x) P[x, x+1] / P[x+1, x]. The weights
    are accumulated in state order and normalized with a left-to-right sum,
    so the value does not depend on the BLAS or LAPACK build. The law is
    then checked against the full balance equations f P = f.

    Raises:
        SingularSystemError: a downward rate vanishes or f P = f fails
    """
    _check_threshold(m)
    P = _transition_matrix(params, m)
    up = P.diagonal(1).tolist()
    down = P.diagonal(-1).tolist()
    if any(rate == 0 for rate in down):
        raise SingularSystemError(f"Balance system for m={m} is singular: a downward rate vanishes")

    weights = [1.0]
    for x in range(m):
        weights.append(weights[x] * up[x] / down[x])
    if not math.isfinite(sum(weights)):
        # Mass piles up at m; accumulate from the top instead
        weights = [1.0]
        for x in reversed(range(m)):
            weights.append(weights[-1] * down[x] / up[x])
        weights.reverse()

    f = np.array(weights) / sum(weights)
    residual = float(np.max(np.abs(f @ P - f)))
    if residual > BALANCE_TOLERANCE:
        raise SingularSystemError(f"Balance residual {residual:.3g} for m={m} exceeds {BALANCE_TOLERANCE}")

    f.setflags(write=False)
    return StationaryDistribution(f, m, factor_a(params))


def expected_slot_cost(x: int, m: int, params: ModelParams) -> float:
    """Expected slot cost at state x under pi_m, enumerated over the four events"""
    _check_threshold(m)
    if not 0 <= x <= m:
        raise DomainError(f"State {x} has zero stationary mass under pi_{m}")

    probs = event_probabilities(params)
    return sum(
        probs[event.index] * transition_step(x, event, threshold_action(x, event, m), params.kappa).cost
        for event in EVENTS
    )


def closed_form_branch(params: ModelParams, m: int) -> Branch:
    _check_threshold(m)
    if m == 0:
        return Branch.M_ZERO
    if m == 1:
        return Branch.M_ONE
    if _equal_rates(factor_a(params)):
        return Branch.EQUAL_RATES
    return Branch.GENERAL


def average_cost_presimplified(params: ModelParams, m: int) -> float:
    """Average cost as the sum over the geometric stationary law, before simplification"""
    _check_threshold(m)
    p, q, kappa = params.p, params.q, params.kappa
    if m == 0:
        return p * (1 - q) * kappa

    a = factor_a(params)
    f0 = _f0(a, m)
    x = np.arange(1, m)
    interior = float(np.sum((p - q + x) * a ** x))
    boundary = q * (m - 1) * (p - 1) - m * (p * q + (p - 1) * (q - 1)) + p * (kappa + m) * (q - 1)
    return p * (1 - q) * f0 + interior * f0 - a ** m * boundary * f0


def average_cost_closed_form(params: ModelParams, m: int) -> float:
    """Evaluate the printed four-branch formula for J_{pi_m}"""
    p, q, kappa = params.p, params.q, params.kappa
    branch = closed_form_branch(params, m)

    if branch is Branch.M_ZERO:
        return p * (1 - q) * kappa

    a = factor_a(params)
    if branch is Branch.M_ONE:
        return p * (1 - q) / (a + 1) + a * (p * (1 - q) * (1 + kappa) + (1 - p) * (1 - q) + p * q) / (a + 1)

    if branch is Branch.EQUAL_RATES:
        return (m ** 2 + m - 2 * (kappa + 1) * (p - 1) * p) / (2 * (m + 1))

    # (1 - A) and (1 - A^(m+1)) cancel badly near A = 1
    if abs(a - 1) < GEOMETRIC_SUM_TOLERANCE:
        return average_cost_presimplified(params, m)

    tail = 1 - a ** (m + 1)
    return (
        p * (1 - q) * (1 - a) / tail
        + (a ** 2 * (q - p) + a * (1 + p - q) + a ** m * (-m - p + q)) / ((1 - a) * tail)
        + a ** (m + 1) * (m + p - q - 1) / ((1 - a) * tail)
        + (m - q + p * q * (1 - kappa) + p * kappa) * (a ** m - a ** (m + 1)) / tail
    )


def average_cost_oracle(params: ModelParams, m: int) -> float:
    """Canonical J_{pi_m}: oracle stationary law times enumerated slot costs"""
    f = stationary_oracle(params, m).probabilities
    return float(sum(expected_slot_cost(x, m, params) * f[x] for x in range(m + 1)))


def evaluate_threshold(params: ModelParams, m: int) -> AverageCostResult:
    """Closed form against oracle for one threshold, discrepancy surfaced"""
    j_closed = average_cost_closed_form(params, m)
    j_oracle = average_cost_oracle(params, m)
    result = AverageCostResult(
        j_closed=j_closed,
        j_oracle=j_oracle,
        branch=closed_form_branch(params, m),
        discrepancy=abs(j_closed - j_oracle),
        distribution=stationary_closed_form(params, m),
    )
    if result.flagged:
        logger.warning(
            f"Closed form ({result.branch.value}) differs from oracle at m={m}: "
            f"{j_closed:.9f} vs {j_oracle:.9f}"
        )
    return result


def find_optimal_threshold(params: ModelParams, m_cap: int = DEFAULT_M_CAP) -> ThresholdSearch:
    """
    First m whose successor does not lower the cost, scanning m = 0, 1, 2, ...

    When p < q and kappa is large the curve decreases towards its limit and
    the steps shrink geometrically; a step smaller than SEARCH_TOLERANCE ends
    the scan like an increase would.

    Raises:
        ThresholdSearchError: the cost still drops at m_cap; carries the curve
    """
    if m_cap < 1:
        raise ParameterError('m_max', f"m_cap must be >= 1, got {m_cap}")

    curve = [average_cost_oracle(params, 0)]
    for m in range(m_cap + 1):
        curve.append(average_cost_oracle(params, m + 1))
        if curve[m + 1] - curve[m] > -SEARCH_TOLERANCE:
            logger.info(f"Optimal threshold m*={m} with J={curve[m]:.6f}")
            return ThresholdSearch(m, curve)

    raise ThresholdSearchError(m_cap, curve)


def asymptotic_limit(params: ModelParams) -> float:
    """Limit of J_{pi_m} as m grows; math.inf when p >= q"""
    p, q = params.p, params.q
    if p >= q:
        return math.inf
    a = factor_a(params)
    return p * (1 - q) * (1 - a) + (a ** 2 * (q - p) + a * (1 + p - q)) / (1 - a)


def threshold_map(
    params: ModelParams,
    kappas: Iterable[float],
    m_cap: int = DEFAULT_M_CAP
) -> List[Tuple[float, Optional[int], Optional[float]]]:
    """
    Optimal threshold and its average cost for each surcharge kappa

    A surcharge whose cost curve never rises below the cap maps to (kappa, None, None).
    """
    rows = []
    for kappa in kappas:
        point = dataclasses.replace(params, kappa=float(kappa))
        if not math.isfinite(point.kappa) or point.kappa < 0:
            raise ParameterError('kappa', f"kappa must be finite and >= 0: {kappa}")
        try:
            search = find_optimal_threshold(point, m_cap)
        except ThresholdSearchError as e:
            logger.warning(f"kappa={point.kappa}: {e}")
            rows.append((point.kappa, None, None))
            continue
        rows.append((point.kappa, search.m_star, search.cost_curve[search.m_star]))
    return rows
