#!/usr/bin/env python3
"""
Discrete-event simulation of the platoon station under a threshold policy
Seeded single runs and independent replications with Student-t intervals.

Reproducibility contract: each run draws a (slots, 2) block of uniforms from
numpy's PCG64 generator seeded with the run seed; column 0 decides the truck
arrival (u < p), column 1 the platoon arrival (u < q). Replication r of a
batch uses the first 64-bit word of SeedSequence([base_seed, r]).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from itertools import accumulate
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import stats

from scripts.platoon_errors import ParameterError
from scripts.platoon_model import ModelParams, SlotEvent, ThresholdPolicy, transition_table

logger = logging.getLogger(__name__)

SEED_LIMIT = 2 ** 64

# Event index by (truck arrived, platoon arrived)
EVENT_INDEX = np.array([
    [SlotEvent.from_flags(truck, platoon).index for platoon in (False, True)]
    for truck in (False, True)
])


@dataclass(frozen=True)
class SimConfig:
    """Replication protocol; defaults are 30 runs of 10^6 slots with a 99% interval"""
    slots: int = 1_000_000
    replications: int = 30
    base_seed: int = 12345
    confidence_level: float = 0.99
    warmup_slots: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.slots < 1:
            raise ParameterError('slots', f"slots must be >= 1, got {self.slots}")
        if self.replications < 1:
            raise ParameterError('reps', f"replications must be >= 1, got {self.replications}")
        if not 0 <= self.base_seed < SEED_LIMIT:
            raise ParameterError('seed', f"seed must be an unsigned 64-bit integer, got {self.base_seed}")
        if not 0 < self.confidence_level < 1:
            raise ParameterError('confidence', f"confidence must be in (0, 1), got {self.confidence_level}")
        if self.warmup_slots < 0:
            raise ParameterError('warmup', f"warmup must be >= 0, got {self.warmup_slots}")
        if self.workers < 1:
            raise ParameterError('workers', f"workers must be >= 1, got {self.workers}")


class RunResult(NamedTuple):
    mean_cost: float
    final_queue: int
    max_queue: int


@dataclass(frozen=True)
class SimSummary:
    per_replication_means: List[float]
    grand_mean: float
    ci_half_width: Optional[float]
    slots_simulated: int
    final_queue_lengths: List[int]
    max_queue_lengths: List[int] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    confidence_level: float = 0.99

    @property
    def ci(self) -> Optional[Tuple[float, float]]:
        """Confidence interval, None with a single replication"""
        if self.ci_half_width is None:
            return None
        return self.grand_mean - self.ci_half_width, self.grand_mean + self.ci_half_width


def replication_seed(base_seed: int, index: int) -> int:
    """Seed of replication `index`, independent of how many replications run"""
    state = np.random.SeedSequence([base_seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def simulate_run(
    params: ModelParams,
    m: int,
    slots: int,
    seed: int,
    warmup_slots: int = 0
) -> RunResult:
    """
    Simulate pi_m from an empty station

    Returns:
        RunResult with the mean cost over the slots after warmup, the queue
        after the last slot and the largest queue seen at a slot boundary
    """
    ThresholdPolicy(m)
    if slots < 1:
        raise ParameterError('slots', f"slots must be >= 1, got {slots}")

    total = warmup_slots + slots
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.random((total, 2))
    trucks = (draws[:, 0] < params.p).astype(np.intp)
    platoons = (draws[:, 1] < params.q).astype(np.intp)
    events = EVENT_INDEX[trucks, platoons]

    next_states, costs = transition_table(params, m)
    step = next_states.tolist()
    path = np.fromiter(
        accumulate(events.tolist(), lambda x, e: step[x][e], initial=0),
        dtype=np.int64,
        count=total + 1,
    )

    slot_costs = costs[path[:-1], events]
    mean_cost = float(np.sum(slot_costs[warmup_slots:])) / slots
    return RunResult(mean_cost, int(path[-1]), int(path.max()))


def simulate_replications(params: ModelParams, m: int, config: SimConfig) -> SimSummary:
    """Independent replications of pi_m with a Student-t interval on the run means"""
    seeds = [replication_seed(config.base_seed, r) for r in range(config.replications)]
    run = partial(simulate_run, params, m, config.slots, warmup_slots=config.warmup_slots)

    if config.workers > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(seed) for seed in seeds]

    means = np.array([r.mean_cost for r in results])
    for index, result in enumerate(results):
        logger.debug(f"Replication {index}: mean cost {result.mean_cost:.6f}, max queue {result.max_queue}")

    n = config.replications
    half_width = None
    if n > 1:
        quantile = stats.t.ppf((1 + config.confidence_level) / 2, n - 1)
        half_width = float(quantile * means.std(ddof=1) / math.sqrt(n))

    summary = SimSummary(
        per_replication_means=means.tolist(),
        grand_mean=float(means.mean()),
        ci_half_width=half_width,
        slots_simulated=n * config.slots,
        final_queue_lengths=[r.final_queue for r in results],
        max_queue_lengths=[r.max_queue for r in results],
        seeds=seeds,
        confidence_level=config.confidence_level,
    )
    logger.info(
        f"Simulated m={m}: {n} x {config.slots} slots, mean {summary.grand_mean:.6f}"
        + (f" +/- {half_width:.6f}" if half_width is not None else "")
    )
    return summary
