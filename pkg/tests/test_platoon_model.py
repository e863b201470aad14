"""
Unit tests for the platoon dispatching model
"""

import math
import unittest
import sys
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from scripts.platoon_errors import DomainError, ParameterError, PlatoonError
from scripts.platoon_model import (
    EVENTS,
    Action,
    ModelParams,
    SlotEvent,
    ThresholdPolicy,
    event_distribution,
    event_probabilities,
    threshold_action,
    transition_step,
    transition_table,
    validate_params,
)

GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
probabilities = st.floats(min_value=0.01, max_value=0.99)


class TestValidateParams(unittest.TestCase):
    """Test cases for parameter validation"""

    def test_valid_parameters(self):
        """Test a valid parameter set is returned as ModelParams"""
        params = validate_params(0.5, 0.5, 10, 0.99)
        self.assertEqual(params, ModelParams(0.5, 0.5, 10.0, 0.99))

    def test_zero_kappa_allowed(self):
        """Test kappa = 0 is a valid surcharge"""
        self.assertEqual(validate_params(0.3, 0.6, 0).kappa, 0.0)

    def test_p_on_boundary_rejected(self):
        """Test p = 1 is rejected with the offending field"""
        with self.assertRaises(ParameterError) as ctx:
            validate_params(1.0, 0.5, 10)
        self.assertEqual(ctx.exception.field, 'p')
        self.assertIn("p out of open interval", str(ctx.exception))

    def test_q_zero_rejected(self):
        """Test q = 0 is rejected"""
        with self.assertRaises(ParameterError) as ctx:
            validate_params(0.5, 0.0, 10)
        self.assertEqual(ctx.exception.field, 'q')

    def test_negative_kappa_rejected(self):
        """Test negative kappa is rejected"""
        with self.assertRaises(ParameterError) as ctx:
            validate_params(0.5, 0.5, -1)
        self.assertEqual(ctx.exception.field, 'kappa')

    def test_infinite_kappa_rejected(self):
        """Test non-finite kappa is rejected"""
        for kappa in (math.inf, math.nan):
            with self.assertRaises(ParameterError) as ctx:
                validate_params(0.5, 0.5, kappa)
            self.assertEqual(ctx.exception.field, 'kappa')

    def test_beta_bounds(self):
        """Test beta must lie strictly between 0 and 1"""
        for beta in (0.0, 1.0, 1.5):
            with self.assertRaises(ParameterError) as ctx:
                validate_params(0.5, 0.5, 10, beta)
            self.assertEqual(ctx.exception.field, 'beta')

    def test_parameter_error_is_value_error(self):
        """Test ParameterError fits both hierarchies"""
        with self.assertRaises(ValueError):
            validate_params(0.5, 2.0, 10)
        with self.assertRaises(PlatoonError):
            validate_params(0.5, 2.0, 10)

    def test_ratio(self):
        """Test the geometric ratio A"""
        self.assertAlmostEqual(ModelParams(0.4, 0.8, 5).ratio, 1 / 6, places=12)
        self.assertAlmostEqual(ModelParams(0.45, 0.65, 20).ratio, 63 / 143, places=12)


class TestSlotEvents(unittest.TestCase):
    """Test cases for slot events and their distribution"""

    def test_event_order(self):
        """Test EVENTS follows the index order none, platoon, truck, both"""
        self.assertEqual([e.index for e in EVENTS], [0, 1, 2, 3])
        self.assertEqual(EVENTS[1], SlotEvent.PLATOON_ONLY)
        self.assertEqual(EVENTS[2], SlotEvent.TRUCK_ONLY)

    def test_from_flags(self):
        """Test construction from arrival indicators"""
        self.assertEqual(SlotEvent.from_flags(True, False), SlotEvent.TRUCK_ONLY)
        self.assertEqual(SlotEvent.from_flags(0, 1), SlotEvent.PLATOON_ONLY)
        self.assertEqual(SlotEvent.from_flags(True, True), SlotEvent.BOTH)

    def test_equal_rates_distribution(self):
        """Test p = q = 0.5 gives four equally likely events"""
        for event, prob in event_distribution(ModelParams(0.5, 0.5, 10)):
            self.assertEqual(prob, 0.25)

    def test_unequal_rates_distribution(self):
        """Test p = 0.4, q = 0.8"""
        probs = event_probabilities(ModelParams(0.4, 0.8, 5))
        np.testing.assert_allclose(probs, [0.12, 0.48, 0.08, 0.32], atol=1e-15)

    def test_distribution_sums_to_one_on_grid(self):
        """Test probabilities sum to one on the (p, q) grid"""
        for p in GRID:
            for q in GRID:
                total = sum(prob for _, prob in event_distribution(ModelParams(p, q, 1)))
                self.assertLessEqual(abs(total - 1), 1e-15, f"p={p}, q={q}")

    @given(p=probabilities, q=probabilities)
    def test_distribution_nonnegative(self, p, q):
        """Test every event probability is nonnegative and they sum to one"""
        probs = event_probabilities(ModelParams(p, q, 1))
        self.assertTrue(np.all(probs >= 0))
        self.assertAlmostEqual(float(probs.sum()), 1.0, places=12)


class TestTransitionStep(unittest.TestCase):
    """Test cases for single-slot dynamics"""

    def test_hold_empty_queue(self):
        """Test holding an empty queue with no arrivals costs nothing"""
        self.assertEqual(transition_step(0, SlotEvent.NO_ARRIVALS, Action.HOLD, 10), (0, 0.0))

    def test_dispatch_with_platoon(self):
        """Test dispatching with a platoon costs the remaining queue"""
        self.assertEqual(transition_step(2, SlotEvent.PLATOON_ONLY, Action.DISPATCH, 10), (1, 1.0))

    def test_dispatch_alone_pays_kappa(self):
        """Test a lone dispatch after a truck arrival"""
        self.assertEqual(transition_step(3, SlotEvent.TRUCK_ONLY, Action.DISPATCH, 10), (3, 13.0))

    def test_arrival_joins_before_action(self):
        """Test a truck arriving at an empty station can leave with the platoon"""
        self.assertEqual(transition_step(0, SlotEvent.BOTH, Action.DISPATCH, 10), (0, 0.0))

    def test_hold_charges_post_arrival_queue(self):
        """Test the holding cost is charged on the queue after the arrival"""
        self.assertEqual(transition_step(2, SlotEvent.TRUCK_ONLY, Action.HOLD, 10), (3, 3.0))

    def test_dispatch_from_empty_queue_rejected(self):
        """Test dispatch is inadmissible when the post-arrival queue is empty"""
        with self.assertRaises(DomainError):
            transition_step(0, SlotEvent.NO_ARRIVALS, Action.DISPATCH, 10)
        with self.assertRaises(DomainError):
            transition_step(0, SlotEvent.PLATOON_ONLY, Action.DISPATCH, 10)

    def test_negative_state_rejected(self):
        """Test a negative queue length is rejected"""
        with self.assertRaises(DomainError):
            transition_step(-1, SlotEvent.NO_ARRIVALS, Action.HOLD, 10)

    @given(
        x=st.integers(min_value=0, max_value=50),
        event=st.sampled_from(EVENTS),
        action=st.sampled_from(list(Action)),
        kappa=st.floats(min_value=0, max_value=100),
    )
    def test_cost_decomposition(self, x, event, action, kappa):
        """Test cost equals the next queue, plus kappa for a lone dispatch"""
        y = x + event.truck
        if action is Action.DISPATCH and y < 1:
            return
        outcome = transition_step(x, event, action, kappa)
        surcharge = kappa if action is Action.DISPATCH and not event.platoon else 0.0
        self.assertEqual(outcome.cost, outcome.next_state + surcharge)
        self.assertEqual(outcome.next_state, y - (action is Action.DISPATCH))


class TestThresholdPolicy(unittest.TestCase):
    """Test cases for threshold policies"""

    def test_examples(self):
        """Test threshold decisions around m = 2"""
        self.assertEqual(threshold_action(0, SlotEvent.PLATOON_ONLY, 2), Action.HOLD)
        self.assertEqual(threshold_action(1, SlotEvent.PLATOON_ONLY, 2), Action.DISPATCH)
        self.assertEqual(threshold_action(2, SlotEvent.TRUCK_ONLY, 2), Action.DISPATCH)
        self.assertEqual(threshold_action(1, SlotEvent.TRUCK_ONLY, 2), Action.HOLD)

    def test_zero_threshold_dispatches_every_truck(self):
        """Test m = 0 dispatches whenever a truck is present"""
        self.assertEqual(threshold_action(0, SlotEvent.TRUCK_ONLY, 0), Action.DISPATCH)
        self.assertEqual(threshold_action(0, SlotEvent.NO_ARRIVALS, 0), Action.HOLD)

    def test_negative_threshold_rejected(self):
        """Test m < 0 is rejected"""
        with self.assertRaises(ParameterError) as ctx:
            ThresholdPolicy(-1)
        self.assertEqual(ctx.exception.field, 'm')

    def test_transition_table_matches_step(self):
        """Test the tabulated dynamics agree with transition_step"""
        params = ModelParams(0.45, 0.65, 20)
        next_states, costs = transition_table(params, 4)
        self.assertEqual(next_states.shape, (6, 4))
        for x in range(6):
            for event in EVENTS:
                outcome = transition_step(x, event, threshold_action(x, event, 4), params.kappa)
                self.assertEqual(next_states[x, event.index], outcome.next_state)
                self.assertEqual(costs[x, event.index], outcome.cost)

    def test_induced_chain_structure(self):
        """Test pi_m induces a birth-death chain on [0, m+1]"""
        for p, q in [(0.5, 0.5), (0.4, 0.8), (0.45, 0.65), (0.8, 0.2)]:
            params = ModelParams(p, q, 10)
            probs = event_probabilities(params)
            for m in range(0, 6):
                next_states, _ = transition_table(params, m)
                for x in range(m + 2):
                    up = probs[next_states[x] == x + 1].sum()
                    down = probs[next_states[x] == x - 1].sum()
                    stay = probs[next_states[x] == x].sum()
                    self.assertAlmostEqual(up + down + stay, 1.0, places=12)
                    if 1 <= x < m:
                        self.assertAlmostEqual(down, (1 - p) * q, places=12)
                        self.assertAlmostEqual(up, p * (1 - q), places=12)
                    if x == m + 1:
                        self.assertAlmostEqual(down, 1 - p, places=12)
                        self.assertAlmostEqual(stay, p, places=12)
                        self.assertEqual(up, 0.0)
                self.assertTrue(np.all(next_states <= m + 1))


if __name__ == '__main__':
    unittest.main()
