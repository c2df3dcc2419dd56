import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obfeedback import analytic
from obfeedback.mc_sim import (
    BLOCK_SIZE,
    GAIN,
    LOSS,
    NEUTRAL,
    RateEstimate,
    block_stream,
    characterize_switch_events,
    classify_switch_event,
    classify_switch_events,
    estimate_all,
    estimate_conditional_rate,
    estimate_load,
    estimate_rate,
    instantaneous_rate,
    sample_sinr_matrices,
    schedule_beam,
)
from obfeedback.policies import (
    FeedbackOutcome,
    GeneralPolicy,
    Mode,
    ThresholdPolicy,
    feedback_load,
    matched_gtfp,
    probabilities_to_thresholds,
)
from obfeedback.sinr_models import Nakagami, Rayleigh, Rician
from obfeedback.verification import random_interval_policy

# E[log(1 + max(X1, X2))] for X ~ Exp(1): 2(e E1(1) - e^2 E1(2) / 2), mpmath
TWO_USER_FULL_FEEDBACK = 0.83136610775816556398499534106

EXP1 = Rayleigh(1, 1.0)


class TestScheduling:
    def test_strongest_requester(self):
        out = FeedbackOutcome((((0, 0.9), (1, 1.4)),))
        assert schedule_beam(out, 0) == (1, 1.4)

    def test_outage(self):
        assert schedule_beam(FeedbackOutcome(((),)), 0) == (None, 0.0)

    def test_tie_lowest_user(self):
        out = FeedbackOutcome((((0, 1.0), (1, 1.0)),))
        assert schedule_beam(out, 0) == (0, 1.0)

    def test_rates(self):
        assert instantaneous_rate(FeedbackOutcome(((), ()))) == 0.0
        assert instantaneous_rate(FeedbackOutcome((((0, math.e - 1),),))) == pytest.approx(1.0)
        two = FeedbackOutcome((((0, 1.0),), ((1, 3.0),)))
        assert instantaneous_rate(two) == pytest.approx(math.log(2) + math.log(4), abs=1e-15)


class TestSampling:
    def test_shapes(self):
        gamma = sample_sinr_matrices(Rayleigh(3, 1.0), 5, 11, block_stream(0, 0))
        assert gamma.shape == (11, 3, 5)
        assert np.all(gamma >= 0)

    def test_block_streams_differ(self):
        a = block_stream(1, 0).random(4)
        b = block_stream(1, 1).random(4)
        c = block_stream(2, 0).random(4)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)
        assert np.array_equal(a, block_stream(1, 0).random(4))


class TestEstimates:
    def test_zero_budget(self):
        pol = ThresholdPolicy(tuple(probabilities_to_thresholds(EXP1, [0.0, 0.0])))
        assert estimate_rate(EXP1, pol, 10**5, seed=1).mean == 0.0
        assert estimate_rate(EXP1, ThresholdPolicy((math.inf, math.inf)), 1000).mean == 0.0

    def test_full_feedback_two_users(self):
        est = estimate_rate(EXP1, ThresholdPolicy((0.0, 0.0)), 10**6, seed=3)
        assert est.agrees_with(TWO_USER_FULL_FEEDBACK)

    def test_always_request_load(self):
        est = estimate_load(Rayleigh(2, 1.0), ThresholdPolicy((0.0,) * 4), 5000)
        assert est.mean == 4.0 and est.half_width_95 == 0.0

    def test_mtfp_load_symmetry(self):
        model = Rayleigh(2, 2.0)
        pol = ThresholdPolicy((1.2, 2.0, 0.8), Mode.MTFP)
        est = estimate_load(model, pol, 10**6, seed=7)
        assert est.agrees_with(feedback_load(model, pol, samples=10**6, seed=1),
                               floor=3 * math.sqrt(1.0 / 10**6))

    def test_sum_over_beams(self):
        model = Rayleigh(3, 2.0)
        pol = ThresholdPolicy((1.5,) * 4)
        est = estimate_rate(model, pol, 10**6, seed=4)
        assert est.agrees_with(3 * analytic.rate_homogeneous(model, 4, 1.5))

    @pytest.mark.parametrize("workers", [2, 5])
    def test_worker_count_does_not_change_results(self, workers):
        pol = ThresholdPolicy((0.4, 0.9, 1.3))
        samples = 3 * BLOCK_SIZE + 123
        a = estimate_all(Rician(2.0, 1.5), pol, samples, seed=9, workers=1)
        b = estimate_all(Rician(2.0, 1.5), pol, samples, seed=9, workers=workers)
        assert a == b

    def test_seed_changes_results(self):
        pol = ThresholdPolicy((0.4, 0.9))
        assert estimate_rate(EXP1, pol, 1000, seed=1).mean != estimate_rate(EXP1, pol, 1000, seed=2).mean

    def test_interval_shrinks_as_inverse_root(self):
        pol = ThresholdPolicy((0.5, 0.5, 0.5))
        small = estimate_rate(EXP1, pol, 10**4, seed=1).half_width_95
        large = estimate_rate(EXP1, pol, 10**6, seed=1).half_width_95
        assert small / large == pytest.approx(10.0, rel=0.1)

    def test_rate_estimate_validation(self):
        with pytest.raises(ValueError):
            RateEstimate(0.0, -1.0, 10, 0)
        with pytest.raises(ValueError):
            estimate_rate(EXP1, ThresholdPolicy((1.0,)), 0)

    def test_conditional_rate_floor(self):
        est = estimate_conditional_rate(EXP1, 2.0, 1.0, 50.0, 2000)
        assert est.mean == pytest.approx(math.log(51.0), abs=1e-2)


class TestSingleSwitch:
    @pytest.mark.parametrize("seed", range(4))
    def test_single_switch_never_hurts(self, seed):
        rng = np.random.default_rng(100 + seed)
        model = Rayleigh(1, (0.5, 5.0)[seed % 2])
        n = 2 + seed % 2
        pol = random_interval_policy(rng, n, scale=3 * model.rho)
        tau = matched_gtfp(model, pol).thresholds[0]
        switched = pol.with_user(0, ((tau, math.inf),))
        assert feedback_load(model, switched) == pytest.approx(feedback_load(model, pol), abs=1e-12)
        a = estimate_rate(model, pol, 10**6, seed=seed)
        b = estimate_rate(model, switched, 10**6, seed=seed)
        assert b.mean >= a.mean - 3 * math.hypot(a.stderr, b.stderr)


class TestSwitchEvents:
    POL = GeneralPolicy((((0.0, 1.0), (2.0, math.inf)), ((0.5, math.inf),)))
    TAU = 1.5

    def test_loss(self):
        # user 0 inside its region below tau and strongest
        assert classify_switch_event(self.POL, self.TAU, [[0.9, 0.6]]) == "loss"

    def test_gain(self):
        # user 0 outside its region, above tau and strongest
        assert classify_switch_event(self.POL, self.TAU, [[1.7, 0.6]]) == "gain"

    def test_neutral(self):
        assert classify_switch_event(self.POL, self.TAU, [[0.9, 3.0]]) == "neutral"
        assert classify_switch_event(self.POL, self.TAU, [[2.5, 0.6]]) == "neutral"

    def test_requires_single_beam(self):
        with pytest.raises(ValueError):
            classify_switch_event(self.POL, self.TAU, [[0.9, 0.6], [1.0, 1.0]])

    @given(st.integers(0, 10**6), st.integers(2, 3), st.sampled_from([0.5, 5.0]))
    def test_characterization_agrees(self, seed, n, rho):
        model = Rayleigh(1, rho)
        rng = np.random.default_rng(seed)
        pol = random_interval_policy(rng, n, scale=3 * rho)
        tau = matched_gtfp(model, pol).thresholds[0]
        gamma = sample_sinr_matrices(model, n, 4000, rng)
        direct = classify_switch_events(pol, tau, gamma)
        assert np.array_equal(direct, characterize_switch_events(pol, tau, gamma))
        assert set(np.unique(direct)) <= {LOSS, NEUTRAL, GAIN}
