import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obfeedback import mc_sim
from obfeedback.policies import (
    GeneralPolicy,
    Mode,
    ThresholdPolicy,
    apply_policy,
    feedback_load,
    homogeneous_policy,
    matched_gtfp,
    outage_probability,
    parse_policy,
    probabilities_to_thresholds,
    request_mask,
    request_probabilities,
    thresholds_to_probabilities,
    validate_budget,
)
from obfeedback.sinr_models import QUANTILE_CLAMP, Nakagami, Rayleigh, Rician
from obfeedback.verification import random_interval_policy

EXP1 = Rayleigh(1, 1.0)


class TestApplyPolicy:
    def test_gtfp_single_beam(self):
        out = apply_policy(ThresholdPolicy((1.0, 2.0)), [[1.5, 1.5]])
        assert out.requesters(0) == ((0, 1.5),)

    def test_mtfp_reports_best_beam_only(self):
        out = apply_policy(ThresholdPolicy((1.0,), Mode.MTFP), [[2.0], [0.5]])
        assert out.requesters(0) == ((0, 2.0),)
        assert out.requesters(1) == ()

    def test_gtfp_reports_every_qualifying_beam(self):
        out = apply_policy(ThresholdPolicy((0.4,)), [[2.0], [0.5]])
        assert out.requesters(0) == ((0, 2.0),)
        assert out.requesters(1) == ((0, 0.5),)

    def test_mtfp_tie_goes_to_lowest_beam(self):
        out = apply_policy(ThresholdPolicy((0.1,), Mode.MTFP), [[1.0], [1.0]])
        assert out.requesters(0) == ((0, 1.0),)
        assert out.requesters(1) == ()

    def test_general_policy(self):
        pol = GeneralPolicy((((0.0, 1.0),), ((2.0, math.inf),)))
        out = apply_policy(pol, [[0.5, 1.5]])
        assert out.requesters(0) == ((0, 0.5),)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_policy(ThresholdPolicy((1.0, 1.0)), [[1.0, 2.0, 3.0]])
        with pytest.raises(ValueError):
            request_mask(GeneralPolicy((((0.0, 1.0),),)), np.ones((2, 1)))

    def test_reported_values_equal_matrix_entries(self):
        rng = np.random.default_rng(0)
        gamma = rng.exponential(size=(3, 5))
        out = apply_policy(ThresholdPolicy((0.5,) * 5), gamma)
        for m in range(3):
            for user, value in out.requesters(m):
                assert value == gamma[m, user] and value >= 0.5


class TestGeneralPolicy:
    def test_normalizes_and_drops_empty(self):
        pol = GeneralPolicy((((2.0, 3.0), (0.0, 1.0), (5.0, 5.0)),))
        assert pol.regions == (((0.0, 1.0), (2.0, 3.0)),)

    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            GeneralPolicy((((0.0, 2.0), (1.0, 3.0)),))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            GeneralPolicy((((-1.0, 2.0),),))

    def test_measure(self):
        pol = GeneralPolicy((((0.0, math.log(2)), (math.log(4), math.inf)),))
        assert pol.measure(EXP1, 0) == pytest.approx(0.75, abs=1e-15)


class TestThresholdMaps:
    def test_zero_probability_clamps(self):
        tau = probabilities_to_thresholds(EXP1, [0.0])
        assert tau[0] == pytest.approx(EXP1.quantile(QUANTILE_CLAMP))

    def test_log4(self):
        assert probabilities_to_thresholds(EXP1, [0.25])[0] == pytest.approx(math.log(4), rel=1e-15)
        assert thresholds_to_probabilities(EXP1, [math.log(4)])[0] == pytest.approx(0.25, rel=1e-14)

    def test_zero_threshold(self):
        assert thresholds_to_probabilities(Rician(3.0, 2.0), [0.0])[0] == 1.0

    def test_nakagami_series_value(self):
        # 1 - P(2, 2) = 3 e^{-2}
        p = thresholds_to_probabilities(Nakagami(2.0, 1.0), [1.0])[0]
        assert p == pytest.approx(3 * math.exp(-2), rel=1e-12)
        assert p == pytest.approx(0.4060058, abs=1e-7)

    def test_invalid_probabilities(self):
        with pytest.raises(ValueError):
            probabilities_to_thresholds(EXP1, [1.2])

    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=5), st.sampled_from([
        Rayleigh(1, 1.0), Rayleigh(3, 4.0), Nakagami(1.5, 2.0), Rician(4.0, 1.0)]))
    def test_round_trip(self, p, model):
        back = thresholds_to_probabilities(model, probabilities_to_thresholds(model, p))
        assert np.allclose(back, p, atol=1e-9)


class TestLoad:
    def test_homogeneous_sum(self):
        pol = homogeneous_policy(EXP1, 4, 1.2)
        assert feedback_load(EXP1, pol) == pytest.approx(1.2, abs=1e-12)

    def test_all_feedback(self):
        pol = ThresholdPolicy((0.0,) * 7)
        assert feedback_load(Rayleigh(2, 3.0), pol) == 7.0
        assert outage_probability(Rayleigh(2, 3.0), pol) == 0.0

    def test_outage_product(self):
        pol = ThresholdPolicy((math.log(4),) * 2)
        assert outage_probability(EXP1, pol) == pytest.approx(0.5625, abs=1e-14)

    def test_mtfp_exact_above_one(self):
        model = Rayleigh(2, 2.0)
        pol = ThresholdPolicy((1.5, 3.0), Mode.MTFP)
        assert np.allclose(request_probabilities(model, pol), model.sf(np.array([1.5, 3.0])), rtol=1e-14)

    def test_mtfp_symmetry_below_one(self):
        model = Rayleigh(3, 2.0)
        pol = ThresholdPolicy((0.2, 0.2), Mode.MTFP)
        p = request_probabilities(model, pol, samples=10**6, seed=4)
        # beam-1 requests by simulation of the full matrix
        est = mc_sim.estimate_load(model, pol, 10**6, seed=8)
        assert abs(p.sum() - est.mean) <= 3 * est.stderr + 3 * math.sqrt(p.sum() / 10**6)
        assert p[0] < model.sf(0.2)

    @pytest.mark.parametrize("model,pol", [
        (Rayleigh(1, 1.0), ThresholdPolicy((0.3, 1.2))),
        (Rayleigh(2, 3.0), ThresholdPolicy((0.5, 1.0, 2.0))),
        (Rayleigh(2, 3.0), ThresholdPolicy((1.1, 1.4), Mode.MTFP)),
        (Nakagami(2.0, 1.0), ThresholdPolicy((0.8, 0.9))),
        (Rician(3.0, 2.0), ThresholdPolicy((1.0, 2.5, 4.0))),
    ])
    def test_matches_simulation(self, model, pol):
        est = mc_sim.estimate_all(model, pol, 10**6, seed=5)
        assert est["load"].agrees_with(feedback_load(model, pol))
        assert est["outage"].agrees_with(outage_probability(model, pol))

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            validate_budget(3.0, 2)
        with pytest.raises(ValueError):
            homogeneous_policy(EXP1, 2, -0.1)


class TestHomogeneous:
    def test_two_user_example(self):
        pol = homogeneous_policy(EXP1, 2, 0.5)
        assert np.allclose(pol.tau, math.log(4), rtol=1e-15)

    def test_full_budget(self):
        assert np.all(homogeneous_policy(Rayleigh(2, 5.0), 3, 3.0).tau == 0.0)

    def test_large_system(self):
        pol = homogeneous_policy(EXP1, 150, 5.0)
        assert np.allclose(pol.tau, math.log(30.0), rtol=1e-14)

    @given(st.integers(1, 50), st.floats(0.0, 1.0))
    def test_load_is_budget(self, n, frac):
        lam = frac * n
        pol = homogeneous_policy(Rayleigh(1, 2.0), n, lam)
        assert feedback_load(Rayleigh(1, 2.0), pol) == pytest.approx(lam, abs=1e-9 * n)


class TestMatchedGtfp:
    def test_threshold_region_unchanged(self):
        pol = GeneralPolicy((((0.7, math.inf),), ((1.3, math.inf),)))
        assert matched_gtfp(EXP1, pol).thresholds == (0.7, 1.3)

    def test_two_piece_region(self):
        pol = GeneralPolicy((((0.0, math.log(2)), (math.log(4), math.inf)),))
        tau = matched_gtfp(EXP1, pol).thresholds[0]
        assert tau == pytest.approx(math.log(4 / 3), rel=1e-12)

    def test_two_piece_region_simulated_load(self):
        pol = GeneralPolicy((((0.0, math.log(2)), (math.log(4), math.inf)),))
        est = mc_sim.estimate_load(EXP1, matched_gtfp(EXP1, pol), 10**6, seed=2)
        assert est.agrees_with(0.75)

    def test_requires_single_beam(self):
        with pytest.raises(ValueError):
            matched_gtfp(Rayleigh(2, 1.0), GeneralPolicy((((0.0, 1.0),),)))

    @given(st.integers(0, 10**6), st.integers(1, 4), st.sampled_from([0.5, 1.0, 5.0]))
    def test_load_preserved(self, seed, n, rho):
        model = Rayleigh(1, rho)
        pol = random_interval_policy(np.random.default_rng(seed), n, scale=3 * rho)
        assert feedback_load(model, matched_gtfp(model, pol)) == pytest.approx(
            feedback_load(model, pol), abs=1e-12)


class TestModeEquivalence:
    @pytest.mark.parametrize("M", [2, 3])
    def test_gtfp_equals_mtfp_above_one(self, M):
        gamma = mc_sim.sample_sinr_matrices(Rayleigh(M, 3.0), 4, 10**5, mc_sim.block_stream(1, 0))
        tau = (1.01, 1.2, 2.0, 5.0)
        g = request_mask(ThresholdPolicy(tau, Mode.GTFP), gamma)
        m = request_mask(ThresholdPolicy(tau, Mode.MTFP), gamma)
        assert np.array_equal(g, m)

    def test_differs_below_one(self):
        gamma = mc_sim.sample_sinr_matrices(Rayleigh(2, 3.0), 2, 10**4, mc_sim.block_stream(1, 0))
        g = request_mask(ThresholdPolicy((0.3, 0.3), Mode.GTFP), gamma)
        m = request_mask(ThresholdPolicy((0.3, 0.3), Mode.MTFP), gamma)
        assert not np.array_equal(g, m)

    def test_single_beam_identical(self):
        gamma = np.random.default_rng(0).exponential(size=(1000, 1, 3))
        tau = (0.2, 0.5, 1.0)
        assert np.array_equal(request_mask(ThresholdPolicy(tau, Mode.GTFP), gamma),
                              request_mask(ThresholdPolicy(tau, Mode.MTFP), gamma))


class TestGrammar:
    def test_threshold_forms(self):
        assert parse_policy("gtfp tau=0.5,1.2") == ThresholdPolicy((0.5, 1.2))
        pol = parse_policy("mtfp p=0.25,0.25", EXP1)
        assert pol.mode is Mode.MTFP and np.allclose(pol.tau, math.log(4))

    def test_general_form(self):
        pol = parse_policy("general u1=[0,0.7)+[1.4,inf) u2=[0.2,inf)")
        assert pol.regions == (((0.0, 0.7), (1.4, math.inf)), ((0.2, math.inf),))

    def test_spec_round_trip(self):
        for pol in [ThresholdPolicy((0.5, 1.25), Mode.MTFP),
                    GeneralPolicy((((0.0, 0.7), (1.4, math.inf)), ((0.2, 3.0),)))]:
            assert parse_policy(pol.spec()) == pol

    @pytest.mark.parametrize("text", [
        "", "gtfp", "gtfp tau=1 p=0.2", "gtfp q=1", "gtfp tau=a,b", "mtfp p=0.2",
        "general u2=[0,1)", "general u1=[0,1]", "random tau=1", "gtfp tau=-1",
    ])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_policy(text)
