"""Cross-validation suites run by ``obf verify``.

Each check compares two independent routes to the same quantity
(quadrature against simulation, finite differences against an analytic
derivative, set membership against direct rate comparison) and reports a
named pass/fail result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analytic, mc_sim, policies, schur
from .numerics import QuadratureSpec
from .sinr_models import Nakagami, Rayleigh, Rician

__all__ = ["CheckResult", "SUITES", "run_suites", "random_interval_policy"]


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str


def _fd_spec():
    return QuadratureSpec(relative_tolerance=1e-12, absolute_tolerance=1e-15, max_subdivisions=4000)


def check_derivative(samples: int, seed: int, workers: int) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    spec = _fd_spec()
    h = 1e-5
    worst = 0.0
    for model in (Rayleigh(1, 1.0), Rayleigh(1, 10.0), Rayleigh(2, 3.0)):
        lam = rng.uniform(0.05, 1.95, 6)
        lo = np.maximum(0.0, lam - 1.0)
        # the finite difference degrades where a threshold diverges at the plane edge
        lo = lo + 0.05 * (lam / 2.0 - lo)
        q = lo + rng.uniform(0.0, 1.0, lam.size) * (lam / 2.0 - h - lo)
        fd = (analytic.rate_two_user_on_plane(model, lam, q + h, spec)
              - analytic.rate_two_user_on_plane(model, lam, q - h, spec)) / (2.0 * h)
        an = analytic.rate_two_user_derivative(model, lam, q, spec)
        worst = max(worst, float(np.max(np.abs(fd - an))))
    ok = worst <= 1e-5
    return [CheckResult("derivative", "derivative-mismatch", ok, f"max |FD - analytic| = {worst:.3g}")]


def check_oracle(samples: int, seed: int, workers: int) -> list[CheckResult]:
    cases = [
        (Rayleigh(1, 1.0), (0.3, 1.2)),
        (Rayleigh(1, 10.0), (0.0, 5.0)),
        (Nakagami(2.0, 2.0), (0.5, 1.5)),
        (Rician(5.0, 3.0), (1.0, 2.0)),
    ]
    rate_ok, load_ok = True, True
    worst_rate, worst_load = 0.0, 0.0
    for k, (model, tau) in enumerate(cases):
        pol = policies.ThresholdPolicy(tau)
        est = mc_sim.estimate_all(model, pol, samples, seed + k, workers)
        exact = analytic.rate_two_user_beam(model, *tau)
        z = abs(est["rate"].mean - exact) / max(est["rate"].stderr, 1e-300)
        worst_rate = max(worst_rate, z)
        rate_ok &= z <= 3.0
        load = policies.feedback_load(model, pol)
        zl = abs(est["load"].mean - load) / max(est["load"].stderr, 1e-300)
        worst_load = max(worst_load, zl)
        load_ok &= zl <= 3.0
    return [
        CheckResult("oracle", "oracle-rate-mismatch", rate_ok, f"worst |z| = {worst_rate:.2f}"),
        CheckResult("oracle", "oracle-load-mismatch", load_ok, f"worst |z| = {worst_load:.2f}"),
    ]


def random_interval_policy(rng: np.random.Generator, n: int, max_pieces: int = 3,
                           scale: float = 3.0) -> policies.GeneralPolicy:
    """Random single-beam policy; each user gets 1..max_pieces disjoint intervals."""
    regions = []
    for _ in range(n):
        pieces = int(rng.integers(1, max_pieces + 1))
        cuts = np.sort(rng.uniform(0.0, scale, 2 * pieces))
        ivs = [(cuts[2 * j], cuts[2 * j + 1]) for j in range(pieces)]
        if rng.random() < 0.5:
            ivs[-1] = (ivs[-1][0], math.inf)
        regions.append(tuple(ivs))
    return policies.GeneralPolicy(tuple(regions))


def check_threshold(samples: int, seed: int, workers: int, n_policies: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    load_gap = 0.0
    mismatches = 0
    for k in range(n_policies):
        model = Rayleigh(1, (0.5, 5.0)[k % 2])
        n = 2 + k % 2
        gen = random_interval_policy(rng, n, scale=3.0 * model.rho)
        matched = policies.matched_gtfp(model, gen)
        load_gap = max(load_gap, abs(policies.feedback_load(model, gen) - policies.feedback_load(model, matched)))
        r_gen = mc_sim.estimate_rate(model, gen, samples, seed + k, workers)
        r_thr = mc_sim.estimate_rate(model, matched, samples, seed + k, workers)
        guard = 3.0 * math.hypot(r_gen.stderr, r_thr.stderr)
        worst = max(worst, (r_gen.mean - r_thr.mean) / guard if guard > 0 else 0.0)

        gamma = mc_sim.sample_sinr_matrices(model, n, min(samples, 1 << 16), mc_sim.block_stream(seed, 10_000 + k))
        tau = matched.thresholds[0]
        direct = mc_sim.classify_switch_events(gen, tau, gamma)
        by_sets = mc_sim.characterize_switch_events(gen, tau, gamma)
        mismatches += int(np.count_nonzero(direct != by_sets))
    ok = worst <= 1.0 and load_gap <= 1e-12
    return [
        CheckResult("threshold", "threshold-optimality", ok,
                    f"worst shortfall / guard = {worst:.2f}, load gap = {load_gap:.1e}"),
        CheckResult("threshold", "switch-characterization", mismatches == 0, f"{mismatches} mismatches"),
    ]


def check_mode_equivalence(samples: int, seed: int, workers: int) -> list[CheckResult]:
    mismatches = 0
    for M in (2, 3):
        model = Rayleigh(M, 2.0)
        n = 4
        g = policies.ThresholdPolicy((1.01,) * n, policies.Mode.GTFP)
        m = policies.ThresholdPolicy((1.01,) * n, policies.Mode.MTFP)
        gamma = mc_sim.sample_sinr_matrices(model, n, min(samples, 10**5), mc_sim.block_stream(seed, M))
        mismatches += int(np.count_nonzero(policies.request_mask(g, gamma) != policies.request_mask(m, gamma)))
    return [CheckResult("modes", "gtfp-mtfp-equivalence", mismatches == 0, f"{mismatches} mismatches")]


def check_schur(samples: int, seed: int, workers: int) -> list[CheckResult]:
    models = [Rayleigh(1, r) for r in (0.1, 0.5, 1.0, 1.5, 10.0)] + [Rayleigh(M, 5.0) for M in (2, 3)]
    lam_grid = schur.default_lambda_grid(21)
    broken = []
    for model in models:
        r5 = schur.check_theorem5(model, lam_grid, 41)
        r6 = schur.check_theorem6(model)
        r19 = schur.check_condition19(model, lam_grid, 41)
        if (r6.holds and not r5.holds) or (r19.holds and not r5.holds):
            broken.append(model.spec())
    neg = all(
        np.all(schur.rayleigh_g_closed_form(M, rho, np.linspace(0, 0.9999, 201)) < 0)
        for M in (2, 3, 4) for rho in (0.01, 1.0, 100.0)
    )
    return [
        CheckResult("schur", "condition-chain", not broken, "ok" if not broken else ", ".join(broken)),
        CheckResult("schur", "rayleigh-g-negative", neg, "closed form < 0 on grid" if neg else "nonnegative value found"),
    ]


SUITES: dict[str, Callable[[int, int, int], list[CheckResult]]] = {
    "derivative": check_derivative,
    "oracle": check_oracle,
    "threshold": check_threshold,
    "modes": check_mode_equivalence,
    "schur": check_schur,
}


def run_suites(names, samples: int = 200_000, seed: int = 0, workers: int = 1) -> list[CheckResult]:
    results = []
    for name in names:
        results.extend(SUITES[name](samples, seed, workers))
    return results
