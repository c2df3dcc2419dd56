"""Monte-Carlo estimation of sum-rate, feedback load and switch events.

Random numbers come from counter-based Philox streams keyed by
``(seed, block index)``; each block holds a fixed number of SINR matrices,
so an estimate depends only on ``(seed, samples)`` and never on how many
worker threads evaluated the blocks.  Per-block moments are merged with a
fixed pairwise tree.

Beam and user indices are zero-based throughout.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .policies import FeedbackOutcome, GeneralPolicy, Policy, request_mask
from .sinr_models import SinrModel

__all__ = [
    "BLOCK_SIZE",
    "RateEstimate",
    "block_stream",
    "sample_sinr_matrices",
    "schedule_beam",
    "instantaneous_rate",
    "estimate_rate",
    "estimate_load",
    "estimate_outage",
    "estimate_all",
    "estimate_conditional_rate",
    "classify_switch_event",
    "classify_switch_events",
    "characterize_switch_events",
    "LOSS",
    "GAIN",
    "NEUTRAL",
]

BLOCK_SIZE = 1 << 16
_Z95 = 1.959963984540054

LOSS, NEUTRAL, GAIN = -1, 0, 1
_EVENT_NAMES = {LOSS: "loss", NEUTRAL: "neutral", GAIN: "gain"}


@dataclass(frozen=True)
class RateEstimate:
    """Sample mean with its 95% confidence half-width."""

    mean: float
    half_width_95: float
    samples: int
    seed: int

    def __post_init__(self):
        if self.half_width_95 < 0:
            raise ValueError("half-width must be nonnegative")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")

    @property
    def stderr(self) -> float:
        return self.half_width_95 / _Z95

    def agrees_with(self, value: float, sigmas: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.mean - value) <= sigmas * self.stderr + floor


def block_stream(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(block),))))


def sample_sinr_matrices(model: SinrModel, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent ``M x n`` SINR matrices, shape ``(size, M, n)``."""
    draws = model.sample(rng, size * n).reshape(size, n, model.M)
    return np.ascontiguousarray(draws.transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

def schedule_beam(outcome: FeedbackOutcome, beam: int) -> tuple[int | None, float]:
    """Strongest requester on ``beam``; ``(None, 0.0)`` on feedback outage.

    Ties go to the lowest user index.
    """
    best_user, best = None, 0.0
    for user, sinr in outcome.requesters(beam):
        if best_user is None or sinr > best or (sinr == best and user < best_user):
            best_user, best = user, sinr
    return best_user, best


def instantaneous_rate(outcome: FeedbackOutcome) -> float:
    """``sum_m log(1 + scheduled SINR on beam m)`` in nats."""
    return float(sum(math.log1p(schedule_beam(outcome, m)[1]) for m in range(outcome.M)))


def _scheduled_sinr(mask: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return np.where(mask, gamma, 0.0).max(axis=-1)


# ---------------------------------------------------------------------------
# Block engine
# ---------------------------------------------------------------------------

def _merge(a, b):
    (na, ma, sa), (nb, mb, sb) = a, b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), sa + sb + delta * delta * (na * nb / n)


def _tree_reduce(parts):
    while len(parts) > 1:
        nxt = [_merge(parts[i], parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _run_blocks(statistic: Callable[[np.random.Generator, int], np.ndarray], samples: int,
                seed: int, workers: int = 1):
    """Mean and variance of per-sample statistics over ``samples`` draws.

    ``statistic(rng, size)`` returns an array of shape ``(size, k)``.
    """
    samples = int(samples)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    n_blocks = -(-samples // BLOCK_SIZE)

    def one(block):
        size = min(BLOCK_SIZE, samples - block * BLOCK_SIZE)
        vals = np.asarray(statistic(block_stream(seed, block), size), dtype=float)
        vals = vals.reshape(size, -1)
        mean = vals.mean(axis=0)
        return float(size), mean, ((vals - mean) ** 2).sum(axis=0)

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(n_blocks)))
    else:
        parts = [one(b) for b in range(n_blocks)]
    count, mean, m2 = _tree_reduce(parts)
    var = m2 / (count - 1) if count > 1 else np.zeros_like(mean)
    return mean, var


def _estimate(mean, var, samples, seed):
    return RateEstimate(float(mean), float(_Z95 * math.sqrt(max(var, 0.0) / samples)), int(samples), int(seed))


def _policy_stats(model: SinrModel, policy: Policy):
    def stat(rng, size):
        gamma = sample_sinr_matrices(model, policy.n, size, rng)
        mask = request_mask(policy, gamma)
        rate = np.log1p(_scheduled_sinr(mask, gamma)).sum(axis=-1)
        beam1 = mask[:, 0, :]
        load = beam1.sum(axis=-1)
        outage = ~beam1.any(axis=-1)
        return np.column_stack([rate, load, outage])
    return stat


def _policy_estimates(model, policy, samples, seed, workers):
    mean, var = _run_blocks(_policy_stats(model, policy), samples, seed, workers)
    return [_estimate(m, v, samples, seed) for m, v in zip(mean, var)]


def estimate_rate(model: SinrModel, policy: Policy, samples: int, seed: int = 0,
                  workers: int = 1) -> RateEstimate:
    """Ergodic sum-rate over all ``M`` beams, in nats per channel use."""
    return _policy_estimates(model, policy, samples, seed, workers)[0]


def estimate_load(model: SinrModel, policy: Policy, samples: int, seed: int = 0,
                  workers: int = 1) -> RateEstimate:
    """Mean number of users requesting beam 0."""
    return _policy_estimates(model, policy, samples, seed, workers)[1]


def estimate_outage(model: SinrModel, policy: Policy, samples: int, seed: int = 0,
                    workers: int = 1) -> RateEstimate:
    """Frequency of feedback outage on beam 0."""
    return _policy_estimates(model, policy, samples, seed, workers)[2]


def estimate_all(model: SinrModel, policy: Policy, samples: int, seed: int = 0,
                 workers: int = 1) -> dict[str, RateEstimate]:
    """Rate, beam-0 load and beam-0 outage from a single pass."""
    rate, load, outage = _policy_estimates(model, policy, samples, seed, workers)
    return {"rate": rate, "load": load, "outage": outage}


def estimate_conditional_rate(model: SinrModel, tau_hi: float, tau_lo: float, gamma_bar: float,
                              samples: int, seed: int = 0, workers: int = 1) -> RateEstimate:
    """Single-beam rate of two threshold users against a fixed SINR floor.

    The floor ``gamma_bar`` stands for the strongest request among all
    other users and is always available to the scheduler.
    """
    if model.M != 1:
        raise ValueError("conditional rates are defined for single-beam models")
    tau = np.array([tau_lo, tau_hi])

    def stat(rng, size):
        g = model.sample(rng, 2 * size).reshape(size, 2)
        best = np.where(g >= tau, g, 0.0).max(axis=1)
        return np.log1p(np.maximum(best, gamma_bar))[:, None]

    mean, var = _run_blocks(stat, samples, seed, workers)
    return _estimate(mean[0], var[0], samples, seed)


# ---------------------------------------------------------------------------
# Switch events
# ---------------------------------------------------------------------------

def _switched(policy: GeneralPolicy, tau: float, user: int) -> GeneralPolicy:
    return policy.with_user(user, ((tau, math.inf),))


def classify_switch_events(policy: GeneralPolicy, tau: float, gamma: np.ndarray,
                           user: int = 0) -> np.ndarray:
    """Compare per-matrix rates before and after ``user`` adopts threshold ``tau``.

    ``gamma`` has shape ``(S, 1, n)``.  Returns ``LOSS`` / ``NEUTRAL`` /
    ``GAIN`` codes: the rate with the threshold rule is lower / equal /
    higher.  Scheduled SINRs are compared directly, which orders the rates
    without rounding through the logarithm.
    """
    gamma = np.asarray(gamma, dtype=float)
    before = _scheduled_sinr(request_mask(policy, gamma), gamma)[:, 0]
    after = _scheduled_sinr(request_mask(_switched(policy, tau, user), gamma), gamma)[:, 0]
    return np.sign(after - before).astype(int)


def classify_switch_event(policy: GeneralPolicy, tau: float, gamma, user: int = 0) -> str:
    """Event class (``"loss"``, ``"gain"`` or ``"neutral"``) for one matrix."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2 or gamma.shape[0] != 1:
        raise ValueError("switch events are defined for single-beam (1 x n) matrices")
    return _EVENT_NAMES[int(classify_switch_events(policy, tau, gamma[None], user)[0])]


def characterize_switch_events(policy: GeneralPolicy, tau: float, gamma: np.ndarray,
                               user: int = 0) -> np.ndarray:
    """Event codes from set membership alone.

    With ``g`` the switching user's SINR and ``g_bar`` the strongest request
    among the others (0 if none): a loss occurs iff ``g`` is in the feedback
    region, below ``tau`` and above ``g_bar``; a gain iff ``g`` is outside
    the region, at least ``tau`` and above ``g_bar``.
    """
    gamma = np.asarray(gamma, dtype=float)[:, 0, :]
    g = gamma[:, user]
    others = np.delete(np.arange(gamma.shape[1]), user)
    if others.size:
        hits = np.column_stack([policy.contains(j, gamma[:, j]) for j in others])
        g_bar = np.where(hits, gamma[:, others], 0.0).max(axis=1)
    else:
        g_bar = np.zeros_like(g)
    in_region = policy.contains(user, g)
    wins = g_bar < g
    codes = np.zeros(g.shape, dtype=int)
    codes[in_region & (g < tau) & wins] = LOSS
    codes[~in_region & (g >= tau) & wins] = GAIN
    return codes
