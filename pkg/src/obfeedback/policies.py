"""Feedback policies, threshold/probability maps and feedback load.

A user following a threshold policy requests every beam whose SINR reaches
its threshold (GTFP) or only its strongest beam (MTFP).  ``GeneralPolicy``
describes arbitrary single-beam feedback regions as finite unions of
half-open intervals ``[lo, hi)`` and is mainly used to test that threshold
rules are rate-optimal.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .sinr_models import Rayleigh, SinrModel

__all__ = [
    "Mode",
    "ThresholdPolicy",
    "GeneralPolicy",
    "FeedbackOutcome",
    "Policy",
    "apply_policy",
    "request_mask",
    "probabilities_to_thresholds",
    "thresholds_to_probabilities",
    "request_probabilities",
    "feedback_load",
    "homogeneous_policy",
    "matched_gtfp",
    "outage_probability",
    "validate_probabilities",
    "validate_budget",
    "parse_policy",
]


class Mode(enum.Enum):
    GTFP = "gtfp"
    MTFP = "mtfp"


@dataclass(frozen=True)
class ThresholdPolicy:
    thresholds: tuple[float, ...]
    mode: Mode = Mode.GTFP

    def __post_init__(self):
        tau = tuple(float(t) for t in np.atleast_1d(self.thresholds))
        if not tau:
            raise ValueError("policy needs at least one user")
        if any(not t >= 0 for t in tau):
            raise ValueError("thresholds must be nonnegative")
        object.__setattr__(self, "thresholds", tau)
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def n(self) -> int:
        return len(self.thresholds)

    @property
    def tau(self) -> np.ndarray:
        return np.array(self.thresholds)

    def spec(self) -> str:
        return f"{self.mode.value} tau=" + ",".join(repr(t) for t in self.thresholds)


Interval = tuple[float, float]


def _normalize_region(region: Sequence[Interval]) -> tuple[Interval, ...]:
    cleaned = []
    for lo, hi in region:
        lo, hi = float(lo), float(hi)
        if not (lo >= 0 and hi >= lo):
            raise ValueError(f"invalid interval [{lo}, {hi})")
        if hi > lo:
            cleaned.append((lo, hi))
    cleaned.sort()
    for (_, h1), (l2, _) in zip(cleaned, cleaned[1:]):
        if l2 < h1:
            raise ValueError("feedback intervals must be disjoint")
    return tuple(cleaned)


@dataclass(frozen=True)
class GeneralPolicy:
    """Per-user feedback regions for a single-beam system.

    ``regions[i]`` is a tuple of disjoint half-open intervals ``[lo, hi)``;
    ``hi`` may be ``inf``.  User ``i`` requests the beam iff its SINR lies
    in the union.
    """

    regions: tuple[tuple[Interval, ...], ...]
    mode: Mode = Mode.GTFP

    def __post_init__(self):
        regs = tuple(_normalize_region(r) for r in self.regions)
        if not regs:
            raise ValueError("policy needs at least one user")
        object.__setattr__(self, "regions", regs)
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def n(self) -> int:
        return len(self.regions)

    def contains(self, user: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hit = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.regions[user]:
            hit |= (x >= lo) & (x < hi)
        return hit

    def measure(self, model: SinrModel, user: int) -> float:
        """``Pr{gamma in FB_user}`` under ``model``."""
        total = 0.0
        for lo, hi in self.regions[user]:
            upper = 1.0 if math.isinf(hi) else float(model.cdf(hi))
            total += upper - float(model.cdf(lo))
        return min(max(total, 0.0), 1.0)

    def with_user(self, user: int, region: Sequence[Interval]) -> "GeneralPolicy":
        regs = list(self.regions)
        regs[user] = tuple(region)
        return GeneralPolicy(tuple(regs), self.mode)

    def spec(self) -> str:
        parts = []
        for i, reg in enumerate(self.regions, start=1):
            body = "+".join(f"[{lo!r},{'inf' if math.isinf(hi) else repr(hi)})" for lo, hi in reg)
            parts.append(f"u{i}={body or '[0,0)'}")
        return "general " + " ".join(parts)


Policy = Union[ThresholdPolicy, GeneralPolicy]


@dataclass(frozen=True)
class FeedbackOutcome:
    """Requests received by the base station, one tuple per beam.

    ``requests[m]`` lists ``(user, reported SINR)`` pairs in increasing
    user order.
    """

    requests: tuple[tuple[tuple[int, float], ...], ...] = field(default_factory=tuple)

    @property
    def M(self) -> int:
        return len(self.requests)

    def requesters(self, beam: int) -> tuple[tuple[int, float], ...]:
        return self.requests[beam]


def _policy_n(policy: Policy) -> int:
    return policy.n


def request_mask(policy: Policy, gamma: np.ndarray) -> np.ndarray:
    """Boolean request indicator for a batch of SINR matrices.

    ``gamma`` has shape ``(..., M, n)``; the result has the same shape with
    ``True`` where user ``i`` requests beam ``m``.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim < 2:
        raise ValueError("gamma must have shape (..., M, n)")
    M, n = gamma.shape[-2:]
    if n != _policy_n(policy):
        raise ValueError(f"policy has {_policy_n(policy)} users but gamma has {n} columns")
    if np.any(gamma < 0):
        raise ValueError("SINR entries must be nonnegative")
    if isinstance(policy, GeneralPolicy):
        if M != 1:
            raise ValueError("general policies are defined for M = 1 only")
        mask = np.zeros(gamma.shape, dtype=bool)
        for i in range(n):
            mask[..., 0, i] = policy.contains(i, gamma[..., 0, i])
        return mask
    tau = policy.tau
    above = gamma >= tau
    if policy.mode is Mode.GTFP or M == 1:
        return above
    best = np.argmax(gamma, axis=-2)  # first maximum: lowest beam index on ties
    is_best = np.arange(M).reshape((M, 1)) == best[..., None, :]
    return above & is_best


def apply_policy(policy: Policy, gamma) -> FeedbackOutcome:
    """Feedback generated by ``policy`` for one ``M x n`` SINR matrix."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2:
        raise ValueError("gamma must be an M x n matrix")
    mask = request_mask(policy, gamma)
    requests = tuple(
        tuple((int(i), float(gamma[m, i])) for i in np.flatnonzero(mask[m]))
        for m in range(gamma.shape[0])
    )
    return FeedbackOutcome(requests)


# ---------------------------------------------------------------------------
# Probability maps and load
# ---------------------------------------------------------------------------

def validate_probabilities(p) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("feedback probabilities must lie in [0, 1]")
    return p


def validate_budget(lam: float, n: int) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= n:
        raise ValueError(f"feedback budget must lie in [0, {n}]")
    return lam


def probabilities_to_thresholds(model: SinrModel, p) -> np.ndarray:
    """``tau_i = F^{-1}(1 - p_i)``; ``p_i = 0`` maps to the clamped quantile."""
    return np.atleast_1d(model.quantile(1.0 - validate_probabilities(p)))


def thresholds_to_probabilities(model: SinrModel, tau) -> np.ndarray:
    """``p_i = 1 - F(tau_i)``."""
    return np.atleast_1d(model.sf(np.atleast_1d(np.asarray(tau, dtype=float))))


def _mtfp_best_beam_tail(model: SinrModel, tau: np.ndarray, samples: int, seed: int) -> np.ndarray:
    # Pr{max_m gamma_m >= tau} by simulation, one shared sample for all tau
    stream = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    best = model.sample(stream, samples).max(axis=1)
    best.sort()
    return 1.0 - np.searchsorted(best, tau, side="left") / samples


def request_probabilities(model: SinrModel, policy: Policy, *, samples: int = 10**6,
                          seed: int = 0) -> np.ndarray:
    """Per-user probability of requesting beam 1.

    For MTFP with ``M >= 2`` the beam symmetry gives
    ``Pr{request beam 1} = Pr{gamma* >= tau} / M``.  Under Rayleigh fading
    no two beams can both reach SINR 1, so for ``tau >= 1`` this equals
    ``1 - F(tau)`` exactly; below 1 the tail of the best-beam SINR is
    estimated by simulation with the given ``samples`` and ``seed``.
    """
    if isinstance(policy, GeneralPolicy):
        return np.array([policy.measure(model, i) for i in range(policy.n)])
    tau = policy.tau
    p = thresholds_to_probabilities(model, tau)
    if policy.mode is Mode.MTFP and model.M > 1:
        low = tau < 1.0 if isinstance(model, Rayleigh) else np.ones(tau.shape, dtype=bool)
        if low.any():
            p = p.copy()
            p[low] = _mtfp_best_beam_tail(model, tau[low], samples, seed) / model.M
    return p


def feedback_load(model: SinrModel, policy: Policy, **mc) -> float:
    """Expected number of users requesting a given beam, ``sum_i p_i``."""
    return float(np.sum(request_probabilities(model, policy, **mc)))


def outage_probability(model: SinrModel, policy: Policy, **mc) -> float:
    """Probability that nobody requests beam 1, ``prod_i (1 - p_i)``."""
    return float(np.prod(1.0 - request_probabilities(model, policy, **mc)))


def homogeneous_policy(model: SinrModel, n: int, lam: float,
                       mode: Mode = Mode.GTFP) -> ThresholdPolicy:
    """Common threshold ``F^{-1}(1 - lam / n)`` for all ``n`` users."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lam = validate_budget(lam, n)
    tau = float(model.quantile(1.0 - lam / n))
    return ThresholdPolicy((tau,) * n, mode)


def matched_gtfp(model: SinrModel, general: GeneralPolicy) -> ThresholdPolicy:
    """GTFP whose per-user request probabilities equal those of ``general``."""
    if model.M != 1:
        raise ValueError("matched_gtfp requires a single-beam model")
    tau = []
    for i, reg in enumerate(general.regions):
        if len(reg) == 1 and math.isinf(reg[0][1]):
            tau.append(reg[0][0])
        else:
            tau.append(float(model.quantile(1.0 - general.measure(model, i))))
    return ThresholdPolicy(tuple(tau), Mode.GTFP)


# ---------------------------------------------------------------------------
# Specification grammar
# ---------------------------------------------------------------------------

_INTERVAL = re.compile(r"\[\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)")


def _parse_region(text: str) -> tuple[Interval, ...]:
    out = []
    for piece in text.split("+"):
        m = _INTERVAL.fullmatch(piece.strip())
        if not m:
            raise ValueError(f"malformed interval {piece!r}")
        out.append((float(m.group(1)), float(m.group(2))))
    return tuple(out)


def _parse_vector(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"malformed number list {text!r}") from None


def parse_policy(text: str, model: SinrModel | None = None) -> Policy:
    """Parse ``gtfp tau=...``, ``mtfp p=...`` or ``general u1=[a,b)+[c,inf) ...``.

    Probability vectors are mapped to thresholds through ``model``.
    """
    tokens = text.split()
    if not tokens:
        raise ValueError("empty policy specification")
    kind = tokens[0].lower()
    body = tokens[1:]
    if kind in ("gtfp", "mtfp"):
        if len(body) != 1 or "=" not in body[0]:
            raise ValueError("threshold policy needs exactly one of tau=... or p=...")
        key, val = body[0].split("=", 1)
        vec = _parse_vector(val)
        if key == "tau":
            tau = vec
        elif key == "p":
            if model is None:
                raise ValueError("p= policies need a model to map probabilities")
            tau = tuple(probabilities_to_thresholds(model, vec))
        else:
            raise ValueError(f"unknown policy key {key!r}")
        return ThresholdPolicy(tau, Mode(kind))
    if kind == "general":
        regions = {}
        for tok in body:
            m = re.fullmatch(r"u(\d+)=(.+)", tok)
            if not m:
                raise ValueError(f"malformed region {tok!r}")
            regions[int(m.group(1))] = _parse_region(m.group(2))
        if not regions or sorted(regions) != list(range(1, len(regions) + 1)):
            raise ValueError("general policy regions must be numbered u1..un")
        return GeneralPolicy(tuple(regions[i] for i in range(1, len(regions) + 1)))
    raise ValueError(f"unknown policy kind {tokens[0]!r}")
