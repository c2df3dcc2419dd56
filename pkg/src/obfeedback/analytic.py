"""Quadrature evaluation of single-beam rate expressions.

Every integral of the form ``int_a^b log(1 + x) dF^k(x)`` is evaluated in
probability space,

    int_{F(a)}^{F(b)} log(1 + F^{-1}(u)) k u^(k-1) du,

which has a finite domain even when ``b = inf``; internally ``u = 1 - s^2``
tames the slowly diverging integrand at the top end.  Integrals of
``F(x) / (1 + x)`` are taken in ``t = log(1 + x)``.  All functions return
rates per beam in nats and broadcast over array arguments.

Budget-plane quantities use the pair ``(lam, q)`` where ``lam`` is the
combined feedback probability of two users and ``q <= lam / 2`` is the
smaller of the two probabilities.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass

import numpy as np

from .numerics import DEFAULT_QUADRATURE, QuadratureSpec, integrate_batch
from .sinr_models import SinrModel

__all__ = [
    "ConditionalRateInput",
    "log_rate_integral",
    "rate_two_user_beam",
    "rate_two_user_on_plane",
    "plane_rate_sweep",
    "rate_two_user_derivative",
    "rate_homogeneous",
    "conditional_rate_r0",
    "conditional_rate_r1",
    "conditional_rate_r2",
    "conditional_rate_r1_derivative",
    "conditional_rate_r2_derivative",
    "conditional_rate_piecewise",
    "plane_bounds",
    "inject_derivative_fault",
]

_PLANE_SLACK = 1e-12

_derivative_fault = contextvars.ContextVar("derivative_fault", default=False)


@contextlib.contextmanager
def inject_derivative_fault():
    """Test hook: flip the sign of the boundary term in the plane derivative.

    Used as a negative control for the verification suite; has no effect
    outside the ``with`` block or in other threads.
    """
    token = _derivative_fault.set(True)
    try:
        yield
    finally:
        _derivative_fault.reset(token)


def _finish(value, scalar):
    value = np.asarray(value, dtype=float)
    return float(value.reshape(-1)[0]) if scalar else value


def _is_scalar(*args):
    return all(np.ndim(a) == 0 for a in args)


# ---------------------------------------------------------------------------
# Core integrals
# ---------------------------------------------------------------------------

def log_rate_integral(model: SinrModel, u_lo, u_hi, k, spec: QuadratureSpec = DEFAULT_QUADRATURE,
                      initial_panels: int = 8):
    """``int_{u_lo}^{u_hi} log(1 + F^{-1}(u)) k u^(k-1) du``, batched."""
    scalar = _is_scalar(u_lo, u_hi, k)
    u_lo, u_hi, k = np.broadcast_arrays(np.asarray(u_lo, float), np.asarray(u_hi, float),
                                        np.asarray(k, float))
    shape = u_lo.shape
    lo, hi, kk = u_lo.ravel(), u_hi.ravel(), k.ravel()
    lo = np.clip(lo, 0.0, 1.0)
    hi = np.clip(hi, 0.0, 1.0)
    if np.any(lo > hi + 1e-15):
        raise ValueError("integration limits out of order")
    lo = np.minimum(lo, hi)

    # u = 1 - s^2 flattens the log-log growth of the integrand at u -> 1
    s_lo = np.sqrt(1.0 - hi)
    s_hi = np.sqrt(1.0 - lo)

    def integrand(s, idx):
        kv = kk[idx]
        u = 1.0 - s * s
        return np.log1p(model.quantile(u)) * kv * u ** (kv - 1.0) * 2.0 * s

    vals = integrate_batch(integrand, s_lo, s_hi, spec, initial_panels)
    return _finish(vals.reshape(shape), scalar)


_TABLE_MIN_POINTS = 32


def _tail_tables(model, u_points, spec):
    """Upper-tail integrals ``int_u^1 L dv`` and ``int_u^1 L 2v dv`` at many points.

    Integrates between consecutive sorted breakpoints and accumulates from
    the top, so a sweep costs one short integral per point.
    """
    pts = np.unique(np.clip(np.ravel(u_points), 0.0, 1.0))
    edges = pts if pts[-1] == 1.0 else np.append(pts, 1.0)
    m = edges.size - 1
    if m == 0:
        return pts, np.zeros(pts.size), np.zeros(pts.size)
    # pieces touching u = 0 or u = 1 may hold an endpoint singularity and
    # keep the full budget; interior pieces share it
    lo, hi = edges[:-1], edges[1:]
    edge_piece = (lo == 0.0) | (hi == 1.0)
    pieces = np.empty(2 * m)
    for mask, piece_spec, panels in (
        (~edge_piece, QuadratureSpec(spec.relative_tolerance, spec.absolute_tolerance / m,
                                     spec.max_subdivisions), 2),
        (edge_piece, spec, 8),
    ):
        if not mask.any():
            continue
        sel = np.flatnonzero(mask)
        k = sel.size
        vals = np.atleast_1d(log_rate_integral(
            model, np.tile(lo[sel], 2), np.tile(hi[sel], 2),
            np.concatenate([np.ones(k), np.full(k, 2.0)]), piece_spec, initial_panels=panels))
        pieces[sel], pieces[m + sel] = vals[:k], vals[k:]
    one = np.append(np.cumsum(pieces[:m][::-1])[::-1], 0.0)
    two = np.append(np.cumsum(pieces[m:][::-1])[::-1], 0.0)
    return edges, one, two


def _lookup(edges, table, u):
    return table[np.searchsorted(edges, np.clip(u, 0.0, 1.0))]


class _TailTable:
    """Tail integrals on sorted breakpoints, extendable to any ``u``.

    Off-breakpoint values add one short integral from ``u`` up to the next
    breakpoint.
    """

    def __init__(self, model, u_points, spec):
        self.model = model
        self.spec = spec
        self.edges, self.one, self.two = _tail_tables(model, u_points, spec)

    def __call__(self, u):
        u = np.clip(np.atleast_1d(np.asarray(u, float)), 0.0, 1.0)
        j = np.searchsorted(self.edges, u)
        top = self.edges[j]
        one, two = self.one[j].copy(), self.two[j].copy()
        gap = top > u
        if gap.any():
            k = int(gap.sum())
            vals = np.atleast_1d(log_rate_integral(
                self.model, np.tile(u[gap], 2), np.tile(top[gap], 2),
                np.concatenate([np.ones(k), np.full(k, 2.0)]), self.spec))
            one[gap] += vals[:k]
            two[gap] += vals[k:]
        return one, two


def _two_user_rate_u(model, u_lo, u_hi, spec):
    # int_{u_hi}^1 L 2u du + u_hi int_{u_lo}^{u_hi} L du
    u_lo, u_hi = np.broadcast_arrays(np.asarray(u_lo, float), np.asarray(u_hi, float))
    shape = u_lo.shape
    lo, hi = u_lo.ravel(), u_hi.ravel()
    m = lo.size
    if m >= _TABLE_MIN_POINTS:
        edges, one, two = _tail_tables(model, np.concatenate([lo, hi]), spec)
        b_lo, b_hi = _lookup(edges, one, lo), _lookup(edges, one, hi)
        return (_lookup(edges, two, hi) + hi * (b_lo - b_hi)).reshape(shape)
    vals = log_rate_integral(model, np.concatenate([hi, lo]), np.concatenate([np.ones(m), hi]),
                             np.concatenate([np.full(m, 2.0), np.ones(m)]), spec)
    vals = np.atleast_1d(vals)
    return (vals[:m] + hi * vals[m:]).reshape(shape)


def _cdf_over_one_plus_x(model, x_lo, x_hi, spec):
    # int_{x_lo}^{x_hi} F(x) / (1 + x) dx = int F(e^t - 1) dt over t = log(1 + x)
    x_lo, x_hi = np.broadcast_arrays(np.asarray(x_lo, float), np.asarray(x_hi, float))
    shape = x_lo.shape
    t_lo = np.log1p(x_lo.ravel())
    t_hi = np.log1p(x_hi.ravel())
    t_lo = np.minimum(t_lo, t_hi)

    def integrand(t, _idx):
        return model.cdf(np.expm1(t))

    return integrate_batch(integrand, t_lo, t_hi, spec).reshape(shape)


def plane_bounds(lam: float) -> tuple[float, float]:
    """Feasible range ``[max(0, lam - 1), lam / 2]`` of the smaller probability."""
    return max(0.0, lam - 1.0), lam / 2.0


def _check_plane(lam, q):
    lam = np.asarray(lam, float)
    q = np.asarray(q, float)
    if np.any(lam < 0) or np.any(lam > 2):
        raise ValueError("pairwise budget must lie in [0, 2]")
    lo = np.maximum(0.0, lam - 1.0)
    if np.any(q < lo - _PLANE_SLACK) or np.any(q > lam / 2.0 + _PLANE_SLACK):
        raise ValueError("q must lie in [max(0, lam - 1), lam / 2]")
    return lam, np.clip(q, lo, lam / 2.0)


# ---------------------------------------------------------------------------
# Two-user and homogeneous rates
# ---------------------------------------------------------------------------

def rate_two_user_beam(model: SinrModel, tau1, tau2, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Beam rate of two users with thresholds ``tau1`` and ``tau2``.

    With ``a = min(tau)``, ``b = max(tau)``:
    ``int_b^inf log(1+x) dF^2 + F(b) int_a^b log(1+x) dF``.
    """
    scalar = _is_scalar(tau1, tau2)
    t1, t2 = np.broadcast_arrays(np.asarray(tau1, float), np.asarray(tau2, float))
    if np.any(t1 < 0) or np.any(t2 < 0):
        raise ValueError("thresholds must be nonnegative")
    u_lo = np.atleast_1d(model.cdf(np.minimum(t1, t2)))
    u_hi = np.atleast_1d(model.cdf(np.maximum(t1, t2)))
    return _finish(_two_user_rate_u(model, u_lo, u_hi, spec).reshape(t1.shape), scalar)


def rate_two_user_on_plane(model: SinrModel, lam, p2, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Two-user beam rate at probabilities ``(lam - p2, p2)``.

    Equivalent to ``rate_two_user_beam(F^{-1}(1 - lam + p2), F^{-1}(1 - p2))``.
    """
    scalar = _is_scalar(lam, p2)
    lam, q = _check_plane(lam, p2)
    lam, q = np.broadcast_arrays(lam, q)
    return _finish(_two_user_rate_u(model, 1.0 - (lam - q), 1.0 - q, spec), scalar)


def plane_rate_sweep(model: SinrModel, lam: float, grid, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Plane rates on ``grid`` plus a cheap evaluator for off-grid points.

    Returns ``(rates, evaluate)`` where ``evaluate(p2)`` reuses the tail
    integrals accumulated for the grid.  Intended for search loops that probe
    many nearby points of one budget plane.
    """
    lam = float(lam)
    _, q = _check_plane(lam, np.asarray(grid, float))
    q = np.atleast_1d(q)
    table = _TailTable(model, np.concatenate([1.0 - (lam - q), 1.0 - q]), spec)

    def rates_at(p2):
        _, p2 = _check_plane(lam, np.asarray(p2, float))
        p2 = np.atleast_1d(p2)
        u_lo, u_hi = 1.0 - (lam - p2), 1.0 - p2
        b_lo, _ = table(u_lo)
        b_hi, a_hi = table(u_hi)
        return a_hi + u_hi * (b_lo - b_hi)

    def evaluate(p2):
        return float(rates_at(p2)[0])

    return rates_at(q), evaluate


def rate_two_user_derivative(model: SinrModel, lam, p2, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Derivative of ``rate_two_user_on_plane`` with respect to ``p2``.

    ``int_{F^{-1}(1+p2-lam)}^{F^{-1}(1-p2)} F(x)/(1+x) dx
    - (lam - 2 p2) log(1 + F^{-1}(1 + p2 - lam))``.
    """
    scalar = _is_scalar(lam, p2)
    lam, q = _check_plane(lam, p2)
    lam, q = np.broadcast_arrays(lam, q)
    tau_lo = np.atleast_1d(model.quantile(1.0 + q - lam))
    tau_hi = np.atleast_1d(model.quantile(1.0 - q))
    integral = _cdf_over_one_plus_x(model, tau_lo, tau_hi, spec).reshape(lam.shape)
    boundary = (lam - 2.0 * q) * np.log1p(tau_lo.reshape(lam.shape))
    if _derivative_fault.get():
        boundary = -boundary
    return _finish(integral - boundary, scalar)


def rate_homogeneous(model: SinrModel, n: int, tau, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Beam rate with ``n`` users sharing threshold ``tau``: ``int_tau^inf log(1+x) dF^n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scalar = np.ndim(tau) == 0
    tau = np.asarray(tau, float)
    if np.any(tau < 0):
        raise ValueError("threshold must be nonnegative")
    u = np.atleast_1d(model.cdf(tau))
    vals = log_rate_integral(model, u, np.ones_like(u), float(n), spec)
    return _finish(np.reshape(vals, tau.shape), scalar)


# ---------------------------------------------------------------------------
# Conditional rates against an SINR floor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalRateInput:
    """Two users on a budget plane plus the floor set by all other users."""

    gamma_bar: float
    tau_hi: float
    tau_lo: float
    q: float
    lambda_i: float

    def __post_init__(self):
        if not self.gamma_bar >= 0:
            raise ValueError("gamma_bar must be nonnegative")
        if self.tau_lo > self.tau_hi:
            raise ValueError("tau_lo must not exceed tau_hi")
        lo, hi = plane_bounds(self.lambda_i)
        if not (lo - _PLANE_SLACK <= self.q <= hi + _PLANE_SLACK):
            raise ValueError("q outside [max(0, lambda - 1), lambda / 2]")

    @classmethod
    def from_budget(cls, model: SinrModel, gamma_bar: float, q: float, lambda_i: float):
        """Thresholds ``F^{-1}(1 - q)`` and ``F^{-1}(1 + q - lambda_i)``."""
        _check_plane(lambda_i, q)
        return cls(float(gamma_bar), float(model.quantile(1.0 - q)),
                   float(model.quantile(min(1.0, max(0.0, 1.0 + q - lambda_i)))),
                   float(q), float(lambda_i))


def conditional_rate_r0(model: SinrModel, gamma_bar, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Floor above both thresholds: ``F(g)^2 log(1+g) + int_g^inf log(1+x) dF^2``."""
    scalar = np.ndim(gamma_bar) == 0
    g = np.atleast_1d(np.asarray(gamma_bar, float))
    u = np.atleast_1d(model.cdf(g))
    tail = np.atleast_1d(log_rate_integral(model, u, np.ones_like(u), 2.0, spec))
    return _finish((u * u * np.log1p(g) + tail).reshape(np.shape(gamma_bar)), scalar)


def conditional_rate_r1(model: SinrModel, tau_hi, tau_lo, gamma_bar,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Floor below both thresholds: two-user rate plus ``log(1+g) F(tau_lo) F(tau_hi)``."""
    scalar = _is_scalar(tau_hi, tau_lo, gamma_bar)
    th, tl, g = np.broadcast_arrays(np.asarray(tau_hi, float), np.asarray(tau_lo, float),
                                    np.asarray(gamma_bar, float))
    if np.any(tl > th) or np.any(g > tl):
        raise ValueError("conditional_rate_r1 requires gamma_bar <= tau_lo <= tau_hi")
    u_lo = np.atleast_1d(model.cdf(tl))
    u_hi = np.atleast_1d(model.cdf(th))
    base = _two_user_rate_u(model, u_lo, u_hi, spec)
    val = base + np.log1p(g.ravel()).reshape(base.shape) * u_lo * u_hi
    return _finish(val.reshape(th.shape), scalar)


def conditional_rate_r2(model: SinrModel, tau_hi, gamma_bar, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """Floor between the thresholds; the lower-threshold user never matters.

    ``int_{tau_hi}^inf log(1+x) dF^2 + F(tau_hi) int_g^{tau_hi} log(1+x) dF
    + log(1+g) F(tau_hi) F(g)``.
    """
    scalar = _is_scalar(tau_hi, gamma_bar)
    th, g = np.broadcast_arrays(np.asarray(tau_hi, float), np.asarray(gamma_bar, float))
    if np.any(g > th):
        raise ValueError("conditional_rate_r2 requires gamma_bar <= tau_hi")
    u_g = np.atleast_1d(model.cdf(g))
    u_hi = np.atleast_1d(model.cdf(th))
    base = _two_user_rate_u(model, u_g, u_hi, spec)
    val = base + np.log1p(g.ravel()).reshape(base.shape) * u_g * u_hi
    return _finish(val.reshape(th.shape), scalar)


def conditional_rate_r1_derivative(model: SinrModel, gamma_bar, q, lam,
                                   spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """``d R1 / d q = log(1 + g)(lam - 2q) + U(q, lam)``."""
    scalar = _is_scalar(gamma_bar, q, lam)
    g, q, lam = np.broadcast_arrays(np.asarray(gamma_bar, float), np.asarray(q, float),
                                    np.asarray(lam, float))
    val = np.log1p(g) * (lam - 2.0 * q) + rate_two_user_derivative(model, lam, q, spec)
    return _finish(val, scalar)


def conditional_rate_r2_derivative(model: SinrModel, gamma_bar, q,
                                   spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """``d R2 / d q = int_g^{F^{-1}(1-q)} F(x) / (1 + x) dx``, nonnegative."""
    scalar = _is_scalar(gamma_bar, q)
    g, q = np.broadcast_arrays(np.asarray(gamma_bar, float), np.asarray(q, float))
    tau_hi = np.reshape(model.quantile(1.0 - q), g.shape)
    if np.any(g > tau_hi):
        raise ValueError("conditional_rate_r2_derivative requires gamma_bar <= F^{-1}(1 - q)")
    return _finish(_cdf_over_one_plus_x(model, g, tau_hi, spec), scalar)


def _piecewise_branch(model, inp: ConditionalRateInput) -> int:
    tail = float(model.sf(inp.gamma_bar))
    if inp.q > tail:
        return 0
    if inp.q > inp.lambda_i - tail:
        return 1
    return 2


def conditional_rate_piecewise(model: SinrModel, inp: ConditionalRateInput,
                               spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Pick R0, R1 or R2 from where the floor sits relative to the thresholds.

    R0 when ``q > 1 - F(g)`` (floor above ``tau_hi``), R1 when
    ``q > lam - (1 - F(g))`` (floor below ``tau_lo``), R2 otherwise.
    """
    branch = _piecewise_branch(model, inp)
    if branch == 0:
        return float(conditional_rate_r0(model, inp.gamma_bar, spec))
    if branch == 1:
        return float(conditional_rate_r1(model, inp.tau_hi, inp.tau_lo, min(inp.gamma_bar, inp.tau_lo), spec))
    return float(conditional_rate_r2(model, inp.tau_hi, min(inp.gamma_bar, inp.tau_hi), spec))
