"""Special functions, quadrature and root finding.

Everything here is vectorized over numpy arrays and free of global state.
The special functions are implemented directly (Halley iteration for the
Lambert W function, series / continued fraction for the incomplete gamma
function, a modified-Bessel series for the Marcum Q function) so that the
rate formulas built on top of them do not depend on library internals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "QuadratureSpec",
    "QuadratureError",
    "BracketError",
    "lambert_w0",
    "regularized_lower_gamma",
    "bessel_i_scaled",
    "marcum_q1",
    "integrate",
    "integrate_batch",
    "invert_monotone",
]

_INV_E = math.exp(-1.0)


class QuadratureError(ArithmeticError):
    """Adaptive quadrature ran out of subdivisions before meeting tolerance."""

    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class BracketError(ValueError):
    """Target value is not enclosed by the supplied bracket."""


@dataclass(frozen=True)
class QuadratureSpec:
    relative_tolerance: float = 1e-9
    absolute_tolerance: float = 1e-12
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.relative_tolerance > 0 and self.absolute_tolerance > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()


def _as_output(values, scalar_input):
    values = np.asarray(values, dtype=float)
    return float(values.reshape(-1)[0]) if scalar_input else values


# ---------------------------------------------------------------------------
# Lambert W
# ---------------------------------------------------------------------------

def _lambert_initial_guess(x):
    w = np.empty_like(x)
    near_branch = x < -0.25
    p = np.sqrt(np.maximum(2.0 * (math.e * x[near_branch] + 1.0), 0.0))
    w[near_branch] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    mid = (~near_branch) & (x <= 3.0)
    w[mid] = np.log1p(x[mid]) * (1.0 - 0.1 * np.log1p(x[mid]))
    big = x > 3.0
    l1 = np.log(x[big])
    l2 = np.log(l1)
    w[big] = l1 - l2 + l2 / l1
    return w


def lambert_w0(x, *, tol: float = 1e-13, max_iter: int = 50):
    """Principal branch of the Lambert W function, ``w * exp(w) = x``.

    Halley iteration from a branch-point series (near ``-1/e``) or an
    asymptotic guess (large ``x``).  Inputs below ``-1/e`` by more than
    ``tol`` raise ``ValueError``; inputs inside that slack are snapped to
    the branch point.
    """
    scalar = np.ndim(x) == 0
    x = np.array(x, dtype=float, ndmin=1)
    if np.any(np.isnan(x)):
        raise ValueError("lambert_w0 is undefined for NaN")
    if np.any(x < -_INV_E - tol):
        raise ValueError("lambert_w0 requires x >= -1/e")
    x = np.maximum(x, -_INV_E)

    w = _lambert_initial_guess(x)
    active = np.isfinite(x) & (x != 0.0) & (x != -_INV_E)
    w[x == 0.0] = 0.0
    w[x == -_INV_E] = -1.0
    w[np.isposinf(x)] = np.inf
    for _ in range(max_iter):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        resid = wa * ew - x[active]
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * resid / (2.0 * wp1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(denom != 0.0, resid / denom, 0.0)
        new = wa - step
        # Halley can overshoot below the branch point when |w + 1| is tiny.
        new = np.maximum(new, -1.0)
        w[active] = new
        done = np.abs(step) <= tol * np.maximum(1.0, np.abs(new))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return _as_output(w, scalar)


def lambert_w0_from_log(log_x, *, max_iter: int = 50):
    """``W(exp(log_x))`` for arguments too large to exponentiate.

    Solves ``w + log(w) = log_x`` by Newton's method; only intended for
    ``log_x`` well above 1.
    """
    scalar = np.ndim(log_x) == 0
    t = np.array(log_x, dtype=float, ndmin=1)
    w = t - np.log(t)
    for _ in range(max_iter):
        step = (w + np.log(w) - t) * w / (w + 1.0)
        w = w - step
        if np.all(np.abs(step) <= 1e-15 * np.abs(w)):
            break
    return _as_output(w, scalar)


# ---------------------------------------------------------------------------
# Regularized lower incomplete gamma function
# ---------------------------------------------------------------------------

def _gammainc_series(a, x, max_iter):
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    total = np.ones_like(x)
    term = np.ones_like(x)
    denom = a.copy()
    for _ in range(max_iter):
        denom = denom + 1.0
        term = term * x / denom
        total = total + term
        if np.all(term <= 2e-17 * total):
            break
    lg = np.vectorize(math.lgamma, otypes=[float])(a + 1.0)
    log_pref = a * np.log(x) - x - lg
    return np.exp(log_pref) * total


def _gammainc_upper_cf(a, x, max_iter):
    # Modified Lentz evaluation of the continued fraction for Q(a, x).
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / np.where(b == 0.0, tiny, b)
    h = d.copy()
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) <= 4e-16):
            break
    lg = np.vectorize(math.lgamma, otypes=[float])(a)
    return np.exp(a * np.log(x) - x - lg) * h


def regularized_lower_gamma(shape, x, *, max_iter: int = 2000):
    """Regularized lower incomplete gamma function ``P(shape, x)``.

    Power series for ``x < shape + 1``, continued fraction for the
    complement otherwise.  The result is clamped to ``[0, 1]``.
    """
    scalar = np.ndim(shape) == 0 and np.ndim(x) == 0
    a, x = np.broadcast_arrays(np.asarray(shape, dtype=float), np.asarray(x, dtype=float))
    a = np.array(a, ndmin=1)
    x = np.array(x, ndmin=1)
    if np.any(~(a > 0)):
        raise ValueError("regularized_lower_gamma requires shape > 0")
    if np.any(~(x >= 0)):
        raise ValueError("regularized_lower_gamma requires x >= 0")

    out = np.zeros_like(x)
    pos = x > 0
    use_series = pos & (x < a + 1.0)
    use_cf = pos & ~use_series & np.isfinite(x)
    if use_series.any():
        out[use_series] = _gammainc_series(a[use_series], x[use_series], max_iter)
    if use_cf.any():
        out[use_cf] = 1.0 - _gammainc_upper_cf(a[use_cf], x[use_cf], max_iter)
    out[np.isposinf(x)] = 1.0
    out = np.clip(out, 0.0, 1.0)
    return _as_output(out.reshape(np.shape(out)), scalar)


# ---------------------------------------------------------------------------
# Modified Bessel functions and the Marcum Q function
# ---------------------------------------------------------------------------

def _miller_start(x_max, n_orders):
    return int(n_orders + 30 + 12.0 * math.sqrt(max(x_max, 0.0)) + 0.25 * x_max ** 0.5 * 10)


def bessel_i_scaled(n_orders: int, x):
    """``exp(-x) * I_k(x)`` for ``k = 0 .. n_orders - 1``.

    Miller's downward recurrence normalized by
    ``I_0(x) + 2 * sum_k I_k(x) = exp(x)``.  Returns an array of shape
    ``(n_orders,) + x.shape``.  ``x`` must be nonnegative.
    """
    x = np.asarray(x, dtype=float)
    flat = np.array(x, ndmin=1).ravel()
    if np.any(flat < 0):
        raise ValueError("bessel_i_scaled requires x >= 0")
    out = np.zeros((n_orders, flat.size))
    zero = flat == 0.0
    out[0, zero] = 1.0
    # leading series term where the downward recurrence would overflow
    tiny = ~zero & (flat < 1e-30)
    if tiny.any():
        half = 0.5 * flat[tiny]
        term = np.ones_like(half)
        for k in range(n_orders):
            out[k, tiny] = term
            term = term * half / (k + 1)
    pos = ~zero & ~tiny
    if pos.any():
        xp = flat[pos]
        start = _miller_start(float(xp.max()), n_orders)
        i_next = np.zeros_like(xp)
        i_cur = np.full_like(xp, 1e-300)
        norm = np.zeros_like(xp)
        vals = np.zeros((n_orders, xp.size))
        for k in range(start, 0, -1):
            # recurrence: I_{k-1} = I_{k+1} + (2k/x) I_k
            i_prev = i_next + (2.0 * k / xp) * i_cur
            i_next, i_cur = i_cur, i_prev
            # i_cur now holds I_{k-1}, i_next holds I_k
            if k - 1 < n_orders:
                vals[k - 1] = i_cur
            norm = norm + 2.0 * i_next
            big = i_cur > 1e250
            if big.any():
                scale = np.where(big, 1e-250, 1.0)
                i_cur = i_cur * scale
                i_next = i_next * scale
                norm = norm * scale
                vals = vals * scale
        norm = norm + i_cur
        out[:, pos] = vals / norm
    return out.reshape((n_orders,) + x.shape)


def _marcum_terms(x):
    return int(40 + 10.0 * math.sqrt(x) + 1)


def _miller_weighted_sum(x, log_ratio, n_terms):
    """``sum_k r^k e^{-x} I_k(x)`` over ``k >= 0`` and over ``k >= 1``.

    The sums are accumulated during the downward recurrence itself, so no
    table of Bessel values is stored.
    """
    start = _miller_start(float(x.max()), n_terms)
    i_next = np.zeros_like(x)
    i_cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    acc = np.zeros_like(x)
    for k in range(start, 0, -1):
        i_prev = i_next + (2.0 * k / x) * i_cur
        i_next, i_cur = i_cur, i_prev
        # i_next = I_k, i_cur = I_{k-1} (unnormalized)
        norm = norm + 2.0 * i_next
        if k <= n_terms:
            acc = acc + np.exp(k * log_ratio) * i_next
        big = i_cur > 1e250
        if big.any():
            scale = np.where(big, 1e-250, 1.0)
            i_cur, i_next = i_cur * scale, i_next * scale
            norm, acc = norm * scale, acc * scale
    norm = norm + i_cur
    from_one = acc / norm
    return from_one + i_cur / norm, from_one



def marcum_q1(a, b):
    """First-order Marcum Q function ``Q_1(a, b)``.

    For ``b >= a`` the tail is summed directly,
    ``Q_1 = exp(-(a^2+b^2)/2) sum_{k>=0} (a/b)^k I_k(ab)``; for ``b < a`` the
    complement ``1 - Q_1 = exp(-(a^2+b^2)/2) sum_{k>=1} (b/a)^k I_k(ab)`` is
    summed instead so that both regimes are free of cancellation.
    """
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a = a.ravel().copy()
    b = b.ravel().copy()
    if np.any(~(a >= 0)) or np.any(~(b >= 0)):
        raise ValueError("marcum_q1 requires a >= 0 and b >= 0")

    out = np.ones_like(a)
    out[np.isposinf(b)] = 0.0
    work = (b > 0) & np.isfinite(b)
    zero_a = work & (a == 0)
    out[zero_a] = np.exp(-0.5 * b[zero_a] ** 2)
    work &= a > 0
    # tiny a*b: I_k(x) ~ (x/2)^k / k! sums the series in closed form
    tiny = work & (a * b < 1e-30)
    at, bt = a[tiny], b[tiny]
    out[tiny] = np.where(bt >= at, np.exp(-0.5 * bt * bt),
                         1.0 + np.exp(-0.5 * at * at) * np.expm1(-0.5 * bt * bt))
    work &= ~tiny
    if work.any():
        aw, bw = a[work], b[work]
        x = aw * bw
        direct = bw >= aw
        log_ratio = np.where(direct, np.log(aw) - np.log(bw), np.log(bw) - np.log(aw))
        series = _miller_weighted_sum(x, log_ratio, _marcum_terms(float(x.max())))
        # the complement series starts at k = 1
        envelope = np.exp(-0.5 * (aw - bw) ** 2)
        val_direct = envelope * series[0]
        val_comp = envelope * series[1]
        out[work] = np.where(direct, val_direct, 1.0 - val_comp)
    out = np.clip(out, 0.0, 1.0).reshape(shape)
    return _as_output(out, scalar)


# ---------------------------------------------------------------------------
# Adaptive quadrature
# ---------------------------------------------------------------------------

_INITIAL_PANELS = 8


def integrate_batch(f: Callable, a, b, spec: QuadratureSpec = DEFAULT_QUADRATURE,
                    initial_panels: int = _INITIAL_PANELS):
    """Integrate many functions at once with adaptive Simpson bisection.

    ``f(x, idx)`` receives a flat array of abscissae and, for each one, the
    index of the integral it belongs to; it must return values of the same
    shape.  ``a`` and ``b`` are arrays of matching shape with ``a <= b``.
    Intervals are refined breadth-first, so every integrand evaluation is a
    single vectorized call no matter how many integrals are in flight.

    Acceptance of a panel uses the usual ``|S2 - S1| / 15`` estimate against
    a width-proportional share of ``max(atol, rtol * |I|)``; an integral is
    also finished once its summed error estimates fall under that budget,
    which keeps integrable endpoint singularities cheap.  Each integral
    starts from ``initial_panels`` equal Simpson panels.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast(a, b).shape
    a = np.broadcast_to(a, shape).ravel()
    b = np.broadcast_to(b, shape).ravel()
    n_int = a.size
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise ValueError("integration limits must be finite")
    if np.any(a > b):
        raise ValueError("integrate requires a <= b")
    length = b - a
    result = np.zeros(n_int)
    if n_int == 0:
        return result.reshape(shape)

    owners = np.repeat(np.arange(n_int), initial_panels)
    edges = a[:, None] + length[:, None] * np.linspace(0.0, 1.0, initial_panels + 1)[None, :]
    lo = edges[:, :-1].ravel()
    hi = edges[:, 1:].ravel()
    mid = 0.5 * (lo + hi)
    fx = f(np.concatenate([lo, mid, hi]), np.concatenate([owners, owners, owners]))
    m = lo.size
    f_lo, f_mid, f_hi = fx[:m], fx[m:2 * m], fx[2 * m:]
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)

    live = length > 0
    keep = live[owners]
    owners, lo, mid, hi = owners[keep], lo[keep], mid[keep], hi[keep]
    f_lo, f_mid, f_hi, whole = f_lo[keep], f_mid[keep], f_hi[keep], whole[keep]

    accepted_sum = np.zeros(n_int)
    accepted_err = np.zeros(n_int)
    splits = np.zeros(n_int, dtype=np.int64)
    estimate = np.bincount(owners, weights=whole, minlength=n_int)
    width_floor = 64.0 * np.finfo(float).eps

    while owners.size:
        lq = 0.5 * (lo + mid)
        rq = 0.5 * (mid + hi)
        fq = f(np.concatenate([lq, rq]), np.concatenate([owners, owners]))
        k = owners.size
        f_lq, f_rq = fq[:k], fq[k:]
        half = 0.5 * (hi - lo)
        left = half / 6.0 * (f_lo + 4.0 * f_lq + f_mid)
        right = half / 6.0 * (f_mid + 4.0 * f_rq + f_hi)
        fine = left + right
        diff = fine - whole
        # conservative: the /15 Richardson factor assumes smoothness we may not have
        err = np.abs(diff)
        contrib = fine + diff / 15.0
        if not np.all(np.isfinite(contrib)):
            raise QuadratureError("integrand produced non-finite values")

        pending = accepted_sum + np.bincount(owners, weights=contrib, minlength=n_int)
        estimate = pending
        budget = np.maximum(spec.absolute_tolerance, spec.relative_tolerance * np.abs(estimate))
        total_err = accepted_err + np.bincount(owners, weights=err, minlength=n_int)
        globally_done = total_err <= budget

        share = budget[owners] * (hi - lo) / np.where(length[owners] > 0, length[owners], 1.0)
        tiny = (hi - lo) <= width_floor * np.maximum(1.0, np.abs(mid))
        accept = (err <= share) | tiny | globally_done[owners]

        np.add.at(accepted_sum, owners[accept], contrib[accept])
        np.add.at(accepted_err, owners[accept], err[accept])

        refine = ~accept
        if not refine.any():
            break
        splits += np.bincount(owners[refine], minlength=n_int)
        if np.any(splits > spec.max_subdivisions):
            bad = int(np.flatnonzero(splits > spec.max_subdivisions)[0])
            raise QuadratureError(
                f"integral {bad} did not converge within {spec.max_subdivisions} subdivisions",
                estimate=float(estimate[bad]),
            )
        o = owners[refine]
        owners = np.concatenate([o, o])
        lo_r, mid_r, hi_r = lo[refine], mid[refine], hi[refine]
        lo = np.concatenate([lo_r, mid_r])
        hi = np.concatenate([mid_r, hi_r])
        mid = np.concatenate([lq[refine], rq[refine]])
        f_lo = np.concatenate([f_lo[refine], f_mid[refine]])
        f_hi = np.concatenate([f_mid[refine], f_hi[refine]])
        f_mid = np.concatenate([f_lq[refine], f_rq[refine]])
        whole = np.concatenate([left[refine], right[refine]])

    result = accepted_sum
    return result.reshape(shape)


def integrate(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
              spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Adaptive Simpson estimate of ``int_a^b f(x) dx``.

    ``f`` must accept and return numpy arrays.  Raises ``QuadratureError``
    if ``spec.max_subdivisions`` is exhausted.
    """
    if not a <= b:
        raise ValueError("integrate requires a <= b")
    return float(integrate_batch(lambda x, _idx: f(x), np.array([a]), np.array([b]), spec)[0])


# ---------------------------------------------------------------------------
# Monotone inversion
# ---------------------------------------------------------------------------

def invert_monotone(f: Callable, target, lo, hi, *, fprime: Callable | None = None,
                    x0=None, rtol: float = 1e-12, max_iter: int = 200):
    """Solve ``f(x) = target`` for ``x`` in ``[lo, hi]`` with ``f`` monotone.

    Vectorized over ``target`` (and ``lo``/``hi``).  Uses a safeguarded
    Newton step when ``fprime`` is given and a secant step otherwise; any
    step leaving the current bracket falls back to bisection.  Stops when
    ``|f(x) - target| <= rtol * max(1, |target|)`` or the bracket collapses
    to floating-point resolution.  Raises ``BracketError`` if the target is
    not enclosed.  ``x0`` optionally seeds the iteration inside the bracket.
    """
    scalar = np.ndim(target) == 0 and np.ndim(lo) == 0 and np.ndim(hi) == 0
    target, lo, hi = np.broadcast_arrays(np.asarray(target, dtype=float),
                                         np.asarray(lo, dtype=float),
                                         np.asarray(hi, dtype=float))
    shape = target.shape
    t = target.ravel().copy()
    lo = lo.ravel().copy()
    hi = hi.ravel().copy()
    f_lo = np.asarray(f(lo), dtype=float) - t
    f_hi = np.asarray(f(hi), dtype=float) - t
    tol = rtol * np.maximum(1.0, np.abs(t))
    increasing = f_hi >= f_lo
    sign_lo = np.where(increasing, f_lo, -f_lo)
    sign_hi = np.where(increasing, f_hi, -f_hi)
    if np.any(sign_lo > tol) or np.any(sign_hi < -tol):
        raise BracketError("target is not enclosed by [lo, hi]")

    x = np.where(np.abs(f_lo) <= np.abs(f_hi), lo, hi)
    fx = np.where(np.abs(f_lo) <= np.abs(f_hi), f_lo, f_hi)
    if x0 is not None:
        start = np.broadcast_to(np.asarray(x0, dtype=float), shape).ravel()
        inside = (start > lo) & (start < hi)
        if inside.any():
            f0 = np.asarray(f(start[inside]), dtype=float) - t[inside]
            better = np.abs(f0) < np.abs(fx[inside])
            idx = np.flatnonzero(inside)[better]
            x[idx], fx[idx] = start[inside][better], f0[better]
    active = np.abs(fx) > tol
    # orient so that g(lo) <= 0 <= g(hi) with g increasing
    g_lo = sign_lo
    g_hi = sign_hi
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, la, ha = x[idx], lo[idx], hi[idx]
        gl, gh = g_lo[idx], g_hi[idx]
        inc = increasing[idx]
        gx = np.where(inc, fx[idx], -fx[idx])
        if fprime is not None:
            d = np.asarray(fprime(xa), dtype=float)
            d = np.where(inc, d, -d)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                cand = xa - gx / d
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = la - gl * (ha - la) / (gh - gl)
        bad = ~np.isfinite(cand) | (cand <= la) | (cand >= ha)
        cand = np.where(bad, 0.5 * (la + ha), cand)
        g_new = np.asarray(f(cand), dtype=float) - t[idx]
        f_new = g_new
        g_new = np.where(inc, g_new, -g_new)
        # tighten bracket
        below = g_new < 0
        la = np.where(below, cand, la)
        gl = np.where(below, g_new, gl)
        ha = np.where(below, ha, cand)
        gh = np.where(below, gh, g_new)
        # if a Newton/secant step made little progress, also bisect
        stalled = (~bad) & (np.abs(g_new) > 0.5 * np.abs(gx))
        if stalled.any():
            xb = 0.5 * (la + ha)
            gb = np.asarray(f(xb), dtype=float) - t[idx]
            gbi = np.where(inc, gb, -gb)
            use = stalled & (np.abs(gbi) < np.abs(g_new))
            cand = np.where(use, xb, cand)
            f_new = np.where(use, gb, f_new)
            below_b = stalled & (gbi < 0)
            above_b = stalled & ~(gbi < 0)
            la = np.where(below_b, np.maximum(la, xb), la)
            gl = np.where(below_b, gbi, gl)
            ha = np.where(above_b, np.minimum(ha, xb), ha)
            gh = np.where(above_b, gbi, gh)
        x[idx], fx[idx] = cand, f_new
        lo[idx], hi[idx] = la, ha
        g_lo[idx], g_hi[idx] = gl, gh
        width_done = (ha - la) <= 4.0 * np.finfo(float).eps * np.maximum(np.abs(cand), 1e-300)
        done = (np.abs(f_new) <= tol[idx]) | width_done
        active[idx[done]] = False
    return _as_output(x.reshape(shape), scalar)
