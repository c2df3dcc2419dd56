"""Grid certification of the Schur-concavity conditions.

Two sufficient conditions make the homogeneous threshold policy optimal
for a single-beam budget plane:

* the first-order condition ``U(q, lam) >= 0`` on every budget plane, where
  ``U`` is the derivative of the two-user plane rate (``check_theorem5``);
* the pointwise density condition ``f'(y) <= -f(y) / (1 + y)`` for
  ``y = F^{-1}(x)``, together with ``f`` bounded at zero (``check_theorem6``).

Both are evaluated on grids and refined around the worst point; verdicts
are grid-certified, not proofs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytic import rate_two_user_derivative
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec, lambert_w0, lambert_w0_from_log
from .sinr_models import Nakagami, Rician, SinrModel

__all__ = [
    "CERTIFICATION_TOLERANCE",
    "ConditionReport",
    "RegionCell",
    "u_function",
    "check_theorem5",
    "check_condition19",
    "check_theorem6",
    "capital_g",
    "little_g",
    "rayleigh_g_closed_form",
    "optimality_region_map",
    "default_lambda_grid",
]

CERTIFICATION_TOLERANCE = 1e-10
_REFINE = 10


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of a grid scan; ``min_margin`` is the most negative margin."""

    holds: bool
    min_margin: float
    argmin: tuple[float, ...]
    grid: dict = field(default_factory=dict)
    note: str = ""

    def __bool__(self) -> bool:
        return self.holds


def _verdict(min_margin: float, extra_ok: bool = True) -> bool:
    return bool(extra_ok and min_margin >= -CERTIFICATION_TOLERANCE)


def default_lambda_grid(points: int = 101) -> np.ndarray:
    """``points`` budgets spread over the open interval ``(0, 2)``."""
    return np.linspace(0.0, 2.0, points + 2)[1:-1]


def u_function(model: SinrModel, q, lam, spec: QuadratureSpec = DEFAULT_QUADRATURE):
    """``U(q, lam)``, the slope of the two-user plane rate in the smaller probability."""
    return rate_two_user_derivative(model, lam, q, spec)


# ---------------------------------------------------------------------------
# Plane scans
# ---------------------------------------------------------------------------

def _plane_points(lambda_grid, q_points: int):
    lam_list, q_list = [], []
    for lam in np.atleast_1d(lambda_grid):
        lo, hi = max(0.0, lam - 1.0), lam / 2.0
        qs = np.linspace(lo, hi, q_points)
        lam_list.append(np.full(qs.shape, lam))
        q_list.append(qs)
    return np.concatenate(lam_list), np.concatenate(q_list)


def _scan_plane(margin_fn, lambda_grid, q_points: int, refine: bool):
    lam, q = _plane_points(lambda_grid, q_points)
    margins = np.asarray(margin_fn(q, lam), dtype=float)
    i = int(np.argmin(margins))
    best = (float(margins[i]), float(q[i]), float(lam[i]))
    evaluated = margins.size
    if refine:
        lam_grid = np.atleast_1d(lambda_grid)
        d_lam = np.min(np.diff(lam_grid)) if lam_grid.size > 1 else 0.0
        lam0, q0 = best[2], best[1]
        lams = np.clip(lam0 + np.linspace(-d_lam, d_lam, 2 * _REFINE + 1), lam_grid.min(), lam_grid.max())
        lams = np.unique(lams)
        rl, rq = [], []
        for lv in lams:
            lo, hi = max(0.0, lv - 1.0), lv / 2.0
            dq = (hi - lo) / max(q_points - 1, 1)
            qs = np.clip(q0 + np.linspace(-dq, dq, 2 * _REFINE + 1), lo, hi)
            rl.append(np.full(qs.shape, lv))
            rq.append(qs)
        rl, rq = np.concatenate(rl), np.concatenate(rq)
        rm = np.asarray(margin_fn(rq, rl), dtype=float)
        evaluated += rm.size
        j = int(np.argmin(rm))
        if rm[j] < best[0]:
            best = (float(rm[j]), float(rq[j]), float(rl[j]))
    return best, evaluated


def check_theorem5(model: SinrModel, lambda_grid: Sequence[float] | None = None,
                   q_grid: int = 201, gamma_grid: Sequence[float] | None = None, *,
                   refine: bool = True, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> ConditionReport:
    """Scan ``log(1 + g)(lam - 2q) + U(q, lam) >= 0`` over budget planes.

    The first term is nonnegative, so the scan only needs the smallest
    floor value ``g`` (0 unless ``gamma_grid`` says otherwise); at ``g = 0``
    the condition reads ``U(q, lam) >= 0``.  ``q_grid`` is the number of
    points per plane.
    """
    lambda_grid = default_lambda_grid() if lambda_grid is None else np.atleast_1d(lambda_grid)
    g0 = 0.0 if gamma_grid is None else float(np.min(gamma_grid))
    if g0 < 0:
        raise ValueError("gamma values must be nonnegative")

    def margin(q, lam):
        return math.log1p(g0) * (lam - 2.0 * q) + u_function(model, q, lam, spec)

    (m, q, lam), count = _scan_plane(margin, lambda_grid, q_grid, refine)
    grid = {"lambda_points": int(np.size(lambda_grid)), "q_points": int(q_grid),
            "gamma_min": g0, "evaluations": count}
    return ConditionReport(_verdict(m), m, (q, lam), grid)


def _condition19_margin(model, q, lam):
    q = np.asarray(q, float)
    lam = np.asarray(lam, float)
    t_hi = model.quantile(1.0 - q)
    t_lo = model.quantile(np.clip(1.0 + q - lam, 0.0, 1.0))
    return (1.0 + q - lam) * np.log1p(t_hi) - (1.0 - q) * np.log1p(t_lo)


def check_condition19(model: SinrModel, lambda_grid: Sequence[float] | None = None,
                      q_grid: int = 201, *, refine: bool = True) -> ConditionReport:
    """Scan ``(1+q-lam) log(1+F^{-1}(1-q)) - (1-q) log(1+F^{-1}(1+q-lam)) >= 0``."""
    lambda_grid = default_lambda_grid() if lambda_grid is None else np.atleast_1d(lambda_grid)
    (m, q, lam), count = _scan_plane(lambda qq, ll: _condition19_margin(model, qq, ll),
                                     lambda_grid, q_grid, refine)
    grid = {"lambda_points": int(np.size(lambda_grid)), "q_points": int(q_grid), "evaluations": count}
    return ConditionReport(_verdict(m), m, (q, lam), grid)


# ---------------------------------------------------------------------------
# Density condition
# ---------------------------------------------------------------------------

def _density_margin(model, x):
    y = np.atleast_1d(model.quantile(np.asarray(x, float)))
    f = np.atleast_1d(model.pdf(y))
    df = np.atleast_1d(model.pdf_derivative(y))
    with np.errstate(invalid="ignore"):
        return -(df + f / (1.0 + y))


def default_x_grid(points: int = 201) -> np.ndarray:
    return np.linspace(0.0, 0.9999, points)


def check_theorem6(model: SinrModel, x_grid: Sequence[float] | None = None, *,
                   refine: bool = True) -> ConditionReport:
    """Scan ``-(f'(y) + f(y)/(1+y)) >= 0`` at ``y = F^{-1}(x)`` and require ``f(0) < inf``."""
    x = default_x_grid() if x_grid is None else np.asarray(x_grid, float)
    if np.any(x < 0) or np.any(x >= 1):
        raise ValueError("x_grid must lie in [0, 1)")
    bounded = model.pdf_bounded_at_zero
    margins = _density_margin(model, x)
    finite = np.isfinite(margins) | (margins == np.inf)
    # an infinite positive margin is a pass; -inf or nan is a fail
    margins = np.where(finite, margins, -np.inf)
    i = int(np.argmin(margins))
    m, arg = float(margins[i]), float(x[i])
    count = x.size
    if refine and x.size > 1:
        dx = float(np.min(np.diff(np.sort(x))))
        xr = np.clip(arg + np.linspace(-dx, dx, 2 * _REFINE + 1), x.min(), x.max())
        mr = _density_margin(model, xr)
        mr = np.where(np.isfinite(mr) | (mr == np.inf), mr, -np.inf)
        count += xr.size
        j = int(np.argmin(mr))
        if mr[j] < m:
            m, arg = float(mr[j]), float(xr[j])
    note = "" if bounded else "pdf unbounded at zero"
    return ConditionReport(_verdict(m, bounded), m, (arg,), {"x_points": int(x.size), "evaluations": count}, note)


def capital_g(model: SinrModel, x):
    """``G(x) = log(1+y)(1+y) f(y) - x`` with ``y = F^{-1}(x)``."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, float)
    y = model.quantile(x)
    with np.errstate(invalid="ignore"):
        val = np.log1p(y) * (1.0 + y) * model.pdf(y) - x
    val = np.where(np.asarray(y) == 0.0, -x, val)
    return float(val) if scalar else np.asarray(val)


def little_g(model: SinrModel, x):
    """``g(x) = 1 + (1+y) f'(y) / f(y)``; ``nan`` where ``f(y)`` underflows."""
    scalar = np.ndim(x) == 0
    y = np.asarray(model.quantile(np.asarray(x, float)))
    f = np.asarray(model.pdf(y))
    df = np.asarray(model.pdf_derivative(y))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(f > 0, 1.0 + (1.0 + y) * df / np.where(f > 0, f, 1.0), np.nan)
    return float(val) if scalar else val


def rayleigh_g_closed_form(M: int, rho: float, x):
    """``-((M-1)W^2 + (2M-3)W + (M-1)) / (W + 1)`` for Rayleigh fading, ``M >= 2``.

    ``W = W0(exp(1/c) / c * (1 - x)^(1/(1-M)))`` with ``c = (M - 1) rho``.
    """
    if M < 2:
        raise ValueError("closed form requires M >= 2")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, float))
    c = (M - 1) * rho
    log_z = 1.0 / c - math.log(c) - np.log1p(-x) / (M - 1)
    w = np.empty_like(log_z)
    small = log_z <= 700.0
    w[small] = lambert_w0(np.exp(log_z[small]))
    if (~small).any():
        w[~small] = lambert_w0_from_log(log_z[~small])
    val = -((M - 1) * w * w + (2 * M - 3) * w + (M - 1)) / (w + 1.0)
    return float(val[0]) if scalar else val


# ---------------------------------------------------------------------------
# Region maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionCell:
    param: float
    rho: float
    theorem5: bool
    theorem6: bool
    margin5: float
    margin6: float


def _family_model(family: str, param: float, rho: float) -> SinrModel:
    family = family.lower()
    if family == "nakagami":
        return Nakagami(mu=param, rho=rho)
    if family == "rician":
        return Rician(K=param, rho=rho)
    raise ValueError("region maps are defined for the nakagami and rician families")


def optimality_region_map(family: str, param_grid: Sequence[float], rho_grid: Sequence[float],
                          lam: float = 0.5, q_grid: int = 201, x_grid: Sequence[float] | None = None,
                          *, lambda_grid: Sequence[float] | None = None,
                          spec: QuadratureSpec = DEFAULT_QUADRATURE) -> list[RegionCell]:
    """Run both certifications on every ``(param, rho)`` cell.

    ``param`` is the Nakagami shape ``mu`` or the Rician K-factor.  The
    first-order condition is scanned on the plane ``lam`` (two users) unless
    an explicit ``lambda_grid`` is given.
    """
    lams = [lam] if lambda_grid is None else lambda_grid
    cells = []
    for param in param_grid:
        for rho in rho_grid:
            model = _family_model(family, float(param), float(rho))
            r5 = check_theorem5(model, lams, q_grid, spec=spec)
            r6 = check_theorem6(model, x_grid)
            cells.append(RegionCell(float(param), float(rho), r5.holds, r6.holds, r5.min_margin, r6.min_margin))
    return cells
