"""Optimal threshold selection and the derived figure data.

Heterogeneous optimization is exhaustive and only offered for two users:
the rate is scanned along a budget plane ``p1 + p2 = lam`` and the best
grid cell is refined by golden-section search.  For larger systems only the
homogeneous policy (optimal whenever the plane rate is Schur-concave) is
available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .analytic import plane_bounds, plane_rate_sweep, rate_homogeneous
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec
from .schur import ConditionReport, check_theorem5
from .sinr_models import Rayleigh, Rician, SinrModel, db_to_linear

__all__ = [
    "OptResult",
    "GapPoint",
    "TradeoffPoint",
    "RatioPoint",
    "NotCertifiedError",
    "optimal_two_user",
    "optimality_gap_curve",
    "crossover_rho_db",
    "p2_star_vs_rho",
    "tradeoff_curve",
    "ratio_homo_vs_opt",
    "limiting_ratio",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(fun, a: float, b: float, tol: float):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


class NotCertifiedError(ValueError):
    """Raised when the homogeneous policy cannot be shown to be optimal."""

    def __init__(self, message: str, report: ConditionReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class OptResult:
    """Two-user optimum on a budget plane; ``p_star = (p1, p2)`` with ``p1 >= p2``."""

    p_star: tuple[float, float]
    rate_star: float
    rate_homogeneous: float
    gap: float
    ratio: float


def _tie_tolerance(rate: float, spec: QuadratureSpec) -> float:
    return 10.0 * max(spec.absolute_tolerance, spec.relative_tolerance * abs(rate))


def optimal_two_user(model: SinrModel, lam: float, resolution: int = 2001, *,
                     xtol: float = 1e-6, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> OptResult:
    """Exhaustive search for the best ``(lam - p2, p2)`` split.

    ``resolution`` grid points on ``[max(0, lam - 1), lam / 2]`` are followed by
    golden-section refinement to ``xtol`` inside the best cell.  An optimum
    within quadrature noise of the homogeneous rate counts as a tie and is
    resolved toward the homogeneous point ``lam / 2``.
    """
    lam = float(lam)
    if not 0.0 <= lam <= 2.0:
        raise ValueError("two-user budget must lie in [0, 2]")
    if lam == 0.0:
        return OptResult((0.0, 0.0), 0.0, 0.0, 0.0, 1.0)
    lo, hi = plane_bounds(lam)
    grid = np.linspace(lo, hi, max(int(resolution), 2))
    rates, evaluate = plane_rate_sweep(model, lam, grid, spec)
    homo = float(rates[-1])
    best = float(rates.max())
    tol = _tie_tolerance(best, spec)
    i = int(np.argmax(rates))
    p2, r = float(grid[i]), float(rates[i])
    a = float(grid[max(i - 1, 0)])
    b = float(grid[min(i + 1, grid.size - 1)])
    if b - a > xtol:
        pg, rg = _golden_max(evaluate, a, b, xtol)
        if rg >= r:
            p2, r = pg, rg
    if r <= homo + tol:
        p2, r = hi, homo
    rate_star = max(r, homo)
    ratio = homo / rate_star if rate_star > 0 else 1.0
    return OptResult((lam - p2, p2), rate_star, homo, rate_star - homo, ratio)


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GapPoint:
    rho_db: float
    rho: float
    p2_star: float
    rate_star: float
    rate_homogeneous: float
    gap: float
    ratio: float


def optimality_gap_curve(rho_grid_db: Iterable[float], lam: float = 0.5, M: int = 1,
                         resolution: int = 2001, *,
                         spec: QuadratureSpec = DEFAULT_QUADRATURE) -> list[GapPoint]:
    """Gap ``R(tau*) - R(tau_homo)`` of a two-user Rayleigh system per SNR (in dB)."""
    out = []
    for rho_db in rho_grid_db:
        rho = db_to_linear(float(rho_db))
        res = optimal_two_user(Rayleigh(M, rho), lam, resolution, spec=spec)
        out.append(GapPoint(float(rho_db), rho, res.p_star[1], res.rate_star, res.rate_homogeneous,
                            res.gap, res.ratio))
    return out


def crossover_rho_db(curve: Sequence[GapPoint], threshold: float = 1e-4) -> float | None:
    """Smallest SNR on the curve whose gap exceeds ``threshold``."""
    for pt in curve:
        if pt.gap > threshold:
            return pt.rho_db
    return None


def p2_star_vs_rho(rho_grid: Iterable[float], lam: float = 0.5, M: int = 1,
                   resolution: int = 2001, *, db: bool = False,
                   spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Optimal smaller probability ``p2*`` per SNR; SNR linear unless ``db``."""
    vals = []
    for rho in rho_grid:
        lin = db_to_linear(rho) if db else float(rho)
        vals.append(optimal_two_user(Rayleigh(M, lin), lam, resolution, spec=spec).p_star[1])
    return np.array(vals)


@dataclass(frozen=True)
class TradeoffPoint:
    n: int
    lam: float
    rate_threshold: float
    rate_all: float
    ratio: float


def tradeoff_curve(model: SinrModel, n_list: Iterable[int], lambda_grid: Iterable[float], *,
                   certify: bool = True,
                   spec: QuadratureSpec = DEFAULT_QUADRATURE) -> list[TradeoffPoint]:
    """Ratio ``R(tau*) / R(0)`` of the optimal homogeneous policy to full feedback.

    Refuses with ``NotCertifiedError`` when the first-order Schur condition
    does not certify the homogeneous optimum for ``model``; the optimal
    thresholds are unknown in that case.
    """
    if certify:
        report = check_theorem5(model, spec=spec)
        if not report.holds:
            raise NotCertifiedError(
                f"{model.spec()}: plane rate not certified Schur-concave "
                f"(margin {report.min_margin:.3g} at q={report.argmin[0]:.4g}, "
                f"lambda={report.argmin[1]:.4g}); optimal thresholds unknown",
                report,
            )
    out = []
    for n in n_list:
        n = int(n)
        lams = np.array([float(l) for l in lambda_grid if 0.0 < l <= n])
        if lams.size == 0:
            continue
        tau = np.atleast_1d(model.quantile(1.0 - lams / n))
        r_tau = np.atleast_1d(rate_homogeneous(model, n, tau, spec))
        r_all = float(rate_homogeneous(model, n, 0.0, spec))
        for lam, t, r in zip(lams, tau, r_tau):
            r = r_all if t == 0.0 else float(r)
            out.append(TradeoffPoint(n, float(lam), r, r_all, r / r_all))
    return out


@dataclass(frozen=True)
class RatioPoint:
    K: float
    rho: float
    p2_star: float
    ratio: float


def ratio_homo_vs_opt(K_grid: Iterable[float], rho_grid: Iterable[float], lam: float = 1.0,
                      resolution: int = 2001, *,
                      spec: QuadratureSpec = DEFAULT_QUADRATURE) -> list[RatioPoint]:
    """``R(tau_homo) / R(tau*)`` for two Rician users on every ``(K, rho)`` pair."""
    out = []
    for K in K_grid:
        for rho in rho_grid:
            res = optimal_two_user(Rician(float(K), float(rho)), lam, resolution, spec=spec)
            out.append(RatioPoint(float(K), float(rho), res.p_star[1], res.ratio))
    return out


def limiting_ratio(lam: float) -> float:
    """High-SNR limit of the homogeneous-to-optimal ratio for two users."""
    lam = float(lam)
    if not 0.0 <= lam <= 2.0:
        raise ValueError("budget must lie in [0, 2]")
    return 1.0 - lam / 4.0 if lam <= 1.0 else lam - lam * lam / 4.0
