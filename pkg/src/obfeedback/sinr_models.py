"""Marginal SINR distributions and the per-user joint SINR sampler.

Three fading families are supported.  Rayleigh fading with ``M`` orthonormal
beams gives the per-beam SINR law

    F(x) = 1 - exp(-x / rho) / (1 + x)^(M - 1),

while Nakagami-m and Rician fading are single-beam (``M = 1``) models whose
SINR is Gamma and scaled noncentral chi-square distributed respectively.
Every model is an immutable dataclass exposing ``cdf``, ``pdf``,
``pdf_derivative``, ``quantile`` and a sampler; all accept numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .numerics import (
    bessel_i_scaled,
    invert_monotone,
    lambert_w0,
    lambert_w0_from_log,
    marcum_q1,
    regularized_lower_gamma,
)

__all__ = [
    "QUANTILE_CLAMP",
    "SystemConfig",
    "SinrModel",
    "Rayleigh",
    "Nakagami",
    "Rician",
    "parse_model",
    "db_to_linear",
    "sample_sinr_vector",
]

#: Quantile arguments at or above this level are clamped to it.
QUANTILE_CLAMP = 1.0 - 1e-12


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Cell dimensions: ``n`` users, ``M`` beams, SNR ``rho`` per beam.

    ``N_t`` only has to satisfy ``N_t >= M``; the SINR statistics do not
    depend on it.
    """

    n: int
    M: int
    rho: float
    N_t: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.N_t is not None and self.N_t < self.M:
            raise ValueError("N_t must be >= M")


def _check_nonneg(x):
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ValueError("SINR argument must be nonnegative")
    return arr, scalar


def _kernel(fn, arr, at_inf):
    """Apply a kernel on finite points; ``x = inf`` gets its limit value."""
    inf = np.isinf(arr)
    if not inf.any():
        return fn(arr)
    out = np.full(arr.shape, at_inf, dtype=float)
    if (~inf).any():
        out[~inf] = fn(arr[~inf])
    return out


def _out(values, scalar):
    values = np.asarray(values, dtype=float)
    return float(values.reshape(-1)[0]) if scalar else values


class SinrModel:
    """Interface shared by the fading families.

    Subclasses implement the vectorized kernels ``_cdf``, ``_pdf``,
    ``_dpdf`` and ``_sample``; ``quantile`` falls back to numerical
    inversion of the CDF.
    """

    M: int = 1
    rho: float = 1.0

    # public API ---------------------------------------------------------
    def cdf(self, x):
        arr, scalar = _check_nonneg(x)
        return _out(np.clip(_kernel(self._cdf, arr, 1.0), 0.0, 1.0), scalar)

    def sf(self, x):
        """Survival function ``1 - F(x)``."""
        arr, scalar = _check_nonneg(x)
        return _out(np.clip(_kernel(self._sf, arr, 0.0), 0.0, 1.0), scalar)

    def pdf(self, x):
        arr, scalar = _check_nonneg(x)
        return _out(_kernel(self._pdf, arr, 0.0), scalar)

    def pdf_derivative(self, x):
        arr, scalar = _check_nonneg(x)
        return _out(_kernel(self._dpdf, arr, 0.0), scalar)

    def quantile(self, u):
        """Inverse CDF; ``u`` above ``QUANTILE_CLAMP`` is clamped to it."""
        scalar = np.ndim(u) == 0
        arr = np.asarray(u, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("quantile requires 0 <= u <= 1")
        arr = np.minimum(arr, QUANTILE_CLAMP)
        return _out(self._quantile(arr), scalar)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent per-user SINR vectors, shape ``(size, M)``."""
        return self._sample(rng, int(size))

    @property
    def pdf_bounded_at_zero(self) -> bool:
        return bool(np.isfinite(self._pdf(np.zeros(1)))[0])

    def spec(self) -> str:
        raise NotImplementedError

    # kernels ------------------------------------------------------------
    def _sf(self, x):
        return 1.0 - self._cdf(x)

    def _quantile_bracket(self, u):
        hi = np.full_like(u, 4.0 * self.rho + 4.0)
        for _ in range(200):
            short = self._cdf(hi) < u
            if not short.any():
                break
            hi = np.where(short, 2.0 * hi, hi)
        return hi

    def _quantile_guess(self, u):
        return None

    def _quantile(self, u):
        flat = np.atleast_1d(u).ravel()
        out = np.zeros_like(flat)
        pos = flat > 0
        if pos.any():
            target = flat[pos]
            out[pos] = invert_monotone(self._cdf, target, np.zeros_like(target),
                                       self._quantile_bracket(target), fprime=self._pdf,
                                       x0=self._quantile_guess(target))
        return out.reshape(np.shape(u))

    def _sample(self, rng, size):
        raise NotImplementedError


@dataclass(frozen=True)
class Rayleigh(SinrModel):
    """Rayleigh fading with ``M`` random orthonormal beams."""

    M: int = 1
    rho: float = 1.0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("Rayleigh model needs an integer M >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def spec(self) -> str:
        return f"rayleigh M={self.M} rho={self.rho!r}"

    def _log_sf(self, x):
        if self.M == 1:
            return -x / self.rho
        return -x / self.rho - (self.M - 1) * np.log1p(x)

    def _cdf(self, x):
        return -np.expm1(self._log_sf(x))

    def _sf(self, x):
        return np.exp(self._log_sf(x))

    def _pdf(self, x):
        return np.exp(self._log_sf(x)) * (1.0 / self.rho + (self.M - 1) / (1.0 + x))

    def _dpdf(self, x):
        M, rho = self.M, self.rho
        s = np.exp(self._log_sf(x))
        a = 1.0 / rho + (M - 1) / (1.0 + x)
        return -s * a * a - s * (M - 1) / (1.0 + x) ** 2

    def _quantile(self, u):
        M, rho = self.M, self.rho
        log_tail = np.log1p(-u)
        if M == 1:
            return -rho * log_tail
        c = (M - 1) * rho
        log_z = 1.0 / c - math.log(c) - log_tail / (M - 1)
        log_z = np.atleast_1d(log_z)
        w = np.empty_like(log_z)
        small = log_z <= 700.0
        w[small] = lambert_w0(np.exp(log_z[small]))
        if (~small).any():
            w[~small] = lambert_w0_from_log(log_z[~small])
        x = np.maximum(-1.0 + c * w, 0.0)
        # one Newton polish on F removes the cancellation in -1 + c*W near u = 0
        x = x - (self._cdf(x) - np.atleast_1d(u)) / self._pdf(x)
        return np.maximum(x, 0.0).reshape(np.shape(u))

    def _sample(self, rng, size):
        e = rng.standard_exponential((size, self.M))
        total = e.sum(axis=1, keepdims=True)
        return e / (1.0 / self.rho + (total - e))


@dataclass(frozen=True)
class Nakagami(SinrModel):
    """Nakagami-m fading (single beam): SINR ~ Gamma(mu, rho / mu)."""

    mu: float = 1.0
    rho: float = 1.0
    M: int = 1

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("Nakagami shape mu must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.M != 1:
            raise ValueError("Nakagami model is defined for M = 1 only")

    def spec(self) -> str:
        return f"nakagami mu={self.mu!r} rho={self.rho!r}"

    @property
    def _log_c(self):
        return self.mu * math.log(self.mu / self.rho) - math.lgamma(self.mu)

    def _cdf(self, x):
        return regularized_lower_gamma(self.mu, self.mu * np.asarray(x) / self.rho)

    def _pdf(self, x):
        mu, rate = self.mu, self.mu / self.rho
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(self._log_c + (mu - 1.0) * np.log(x) - rate * x)
        at0 = x == 0
        if at0.any():
            val = np.where(at0, math.exp(self._log_c) if mu == 1 else (np.inf if mu < 1 else 0.0), val)
        return val

    def _dpdf(self, x):
        mu, rate = self.mu, self.mu / self.rho
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.exp(self._log_c + (mu - 2.0) * np.log(x) - rate * x)
            val = base * ((mu - 1.0) - rate * x)
        at0 = x == 0
        if at0.any():
            c = math.exp(self._log_c)
            if mu == 1:
                v0 = -c * rate
            elif mu == 2:
                v0 = c
            elif mu < 1:
                v0 = -np.inf
            elif mu < 2:
                v0 = np.inf
            else:
                v0 = 0.0
            val = np.where(at0, v0, val)
        return val

    def _sample(self, rng, size):
        return self.rho * rng.gamma(self.mu, 1.0 / self.mu, (size, 1))


def _bessel01_scaled(z):
    vals = bessel_i_scaled(2, z)
    return vals[0], vals[1]


@dataclass(frozen=True)
class Rician(SinrModel):
    """Rician fading (single beam) with K-factor ``K`` and unit total power."""

    K: float = 0.0
    rho: float = 1.0
    M: int = 1

    def __post_init__(self):
        if not self.K >= 0:
            raise ValueError("Rician K-factor must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.M != 1:
            raise ValueError("Rician model is defined for M = 1 only")

    def spec(self) -> str:
        return f"rician K={self.K!r} rho={self.rho!r}"

    @property
    def _beta(self):
        return 2.0 * math.sqrt(self.K * (1.0 + self.K) / self.rho)

    def _marcum_args(self, x):
        a = math.sqrt(2.0 * self.K)
        b = np.sqrt(2.0 * np.asarray(x) * (1.0 + self.K) / self.rho)
        return a, b

    def _cdf(self, x):
        a, b = self._marcum_args(x)
        return 1.0 - marcum_q1(a, b)

    def _sf(self, x):
        a, b = self._marcum_args(x)
        return marcum_q1(a, b)

    def _pdf(self, x):
        K, rho = self.K, self.rho
        x = np.asarray(x, dtype=float)
        z = self._beta * np.sqrt(x)
        i0e, _ = _bessel01_scaled(z)
        return (1.0 + K) / rho * np.exp(-K - (1.0 + K) * x / rho + z) * i0e

    def _dpdf(self, x):
        K, rho = self.K, self.rho
        x = np.asarray(x, dtype=float)
        beta = self._beta
        z = beta * np.sqrt(x)
        i0e, i1e = _bessel01_scaled(z)
        # I1(z) / z, continuous at z = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            i1_over_z = np.where(z > 1e-4, i1e / np.where(z > 0, z, 1.0), 0.0)
        small = z <= 1e-4
        i1_over_z = np.where(small, (0.5 + z * z / 16.0) * np.exp(-z), i1_over_z)
        envelope = (1.0 + K) / rho * np.exp(-K - (1.0 + K) * x / rho + z)
        return envelope * (0.5 * beta * beta * i1_over_z - (1.0 + K) / rho * i0e)

    def _quantile_bracket(self, u):
        # |h - mean| > 10 sigma has probability exp(-50), far below the clamp
        los = math.sqrt(self.K / (1.0 + self.K))
        sigma = math.sqrt(0.5 / (1.0 + self.K))
        return np.full_like(u, self.rho * (los + 10.0 * sigma) ** 2)

    def _quantile_guess(self, u):
        # Gamma law with matching first two moments
        mu = (1.0 + self.K) ** 2 / (1.0 + 2.0 * self.K)
        return Nakagami(mu, self.rho).quantile(u)

    def _sample(self, rng, size):
        K = self.K
        los = math.sqrt(K / (1.0 + K))
        sigma = math.sqrt(0.5 / (1.0 + K))
        z = rng.standard_normal((size, 2))
        power = (los + sigma * z[:, 0]) ** 2 + (sigma * z[:, 1]) ** 2
        return self.rho * power[:, None]


def sample_sinr_vector(model: SinrModel, stream: np.random.Generator) -> np.ndarray:
    """One joint draw ``(gamma_1, ..., gamma_M)`` for a single user."""
    return model.sample(stream, 1)[0]


# ---------------------------------------------------------------------------
# Specification grammar
# ---------------------------------------------------------------------------

_FAMILIES = {"rayleigh": Rayleigh, "nakagami": Nakagami, "rician": Rician}
_PARAMS = {"rayleigh": {"M"}, "nakagami": {"mu", "M"}, "rician": {"K", "M"}}


def parse_model(text: str) -> SinrModel:
    """Parse ``"<family> key=value ..."``.

    Examples: ``rayleigh M=2 rho_db=10``, ``nakagami mu=2 rho=1``,
    ``rician K=10 rho_db=5``.  Exactly one of ``rho`` / ``rho_db`` is
    required.
    """
    tokens = text.split()
    if not tokens:
        raise ValueError("empty model specification")
    family = tokens[0].lower()
    if family not in _FAMILIES:
        raise ValueError(f"unknown fading family {tokens[0]!r}")
    params: dict[str, str] = {}
    for tok in tokens[1:]:
        m = re.fullmatch(r"([A-Za-z_]+)=(\S+)", tok)
        if not m:
            raise ValueError(f"malformed model parameter {tok!r}")
        if m.group(1) in params:
            raise ValueError(f"duplicate model parameter {m.group(1)!r}")
        params[m.group(1)] = m.group(2)

    has_lin, has_db = "rho" in params, "rho_db" in params
    if has_lin == has_db:
        raise ValueError("exactly one of rho or rho_db must be given")
    try:
        rho = float(params.pop("rho")) if has_lin else db_to_linear(float(params.pop("rho_db")))
        kwargs: dict[str, float] = {"rho": rho}
        for key, val in params.items():
            if key not in _PARAMS[family]:
                raise ValueError(f"parameter {key!r} not valid for {family}")
            num = float(val)
            if key == "M":
                if num != int(num):
                    raise ValueError("M must be an integer")
                num = int(num)
            kwargs[key] = num
    except ValueError as exc:
        raise ValueError(f"bad model specification {text!r}: {exc}") from None
    if family == "nakagami" and "mu" not in kwargs:
        raise ValueError("nakagami needs mu=")
    if family == "rician" and "K" not in kwargs:
        raise ValueError("rician needs K=")
    return _FAMILIES[family](**kwargs)
