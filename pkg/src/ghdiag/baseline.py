"""Baseline hazard families.

Every family is parameterised so that its ``gamma`` shape parameter equal to
one collapses it to the Weibull distribution ``H0(t) = (t/sigma)**nu``:

========== =========================================================
Weibull    ``H0 = (t/sigma)**nu``
PGW        ``H0 = (1 + (t/sigma)**nu)**(1/gamma) - 1``
EW         ``F0 = (1 - exp(-(t/sigma)**nu))**gamma``
GG         ``F0 = P(gamma, (t/sigma)**nu)`` (regularised lower gamma)
LogNormal  ``F0 = Phi((log t - mu) / s)``
========== =========================================================

Internally each family is a kernel returning ``(log h0, H0)`` on a positive
time grid; everything else (density, cdf, inverse) is derived from it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import gammainc, gammaincc, gammaln, log_ndtr

__all__ = [
    "Family",
    "BaselineSpec",
    "ParameterDomainError",
    "InversionError",
    "IntegrationError",
    "hazard0",
    "log_hazard0",
    "cum_hazard0",
    "inv_cum_hazard0",
    "density0",
    "log_density0",
    "cdf0",
    "quantile0",
    "integrate_halfline",
]

_LOG_2PI = math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class ParameterDomainError(ValueError):
    """Raised when a parameter vector lies outside the family's domain."""


class InversionError(ArithmeticError):
    """Raised when the numeric inverse of a cumulative hazard fails."""


class IntegrationError(ArithmeticError):
    """Raised when adaptive quadrature does not reach its tolerance."""


class Family(str, enum.Enum):
    WEIBULL = "weibull"
    PGW = "pgw"
    EW = "ew"
    GG = "gg"
    LOGNORMAL = "lognormal"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"w": "weibull", "ln": "lognormal", "lnorm": "lognormal"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown baseline family {value!r}") from None

    @property
    def arity(self) -> int:
        return len(self.param_names)

    @property
    def param_names(self) -> tuple[str, ...]:
        if self is Family.WEIBULL:
            return ("sigma", "nu")
        if self is Family.LOGNORMAL:
            return ("mu", "s")
        return ("sigma", "nu", "gamma")

    @property
    def positive_mask(self) -> tuple[bool, ...]:
        """Which parameters are constrained to be strictly positive."""
        if self is Family.LOGNORMAL:
            return (False, True)
        return (True,) * self.arity

    @property
    def label(self) -> str:
        return {"weibull": "W", "pgw": "PGW", "ew": "EW", "gg": "GG", "lognormal": "LN"}[self.value]


# ---------------------------------------------------------------------------
# kernels: (xi, t > 0) -> (log h0(t), H0(t))
# ---------------------------------------------------------------------------


def _log1mexp(z):
    """log(1 - exp(-z)) for z > 0, accurate at both ends."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(z < _LOG2, np.log(-np.expm1(-z)), np.log1p(-np.exp(-np.maximum(z, _LOG2))))


def _weibull_kernel(xi, t):
    sigma, nu = xi
    lr = np.log(t / sigma)
    log_h = math.log(nu / sigma) + (nu - 1.0) * lr
    with np.errstate(over="ignore"):
        H = np.exp(nu * lr)
    return log_h, H


def _pgw_kernel(xi, t):
    sigma, nu, gamma = xi
    lr = np.log(t / sigma)
    l1z = np.logaddexp(0.0, nu * lr)  # log(1 + z), overflow-free
    log_h = math.log(nu / (gamma * sigma)) + (nu - 1.0) * lr
    if gamma != 1.0:
        log_h = log_h + (1.0 / gamma - 1.0) * l1z
    with np.errstate(over="ignore"):
        H = np.expm1(l1z / gamma)
    return log_h, H


def _ew_kernel(xi, t):
    sigma, nu, gamma = xi
    lr = np.log(t / sigma)
    lz = nu * lr
    with np.errstate(over="ignore"):
        z = np.exp(lz)
    # log(1 - e^{-z}); series form once z underflows relative to 1
    L = np.where(lz < -20.0, lz - 0.5 * z, _log1mexp(np.maximum(z, 1e-300)))
    log_fz = math.log(gamma * nu / sigma) + (nu - 1.0) * lr + (gamma - 1.0) * L  # log f0 + z
    log_F = gamma * L
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        small_F = np.log1p(-np.exp(np.minimum(log_F, -_LOG2)))
        mid = np.log(-np.expm1(np.minimum(log_F, -1e-300)))
        tail_z = math.log(gamma) + np.log1p(0.5 * (1.0 - gamma) * np.exp(-z))  # log S0 + z
    is_tail = (log_F >= -_LOG2) & (z > 30.0)
    log_S = np.where(log_F < -_LOG2, small_F, np.where(is_tail, tail_z - z, mid))
    # in the tail the -z terms of log f0 and log S0 cancel exactly
    log_h = np.where(is_tail, log_fz - tail_z, log_fz - z - log_S)
    return log_h, -log_S


def _log_upper_gamma_qz(a, z):
    """``log Q(a, z) + z`` without underflow or cancellation for large z."""
    z = np.asarray(z, dtype=float)
    P = gammainc(a, z)
    Q = gammaincc(a, z)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(P < 0.5, np.log1p(-P), np.log(np.maximum(Q, 1e-300))) + z
    deep = (P >= 0.5) & (Q < 1e-290)
    if np.any(deep):
        zd = z[deep] if z.ndim else z
        # asymptotic series: Q ~ z^{a-1} e^{-z} / Gamma(a) * sum_k (a-1)...(a-k) / z^k
        term = np.ones_like(zd)
        total = np.ones_like(zd)
        for k in range(1, 16):
            term = term * (a - k) / zd
            total = total + term
        val = (a - 1.0) * np.log(zd) - gammaln(a) + np.log(total)
        if z.ndim:
            out = out.copy()
            out[deep] = val
        else:
            out = val
    return out


def _gg_kernel(xi, t):
    sigma, nu, gamma = xi
    lr = np.log(t / sigma)
    with np.errstate(over="ignore"):
        z = np.exp(nu * lr)
    qz = _log_upper_gamma_qz(gamma, z)
    # log f0 = log_fz - z and log S0 = qz - z
    log_fz = math.log(nu / sigma) - gammaln(gamma) + (nu * gamma - 1.0) * lr
    return log_fz - qz, z - qz


def _lognormal_kernel(xi, t):
    mu, s = xi
    lt = np.log(t)
    w = (lt - mu) / s
    log_f = -lt - math.log(s) - 0.5 * _LOG_2PI - 0.5 * w * w
    log_S = log_ndtr(-w)
    return log_f - log_S, -log_S


_KERNELS: dict[Family, Callable] = {
    Family.WEIBULL: _weibull_kernel,
    Family.PGW: _pgw_kernel,
    Family.EW: _ew_kernel,
    Family.GG: _gg_kernel,
    Family.LOGNORMAL: _lognormal_kernel,
}


# ---------------------------------------------------------------------------
# spec object
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineSpec:
    """A baseline family together with its parameter vector ``xi``."""

    family: Family
    xi: tuple[float, ...]

    def __post_init__(self):
        family = Family.parse(self.family)
        object.__setattr__(self, "family", family)
        xi = tuple(float(v) for v in np.atleast_1d(np.asarray(self.xi, dtype=float)))
        object.__setattr__(self, "xi", xi)
        if len(xi) != family.arity:
            raise ParameterDomainError(
                f"{family.value} takes {family.arity} parameters {family.param_names}, got {len(xi)}"
            )
        for name, value, positive in zip(family.param_names, xi, family.positive_mask):
            if not math.isfinite(value):
                raise ParameterDomainError(f"{family.value}: {name}={value} is not finite")
            if positive and value <= 0.0:
                raise ParameterDomainError(f"{family.value}: {name} must be > 0, got {value}")

    @classmethod
    def of(cls, family: Family | str, *xi: float) -> "BaselineSpec":
        return cls(Family.parse(family), tuple(xi))

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.family.param_names, self.xi))

    @property
    def scale(self) -> float:
        """A characteristic time scale (sigma, or the median for LogNormal)."""
        if self.family is Family.LOGNORMAL:
            return math.exp(self.xi[0])
        return self.xi[0]

    def is_weibull_nested(self) -> bool:
        return self.family is Family.WEIBULL or (
            self.family in (Family.PGW, Family.EW, Family.GG) and self.xi[2] == 1.0
        )

    def kernel(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(log h0(t), H0(t))`` for strictly positive ``t``."""
        return _KERNELS[self.family](self.xi, t)

    def hazard(self, t):
        return hazard0(self, t)

    def cum_hazard(self, t):
        return cum_hazard0(self, t)

    def inv_cum_hazard(self, y):
        return inv_cum_hazard0(self, y)

    def density(self, t):
        return density0(self, t)

    def cdf(self, t):
        return cdf0(self, t)

    def quantile(self, p):
        return quantile0(self, p)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "xi": list(self.xi), "names": list(self.family.param_names)}


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _as_time(t, allow_zero: bool = True) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)):
        raise ValueError("time contains NaN")
    if np.any(arr < 0.0) or (not allow_zero and np.any(arr == 0.0)):
        raise ValueError("times must be non-negative" if allow_zero else "times must be positive")
    return arr, arr.ndim == 0


def _finish(out: np.ndarray, scalar: bool):
    return float(out) if scalar else out


def _log_hazard_at_zero(spec: BaselineSpec) -> float:
    """Limit of log h0(t) as t -> 0+."""
    fam, xi = spec.family, spec.xi
    if fam is Family.LOGNORMAL:
        return -math.inf
    if fam is Family.WEIBULL:
        power, log_c = xi[1] - 1.0, math.log(xi[1] / xi[0])
    elif fam is Family.PGW:
        power, log_c = xi[1] - 1.0, math.log(xi[1] / (xi[2] * xi[0]))
    elif fam is Family.EW:
        power, log_c = xi[1] * xi[2] - 1.0, math.log(xi[1] * xi[2] / xi[0])
    else:
        power, log_c = xi[1] * xi[2] - 1.0, math.log(xi[1] / xi[0]) - gammaln(xi[2])
    if power < 0.0:
        return math.inf
    if power > 0.0:
        return -math.inf
    return log_c


def _evaluate(spec: BaselineSpec, t: np.ndarray):
    """(log h0, H0) with the t = 0 limit filled in."""
    t1 = np.atleast_1d(t)
    pos = t1 > 0.0
    log_h = np.empty_like(t1)
    H = np.zeros_like(t1)
    if np.any(pos):
        with np.errstate(divide="ignore", invalid="ignore"):
            lh, HH = spec.kernel(t1[pos])
        log_h[pos] = lh
        H[pos] = HH
    if not np.all(pos):
        log_h[~pos] = _log_hazard_at_zero(spec)
    return log_h.reshape(np.shape(t)), H.reshape(np.shape(t))


def log_hazard0(spec: BaselineSpec, t):
    arr, scalar = _as_time(t)
    return _finish(_evaluate(spec, arr)[0], scalar)


def hazard0(spec: BaselineSpec, t):
    """Baseline hazard ``h0(t)``; ``inf`` at ``t = 0`` when the hazard diverges there."""
    arr, scalar = _as_time(t)
    with np.errstate(over="ignore"):
        return _finish(np.exp(_evaluate(spec, arr)[0]), scalar)


def cum_hazard0(spec: BaselineSpec, t):
    """Baseline cumulative hazard ``H0(t)``; saturates to ``inf`` on overflow."""
    arr, scalar = _as_time(t)
    return _finish(_evaluate(spec, arr)[1], scalar)


def log_density0(spec: BaselineSpec, t):
    arr, scalar = _as_time(t)
    log_h, H = _evaluate(spec, arr)
    return _finish(log_h - H, scalar)


def density0(spec: BaselineSpec, t):
    arr, scalar = _as_time(t)
    log_h, H = _evaluate(spec, arr)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(log_h - H)
    out = np.where(np.isinf(H), 0.0, out)
    return _finish(out, scalar)


def cdf0(spec: BaselineSpec, t):
    arr, scalar = _as_time(t)
    return _finish(-np.expm1(-_evaluate(spec, arr)[1]), scalar)


def quantile0(spec: BaselineSpec, p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p >= 1.0)):
        raise ValueError("probabilities must lie in [0, 1)")
    return inv_cum_hazard0(spec, -np.log1p(-p))


def inv_cum_hazard0(spec: BaselineSpec, y):
    """Inverse of ``H0``: the time ``t`` with ``H0(t) = y``."""
    arr = np.asarray(y, dtype=float)
    scalar = arr.ndim == 0
    if np.any(np.isnan(arr)) or np.any(arr < 0.0):
        raise ValueError("cumulative hazard values must be non-negative")
    y1 = np.atleast_1d(arr)
    out = np.zeros_like(y1)
    out[np.isinf(y1)] = np.inf
    live = (y1 > 0.0) & np.isfinite(y1)
    if np.any(live):
        out[live] = _inverse_live(spec, y1[live])
    return _finish(out.reshape(arr.shape), scalar)


def _inverse_live(spec: BaselineSpec, y: np.ndarray) -> np.ndarray:
    fam, xi = spec.family, spec.xi
    with np.errstate(over="ignore"):
        if fam is Family.WEIBULL:
            sigma, nu = xi
            return sigma * np.exp(np.log(y) / nu)
        if fam is Family.PGW:
            sigma, nu, gamma = xi
            return sigma * np.exp(np.log(np.expm1(gamma * np.log1p(y))) / nu)
        if fam is Family.EW:
            sigma, nu, gamma = xi
            log_F = np.where(y < _LOG2, np.log(-np.expm1(-y)), np.log1p(-np.exp(-y)))
            a = log_F / gamma
            inner = np.where(
                a < -_LOG2, -np.log1p(-np.exp(np.minimum(a, -_LOG2))), -np.log(-np.expm1(np.maximum(a, -_LOG2)))
            )
            return sigma * np.exp(np.log(inner) / nu)
    return _invert_monotone(spec, y)


def _invert_monotone(spec: BaselineSpec, y: np.ndarray, max_expand: int = 2200) -> np.ndarray:
    """Bracket by doubling/halving, bisect in log-time, then polish with Newton."""
    t0 = spec.scale
    lo = np.full_like(y, t0)
    hi = np.full_like(y, t0)

    def H(t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return spec.kernel(t)[1]

    for _ in range(max_expand):
        need = H(hi) < y
        if not need.any():
            break
        hi[need] *= 2.0
    for _ in range(max_expand):
        need = H(lo) > y
        if not need.any():
            break
        lo[need] *= 0.5
    H_lo, H_hi = H(lo), H(hi)
    bad = ~((H_lo <= y) & (H_hi >= y))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise InversionError(
            f"{spec.family.value}{spec.xi}: could not bracket H0(t) = {y[i]!r}; "
            f"bracket [{lo[i]!r}, {hi[i]!r}] gives H0 in [{H_lo[i]!r}, {H_hi[i]!r}]"
        )
    for _ in range(200):
        if np.all(hi <= lo * (1.0 + 1e-12)):
            break
        mid = np.sqrt(lo * hi)
        below = H(mid) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    t = np.sqrt(lo * hi)
    for _ in range(5):
        log_h, Ht = spec.kernel(t)
        resid = Ht - y
        if np.all(np.abs(resid) <= 1e-14 * y):
            break
        step = resid / np.exp(log_h)
        t_new = t - step
        t = np.where(np.isfinite(t_new) & (t_new > 0.0), t_new, t)
    if not np.all(np.isfinite(t)):
        raise InversionError(f"{spec.family.value}{spec.xi}: non-finite inverse")
    return t


def integrate_halfline(
    func: Callable[[float], float],
    scale: float = 1.0,
    epsabs: float = 1e-8,
    epsrel: float = 1e-8,
    limit: int = 200,
) -> float:
    """Integrate ``func`` over (0, inf) via ``t = scale * u / (1 - u)``."""

    def integrand(u: float) -> float:
        if u <= 0.0 or u >= 1.0:
            return 0.0
        one_minus = 1.0 - u
        return func(scale * u / one_minus) * scale / (one_minus * one_minus)

    value, abserr, info = integrate.quad(integrand, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel, limit=limit, full_output=1)[:3]
    if abserr > max(epsabs, epsrel * abs(value)) * 10:
        raise IntegrationError(
            f"quadrature over (0, inf) did not converge: value={value!r}, abserr={abserr!r}, "
            f"intervals={info.get('last')}"
        )
    return value
