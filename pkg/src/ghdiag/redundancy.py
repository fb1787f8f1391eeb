"""Near-redundancy diagnostics.

A fitted GH model is near-redundant when its baseline distribution is hard to
tell apart from the Weibull family, where the GH structure loses
identifiability. Three screens are provided:

* the minimum Kullback-Leibler divergence to the Weibull family, compared with
  ``M k^e log(n_e) / (2 n_e)``;
* the minimum Hellinger distance, compared with the Le Cam bound
  ``sqrt(1 - (4 kappa - 4 kappa^2) ** (1 / (2 n_e)))``;
* the Hessian method: the smallest eigenvalue modulus of the Hessian at the MLE,
  divided by the largest, falling below ``0.001``.

``n_e = n - rho * censored`` is the effective sample size.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Iterable

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .baseline import BaselineSpec, Family, IntegrationError
from .estimation import FitResult, NonConvergenceError, OptimizerConfig, fit_mle
from .model import SurvivalDataset

__all__ = [
    "Divergence",
    "DistanceResult",
    "RedundancyReport",
    "BootstrapResult",
    "DEFAULTS",
    "divergence",
    "min_distance_to_weibull",
    "effective_sample_size",
    "kl_threshold",
    "hellinger_threshold",
    "min_n_eff_required",
    "hessian_method",
    "diagnose",
    "bootstrap_criterion_probability",
    "BOOTSTRAP_CONFIG",
]

DEFAULTS = {
    "M": 0.05,
    "kappa": 0.05,
    "rho": 0.5,
    "k_exponent": 1,
    "hessian_threshold": 0.001,
    "B": 1000,
}

_TAIL = 1e-16
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class Divergence(str, enum.Enum):
    KL = "kl"
    HELLINGER = "hellinger"

    @classmethod
    def parse(cls, value: "Divergence | str") -> "Divergence":
        return value if isinstance(value, Divergence) else cls(str(value).lower())


@dataclass(frozen=True)
class DistanceResult:
    divergence_kind: Divergence
    value: float
    weibull_argmin: BaselineSpec
    inner_converged: bool
    quadrature_error: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.divergence_kind.value,
            "value": self.value,
            "weibull_argmin": self.weibull_argmin.to_dict(),
            "inner_converged": self.inner_converged,
            "quadrature_error": self.quadrature_error,
        }


# ---------------------------------------------------------------------------
# divergences between a fitted baseline and a Weibull
# ---------------------------------------------------------------------------


def _log_weibull_density(sigma: float, nu: float, t: np.ndarray) -> np.ndarray:
    lr = np.log(t / sigma)
    return math.log(nu / sigma) + (nu - 1.0) * lr - np.exp(nu * lr)


def _weibull_outside_mass(sigma: float, nu: float, lo: float, hi: float) -> float:
    return -math.expm1(-((lo / sigma) ** nu)) + math.exp(-((hi / sigma) ** nu))


def _support(spec: BaselineSpec) -> tuple[float, float]:
    """Log-time interval holding all but ~2e-16 of the fitted mass."""
    lo = spec.inv_cum_hazard(_TAIL)
    hi = spec.inv_cum_hazard(-math.log(_TAIL))
    return math.log(lo), math.log(hi)


class _Divergence:
    """Divergence from a fixed fitted baseline to Weibull(sigma, nu).

    Integrals run over log-time, where both densities are smooth and
    unimodal. The fitted baseline's log-density is tabulated once on a
    composite Gauss-Legendre grid, so a Weibull candidate costs one vectorised
    pass. :meth:`adaptive` re-evaluates with adaptive quadrature.
    """

    def __init__(self, fitted: BaselineSpec, kind: Divergence, panels: int = 48):
        self.fitted = fitted
        self.kind = kind
        self.s_lo, self.s_hi = _support(fitted)
        edges = np.linspace(self.s_lo, self.s_hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        self.s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        self.w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        self.t = np.exp(self.s)
        self.log_f = fitted.kernel(self.t)[0] - fitted.kernel(self.t)[1]

    def _integrand(self, s, t, log_f, sigma, nu):
        log_g = _log_weibull_density(sigma, nu, t)
        if self.kind is Divergence.KL:
            return np.exp(log_f + s) * (log_f - log_g)
        return np.exp(s) * (np.exp(0.5 * log_f) - np.exp(0.5 * log_g)) ** 2

    def _finish(self, integral: float, sigma: float, nu: float) -> float:
        if self.kind is Divergence.KL:
            return max(integral, 0.0)
        outside = _weibull_outside_mass(sigma, nu, math.exp(self.s_lo), math.exp(self.s_hi))
        h2 = 0.5 * (integral + outside)
        return math.sqrt(min(max(h2, 0.0), 1.0))

    def fixed(self, sigma: float, nu: float) -> float:
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            vals = self._integrand(self.s, self.t, self.log_f, sigma, nu)
        integral = float(np.dot(self.w, vals))
        if not math.isfinite(integral):
            return math.inf
        return self._finish(integral, sigma, nu)

    def adaptive(self, sigma: float, nu: float, epsabs: float = 1e-12, epsrel: float = 1e-9) -> tuple[float, float]:
        fitted = self.fitted

        def g(s: float) -> float:
            t = math.exp(s)
            lh, H = fitted.kernel(np.array([t]))
            with np.errstate(over="ignore", under="ignore"):
                return float(self._integrand(s, t, float(lh[0] - H[0]), sigma, nu))

        # split at the fitted mode region to help the adaptive scheme
        centre = math.log(fitted.quantile(0.5))
        total, err = 0.0, 0.0
        for a, b in ((self.s_lo, centre), (centre, self.s_hi)):
            val, e, info = integrate.quad(g, a, b, epsabs=epsabs, epsrel=epsrel, limit=400, full_output=1)[:3]
            if e > 100 * max(epsabs, epsrel * abs(val)):
                raise IntegrationError(
                    f"{self.kind.value} integral on [{a:.3g}, {b:.3g}] (log-time) did not converge: "
                    f"value={val!r} abserr={e!r}, worst subinterval among {info.get('last')}"
                )
            total += val
            err += e
        return self._finish(total, sigma, nu), err


def divergence(fitted: BaselineSpec, weibull: BaselineSpec, kind: Divergence | str) -> float:
    """KL divergence ``KL(fitted || weibull)`` or Hellinger distance, by adaptive quadrature."""
    kind = Divergence.parse(kind)
    if weibull.family is not Family.WEIBULL:
        raise ValueError("second argument must be a Weibull BaselineSpec")
    return _Divergence(fitted, kind).adaptive(*weibull.xi)[0]


def _moments(spec: BaselineSpec, div: _Divergence) -> tuple[float, float]:
    with np.errstate(over="ignore", invalid="ignore"):
        dens = np.exp(div.log_f + div.s)
        m1 = float(np.dot(div.w, dens * div.t))
        m2 = float(np.dot(div.w, dens * div.t**2))
    return m1, m2 - m1 * m1


def weibull_start(spec: BaselineSpec) -> tuple[float, float]:
    """A Weibull matching the mean and variance of ``spec`` (quartiles as a fallback)."""
    if spec.family is Family.WEIBULL:
        return spec.xi
    if spec.is_weibull_nested():
        return spec.xi[0], spec.xi[1]
    mean, var = _moments(spec, _Divergence(spec, Divergence.KL))
    if math.isfinite(mean) and math.isfinite(var) and mean > 0 and var > 0:
        cv2 = var / mean**2

        def gap(log_nu):
            nu = math.exp(log_nu)
            return math.exp(gammaln(1 + 2 / nu) - 2 * gammaln(1 + 1 / nu)) - 1.0 - cv2

        try:
            nu = math.exp(optimize.brentq(gap, math.log(0.02), math.log(50.0)))
            return mean / math.exp(gammaln(1 + 1 / nu)), nu
        except ValueError:
            pass
    q1, q3 = spec.quantile(0.25), spec.quantile(0.75)
    nu = math.log(math.log(4.0) / math.log(4.0 / 3.0)) / math.log(q3 / q1)
    return q1 / math.log(4.0 / 3.0) ** (1.0 / nu), nu


def min_distance_to_weibull(
    fitted: BaselineSpec,
    kind: Divergence | str,
    n_jitter: int = 3,
    seed: int = 0,
) -> DistanceResult:
    """Minimise the divergence from ``fitted`` to Weibull(sigma, nu) over both parameters."""
    kind = Divergence.parse(kind)
    if fitted.family is Family.WEIBULL:
        return DistanceResult(kind, 0.0, fitted, True)
    div = _Divergence(fitted, kind)

    def objective(w):
        if np.any(np.abs(w) > 50):
            return math.inf
        return div.fixed(math.exp(w[0]), math.exp(w[1]))

    s0, n0 = weibull_start(fitted)
    w0 = np.log([s0, n0])
    rng = np.random.default_rng(seed)
    starts = [w0] + [w0 + rng.normal(0.0, 0.3, 2) for _ in range(n_jitter)]
    best = None
    for w in starts:
        res = optimize.minimize(objective, w, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-16, "maxfev": 2000})
        pol = optimize.minimize(objective, res.x, method="BFGS", options={"gtol": 1e-12})
        cand = pol if math.isfinite(pol.fun) and pol.fun <= res.fun else res
        ok = bool(res.success)
        if best is None or cand.fun < best[0].fun:
            best = (cand, ok)
    assert best is not None
    res, ok = best
    sigma, nu = float(np.exp(res.x[0])), float(np.exp(res.x[1]))
    value, err = div.adaptive(sigma, nu)
    agree = abs(value - res.fun) <= 1e-8 + 1e-5 * abs(value)
    return DistanceResult(kind, value, BaselineSpec(Family.WEIBULL, (sigma, nu)), ok and agree, err)


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def effective_sample_size(n: int, censored: int, rho: float = 0.5) -> float:
    if not 0 <= censored <= n:
        raise ValueError("need 0 <= censored <= n")
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    return n - rho * censored


def kl_threshold(n_eff: float, k: int, M: float = 0.05, k_exponent: int = 1) -> float:
    """``M * k**k_exponent * log(n_eff) / (2 n_eff)``."""
    if n_eff <= 1.0:
        raise ValueError("n_eff must exceed 1")
    if M <= 0.0:
        raise ValueError("M must be positive")
    if k_exponent not in (1, 2):
        raise ValueError("k_exponent must be 1 or 2")
    return M * k**k_exponent * math.log(n_eff) / (2.0 * n_eff)


def hellinger_threshold(n_eff: float, kappa: float = 0.05) -> float:
    """Le Cam bound: distances below it cannot be resolved with error below ``kappa``."""
    if n_eff <= 0.0:
        raise ValueError("n_eff must be positive")
    if not 0.0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 1/2)")
    base = 4.0 * kappa - 4.0 * kappa * kappa
    return math.sqrt(-math.expm1(math.log(base) / (2.0 * n_eff)))


def min_n_eff_required(distance: float, kappa: float = 0.05) -> float:
    """Effective sample size at which ``distance`` stops being flagged."""
    if not 0.0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 1/2)")
    if distance <= 0.0:
        return math.inf
    if distance >= 1.0:
        return 0.0
    return math.log1p(-((1.0 - 2.0 * kappa) ** 2)) / (2.0 * math.log1p(-distance * distance))


# ---------------------------------------------------------------------------
# Hessian method
# ---------------------------------------------------------------------------


def hessian_method(hessian: np.ndarray | FitResult, threshold: float = 0.001) -> tuple[np.ndarray, bool]:
    """Standardised eigenvalue moduli (descending) and the near-redundancy flag.

    A :class:`FitResult` contributes its Hessian in working coordinates
    (log baseline parameters, natural regression coefficients).
    """
    H = hessian.hessian_working if isinstance(hessian, FitResult) else np.asarray(hessian, dtype=float)
    if not np.all(np.isfinite(H)):
        raise ArithmeticError("Hessian has non-finite entries")
    moduli = np.abs(np.linalg.eigvalsh(0.5 * (H + H.T)))
    top = moduli.max()
    if top == 0.0:
        raise ArithmeticError("Hessian is identically zero")
    ratios = np.sort(moduli / top)[::-1]
    return ratios, bool(ratios[-1] < threshold)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap replicate summaries and the derived criterion probabilities.

    ``records`` keeps, for every converged replicate, the minimum KL and
    Hellinger distances, the smallest standardised eigenvalue, ``k`` and
    ``n_eff``, so the probabilities can be recomputed under other settings
    with :meth:`probabilities_for`.
    """

    B: int
    seed: int
    converged: int
    failures: int
    probabilities: dict
    unreliable: bool
    settings: dict = field(default_factory=dict)
    records: tuple = field(default=(), repr=False)

    def probabilities_for(self, **overrides) -> dict:
        settings = {**self.settings, **overrides}
        if not self.records:
            return {c: math.nan for c in self.probabilities}
        hits = {c: 0 for c in self.probabilities}
        for rec in self.records:
            for c, flag in _record_flags(rec, settings).items():
                if c in hits:
                    hits[c] += int(flag)
        return {c: hits[c] / len(self.records) for c in hits}

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "seed": self.seed,
            "converged": self.converged,
            "failures": self.failures,
            "probabilities": dict(self.probabilities),
            "unreliable": self.unreliable,
            "settings": dict(self.settings),
        }


@dataclass(frozen=True)
class RedundancyReport:
    model: str
    n: int
    censored: int
    rho: float
    n_eff: float
    k: int
    kl: DistanceResult
    hellinger: DistanceResult
    kl_threshold: float
    hellinger_threshold: float
    min_n_eff_required: float
    eigen_ratios: np.ndarray
    flags: dict
    settings: dict
    bootstrap: BootstrapResult | None = None

    @property
    def smallest_eigen_ratio(self) -> float:
        return float(self.eigen_ratios[-1])

    def with_bootstrap(self, boot: BootstrapResult) -> "RedundancyReport":
        return replace(self, bootstrap=boot)

    def verdicts(self) -> list[str]:
        word = {True: "near-redundant", False: "not near-redundant"}
        return [
            f"KL: D={self.kl.value:.3g} vs U={self.kl_threshold:.3g} -> {word[self.flags['nr_kl']]}",
            f"Hellinger: D={self.hellinger.value:.3g} vs U={self.hellinger_threshold:.3g} -> "
            f"{word[self.flags['nr_hellinger']]}",
            f"Hessian: min ratio={self.smallest_eigen_ratio:.3g} vs {self.settings['hessian_threshold']} -> "
            f"{word[self.flags['nr_hessian']]}",
        ]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n": self.n,
            "censored": self.censored,
            "rho": self.rho,
            "n_eff": self.n_eff,
            "k": self.k,
            "kl": self.kl.to_dict(),
            "hellinger": self.hellinger.to_dict(),
            "kl_threshold": self.kl_threshold,
            "hellinger_threshold": self.hellinger_threshold,
            "min_n_eff_required": self.min_n_eff_required if math.isfinite(self.min_n_eff_required) else None,
            "eigen_ratios": [float(v) for v in self.eigen_ratios],
            "flags": dict(self.flags),
            "settings": dict(self.settings),
            "bootstrap_probs": self.bootstrap.to_dict() if self.bootstrap else None,
        }


def _settings(M, kappa, rho, k_exponent, hessian_threshold) -> dict:
    return {"M": M, "kappa": kappa, "rho": rho, "k_exponent": k_exponent, "hessian_threshold": hessian_threshold}


def diagnose(
    fit: FitResult,
    M: float = 0.05,
    kappa: float = 0.05,
    rho: float = 0.5,
    k_exponent: int = 1,
    hessian_threshold: float = 0.001,
) -> RedundancyReport:
    """Run all three near-redundancy screens on a fitted model."""
    data = fit.data
    n_eff = effective_sample_size(data.n, data.censored, rho)
    baseline = fit.theta_hat.baseline
    kl = min_distance_to_weibull(baseline, Divergence.KL)
    hel = min_distance_to_weibull(baseline, Divergence.HELLINGER)
    u_kl = kl_threshold(n_eff, fit.k, M, k_exponent)
    u_h = hellinger_threshold(n_eff, kappa)
    ratios, nr_hessian = hessian_method(fit, hessian_threshold)
    return RedundancyReport(
        model=fit.label,
        n=data.n,
        censored=data.censored,
        rho=rho,
        n_eff=n_eff,
        k=fit.k,
        kl=kl,
        hellinger=hel,
        kl_threshold=u_kl,
        hellinger_threshold=u_h,
        min_n_eff_required=min_n_eff_required(hel.value, kappa),
        eigen_ratios=ratios,
        flags={"nr_kl": kl.value <= u_kl, "nr_hellinger": hel.value <= u_h, "nr_hessian": nr_hessian},
        settings=_settings(M, kappa, rho, k_exponent, hessian_threshold),
    )


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

IndexSampler = Callable[[np.random.Generator, int], np.ndarray]


def _with_replacement(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _record_flags(rec: dict, settings: dict) -> dict:
    out = {}
    if "kl" in rec:
        out["kl"] = rec["kl"] <= kl_threshold(rec["n_eff"], rec["k"], settings["M"], settings["k_exponent"])
    if "hellinger" in rec:
        out["hellinger"] = rec["hellinger"] <= hellinger_threshold(rec["n_eff"], settings["kappa"])
    if "hessian" in rec:
        out["hessian"] = rec["hessian"] < settings["hessian_threshold"]
    return out


def _replicate_record(
    data: SurvivalDataset,
    base: FitResult,
    criteria: frozenset[str],
    config: OptimizerConfig,
    rho: float,
) -> dict | None:
    try:
        fit = fit_mle(data, base.family, base.structure, config, init=base.estimate)
    except (NonConvergenceError, ArithmeticError, ValueError):
        return None
    if not fit.converged:
        return None
    rec = {"k": fit.k, "n_eff": effective_sample_size(data.n, data.censored, rho)}
    baseline = fit.theta_hat.baseline
    try:
        if "kl" in criteria:
            rec["kl"] = min_distance_to_weibull(baseline, Divergence.KL, n_jitter=1).value
        if "hellinger" in criteria:
            rec["hellinger"] = min_distance_to_weibull(baseline, Divergence.HELLINGER, n_jitter=1).value
        if "hessian" in criteria:
            rec["hessian"] = float(hessian_method(fit)[0][-1])
    except (ArithmeticError, ValueError):
        return None
    return rec


def _bootstrap_job(data, base, criteria, config, rho, seed, index_sampler, b: int) -> dict | None:
    rng = np.random.default_rng(seed + b)
    idx = index_sampler(rng, data.n)
    return _replicate_record(data.subset(idx), base, criteria, config, rho)


BOOTSTRAP_CONFIG = OptimizerConfig(n_starts=4, fatol=1e-6, maxfev=1500)


def bootstrap_criterion_probability(
    data: SurvivalDataset,
    base: FitResult,
    B: int = 1000,
    seed: int = 0,
    criteria: Iterable[str] = ("kl", "hellinger", "hessian"),
    M: float = 0.05,
    kappa: float = 0.05,
    rho: float = 0.5,
    k_exponent: int = 1,
    hessian_threshold: float = 0.001,
    config: OptimizerConfig | None = None,
    index_sampler: IndexSampler = _with_replacement,
    progress: Callable[[int], None] | None = None,
    workers: int = 1,
) -> BootstrapResult:
    """Nonparametric bootstrap probability that each near-redundancy screen fires.

    Replicate ``b`` resamples rows with ``np.random.default_rng(seed + b)``
    and refits the model starting from the original estimate, then from the
    usual start set (four starts in total by default, see
    ``BOOTSTRAP_CONFIG``). Probabilities are proportions among converged
    replicates; more than 20% failures marks the result unreliable.
    ``workers > 1`` spreads replicates over processes; the result does not
    depend on the number of workers.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    criteria = frozenset(c.lower() for c in criteria)
    unknown = criteria - {"kl", "hellinger", "hessian"}
    if unknown:
        raise ValueError(f"unknown criteria {sorted(unknown)}")
    config = config or BOOTSTRAP_CONFIG
    settings = _settings(M, kappa, rho, k_exponent, hessian_threshold)
    job = partial(_bootstrap_job, data, base, criteria, config, rho, seed, index_sampler)
    records = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(job, range(B), chunksize=max(1, B // (4 * workers)))
            for b, rec in enumerate(results):
                if progress:
                    progress(b)
                if rec is not None:
                    records.append(rec)
    else:
        for b in range(B):
            rec = job(b)
            if progress:
                progress(b)
            if rec is not None:
                records.append(rec)
    failures = B - len(records)
    result = BootstrapResult(
        B, seed, len(records), failures, {c: math.nan for c in sorted(criteria)},
        failures > 0.2 * B, settings, tuple(records),
    )
    return replace(result, probabilities=result.probabilities_for())
