"""Maximum likelihood fitting, numerical Hessians and AIC comparison."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .baseline import Family
from .model import GHLikelihood, GHParameters, Structure, SurvivalDataset

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "NonConvergenceError",
    "DegenerateDataError",
    "ComparisonError",
    "fit_mle",
    "numerical_hessian",
    "compare_models",
    "model_label",
]

EPS = np.finfo(float).eps


class NonConvergenceError(RuntimeError):
    """All optimisation starts failed. ``best`` carries the best point found."""

    def __init__(self, message: str, best: np.ndarray | None = None, loglik: float = -math.inf):
        super().__init__(message)
        self.best = best
        self.loglik = loglik


class DegenerateDataError(ValueError):
    pass


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`fit_mle`.

    The default start set is: the Weibull-AFT fit embedded in the target
    model, the covariate-free fit of the target baseline, then jittered
    copies of the first.
    """

    n_starts: int = 5
    jitter_sd: float = 0.3
    seed: int = 0
    fatol: float = 1e-10
    maxfev: int = 5000
    polish: bool = True
    simplex: bool = True
    grad_tol: float = 1e-4
    hessian_step: float | None = None

    def to_dict(self) -> dict:
        return {
            "n_starts": self.n_starts,
            "jitter_sd": self.jitter_sd,
            "seed": self.seed,
            "fatol": self.fatol,
            "maxfev": self.maxfev,
            "polish": self.polish,
            "simplex": self.simplex,
            "grad_tol": self.grad_tol,
        }


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: GHParameters
    estimate: np.ndarray
    names: tuple[str, ...]
    loglik: float
    aic: float
    hessian: np.ndarray
    hessian_working: np.ndarray
    k: int
    converged: bool
    n_starts_used: int
    optimizer_trace: dict
    family: Family
    structure: Structure
    data: SurvivalDataset = field(repr=False)

    @property
    def label(self) -> str:
        return model_label(self.family, self.structure)

    @property
    def likelihood(self) -> GHLikelihood:
        return GHLikelihood(self.data, self.family, self.structure)

    def to_dict(self) -> dict:
        return {
            "model": self.label,
            "family": self.family.value,
            "structure": self.structure.value,
            "n": self.data.n,
            "censored": self.data.censored,
            "k": self.k,
            "names": list(self.names),
            "estimate": [float(v) for v in self.estimate],
            "loglik": self.loglik,
            "aic": self.aic,
            "converged": self.converged,
            "n_starts_used": self.n_starts_used,
            "hessian": self.hessian.tolist(),
            "hessian_working": self.hessian_working.tolist(),
            "theta": self.theta_hat.to_dict(),
            "optimizer_trace": self.optimizer_trace,
        }


def model_label(family: Family | str, structure: Structure | str) -> str:
    return f"{Family.parse(family).label}-{Structure.parse(structure).value.upper()}"


# ---------------------------------------------------------------------------
# numerical Hessian
# ---------------------------------------------------------------------------


def numerical_hessian(
    objective: Callable[[np.ndarray], float],
    at: Sequence[float],
    rel_step: float | None = None,
    max_halvings: int = 5,
) -> np.ndarray:
    """Central-difference Hessian, symmetrised as ``(H + H.T) / 2``.

    Coordinate ``j`` uses the step ``rel_step * max(1, |x_j|)``; the default
    ``rel_step`` is ``eps ** (1/4)``, the balance point between truncation and
    rounding error for a second difference. If the objective is not finite
    at a probe point all steps are halved, at most ``max_halvings`` times.
    """
    x = np.asarray(at, dtype=float)
    if rel_step is None:
        rel_step = EPS ** 0.25
    base = rel_step * np.maximum(1.0, np.abs(x))
    for _ in range(max_halvings + 1):
        H = _central_hessian(objective, x, base)
        if H is not None:
            return H
        base = base / 2.0
    raise ArithmeticError(f"objective is not finite around {x.tolist()} after {max_halvings} step halvings")


def _central_hessian(objective, x: np.ndarray, h: np.ndarray) -> np.ndarray | None:
    k = x.size
    f0 = objective(x)
    if not math.isfinite(f0):
        raise ArithmeticError(f"objective is not finite at {x.tolist()}")
    H = np.empty((k, k))
    plus = np.empty(k)
    minus = np.empty(k)
    for i in range(k):
        e = np.zeros(k)
        e[i] = h[i]
        plus[i] = objective(x + e)
        minus[i] = objective(x - e)
    if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
        return None
    for i in range(k):
        H[i, i] = (plus[i] - 2.0 * f0 + minus[i]) / (h[i] * h[i])
        for j in range(i + 1, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            fpp = objective(x + ei + ej)
            fpm = objective(x + ei - ej)
            fmp = objective(x - ei + ej)
            fmm = objective(x - ei - ej)
            if not all(math.isfinite(v) for v in (fpp, fpm, fmp, fmm)):
                return None
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


def _gradient(objective, x: np.ndarray) -> np.ndarray:
    h = EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (objective(x + e) - objective(x - e)) / (2.0 * h[i])
    return g


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------


def _null_data(data: SurvivalDataset) -> SurvivalDataset:
    return SurvivalDataset(data.times, data.status, np.zeros((data.n, 0)), np.zeros((data.n, 0)))


def _naive_baseline(family: Family, data: SurvivalDataset) -> np.ndarray:
    # exponential MLE for the scale
    scale = float(data.times.sum() / max(data.n_events, 1))
    if family is Family.LOGNORMAL:
        return np.array([math.log(float(np.median(data.times))), 1.0])
    if family is Family.WEIBULL:
        return np.array([scale, 1.0])
    return np.array([scale, 1.0, 1.0])


def _baseline_from_weibull(family: Family, sigma: float, nu: float) -> np.ndarray:
    if family is Family.WEIBULL:
        return np.array([sigma, nu])
    if family is Family.LOGNORMAL:
        # match the median and the log-time spread of the Weibull
        return np.array([math.log(sigma) + math.log(math.log(2.0)) / nu, 1.2825 / nu])
    return np.array([sigma, nu, 1.0])


def _embed(like: GHLikelihood, xi: np.ndarray, beta_aft: np.ndarray) -> np.ndarray:
    """Place a Weibull-AFT solution into ``like``'s free-parameter layout."""
    data, structure = like.data, like.structure
    nu = 1.0 if like.family is Family.LOGNORMAL else float(xi[1])
    parts = [xi]
    if structure.has_alpha:
        lookup = dict(zip(data.hazard_names, beta_aft))
        parts.append(np.array([lookup.get(name, 0.0) for name in data.time_names]))
    if structure.has_beta:
        parts.append(nu * beta_aft if structure is Structure.PH else beta_aft)
    return np.concatenate(parts)


def _optimize(like: GHLikelihood, w0: np.ndarray, config: OptimizerConfig) -> dict:
    def nll(w):
        v = like.loglik_working(w)
        return -v if math.isfinite(v) else math.inf

    f0 = nll(w0)
    if not math.isfinite(f0):
        return {"working": w0, "nll": math.inf, "nfev": 1, "success": False, "message": "non-finite start"}
    fatol = config.fatol * max(1.0, abs(f0))
    nfev = 0
    w = np.asarray(w0, dtype=float)
    success = False
    message = ""
    # one restart: simplex searches often stall before the tolerance in >5 dims
    for _ in range(2 if config.simplex else 0):
        budget = config.maxfev - nfev
        if budget <= 0:
            break
        res = optimize.minimize(
            nll,
            w,
            method="Nelder-Mead",
            options={"maxfev": budget, "xatol": 1e-8, "fatol": fatol, "adaptive": w.size > 4},
        )
        nfev += res.nfev
        improved = res.fun < nll(w) - fatol
        w, success, message = res.x, bool(res.success), str(res.message)
        if not improved:
            break
    if config.polish or not config.simplex:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(nll, w, method="BFGS", options={"gtol": 1e-7, "maxiter": 500})
        nfev += res.nfev
        if math.isfinite(res.fun) and res.fun <= nll(w):
            w = res.x
            success = success or bool(res.success)
    return {"working": w, "nll": nll(w), "nfev": nfev, "success": success, "message": message}


def _weibull_aft_start(data: SurvivalDataset, config: OptimizerConfig) -> tuple[np.ndarray, np.ndarray]:
    null = GHLikelihood(_null_data(data), Family.WEIBULL, Structure.PH)
    r0 = _optimize(null, null.to_working(_naive_baseline(Family.WEIBULL, data)), config)
    xi0 = null.to_natural(r0["working"])
    if data.p == 0:
        return xi0, np.zeros(0)
    aft = GHLikelihood(data.aft_view(), Family.WEIBULL, Structure.AFT)
    r1 = _optimize(aft, aft.to_working(np.concatenate([xi0, np.zeros(data.p)])), config)
    est = aft.to_natural(r1["working"])
    return est[:2], est[2:]


def _start_points(like: GHLikelihood, config: OptimizerConfig, init):
    """Yield ``(name, working_vector)`` starts, computing each only when needed."""
    data, family = like.data, like.family
    quick = replace(config, maxfev=min(config.maxfev, 3000))
    wanted = max(config.n_starts, 1)
    produced = 0
    if init is not None:
        yield "init", like.to_working(np.asarray(init, dtype=float))
        produced += 1
        if produced >= wanted:
            return
    anchor = None
    if not (family is Family.WEIBULL and like.structure is Structure.AFT):
        w_xi, w_beta = _weibull_aft_start(data, quick)
        anchor = like.to_working(_embed(like, _baseline_from_weibull(family, *w_xi), w_beta))
        yield "weibull-aft", anchor
        produced += 1
        if produced >= wanted:
            return
    null = GHLikelihood(_null_data(data), family, Structure.PH)
    r = _optimize(null, null.to_working(_naive_baseline(family, data)), quick)
    null_xi = null.to_natural(r["working"])
    null_start = like.to_working(np.concatenate([null_xi, np.zeros(like.k - like.r)]))
    yield "null", null_start
    produced += 1
    if anchor is None:
        anchor = null_start
    rng = np.random.default_rng(config.seed)
    j = 0
    while produced < wanted:
        j += 1
        produced += 1
        yield f"jitter{j}", anchor + rng.normal(0.0, config.jitter_sd, anchor.size)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def fit_mle(
    data: SurvivalDataset,
    family: Family | str,
    structure: Structure | str = Structure.GH,
    config: OptimizerConfig | None = None,
    init: Sequence[float] | None = None,
) -> FitResult:
    """Fit a GH-family model by maximum likelihood.

    ``init`` (natural scale, :func:`~ghdiag.model.apply_structure` layout)
    is tried first when given. For the AFT structure pass
    ``data.aft_view()``.
    """
    config = config or OptimizerConfig()
    family = Family.parse(family)
    structure = Structure.parse(structure)
    if data.n_events == 0:
        raise DegenerateDataError("no uncensored observations; the likelihood has no maximum")
    like = GHLikelihood(data, family, structure)

    best = None
    trace = []
    for name, w0 in _start_points(like, config, init):
        res = _optimize(like, w0, config)
        trace.append({"start": name, "loglik": -res["nll"], "nfev": res["nfev"], "success": res["success"]})
        if best is None or res["nll"] < best["nll"]:
            best = res
    assert best is not None
    if not math.isfinite(best["nll"]):
        raise NonConvergenceError(
            f"{model_label(family, structure)}: every start failed", like.to_natural(best["working"])
        )
    estimate = like.to_natural(best["working"])
    loglik = -best["nll"]

    def nll_natural(v):
        value = like.loglik(v)
        return -value if math.isfinite(value) else math.inf

    grad = _gradient(lambda w: best_nll(like, w), best["working"])
    grad_ok = float(np.max(np.abs(grad))) <= config.grad_tol * max(1.0, data.n / 10.0)
    hessian = _safe_hessian(nll_natural, estimate, config.hessian_step)
    hessian_working = _safe_hessian(lambda w: best_nll(like, w), best["working"], config.hessian_step)
    k = like.k
    return FitResult(
        theta_hat=like.params(estimate),
        estimate=estimate,
        names=tuple(like.names),
        loglik=loglik,
        aic=2.0 * k - 2.0 * loglik,
        hessian=hessian,
        hessian_working=hessian_working,
        k=k,
        converged=bool(grad_ok and np.all(np.isfinite(hessian_working))),
        n_starts_used=len(trace),
        optimizer_trace={"starts": trace, "grad_max": float(np.max(np.abs(grad))), "config": config.to_dict()},
        family=family,
        structure=structure,
        data=data,
    )


def _safe_hessian(objective, at, step) -> np.ndarray:
    try:
        return numerical_hessian(objective, at, step)
    except ArithmeticError:
        return np.full((len(at), len(at)), np.nan)


def best_nll(like: GHLikelihood, w: np.ndarray) -> float:
    v = like.loglik_working(w)
    return -v if math.isfinite(v) else math.inf


def compare_models(fits: Sequence[FitResult]) -> list[FitResult]:
    """Sort fits by AIC (ascending), breaking ties by parameter count."""
    fits = list(fits)
    if len(fits) < 2:
        raise ComparisonError("need at least two fits to compare")
    ref = fits[0].data
    for f in fits[1:]:
        if not f.data.same_outcomes(ref):
            raise ComparisonError(f"{f.label} was fitted to a different dataset")
    return sorted(fits, key=lambda f: (f.aic, f.k))
