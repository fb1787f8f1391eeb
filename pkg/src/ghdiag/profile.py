"""Relative profile likelihoods, likelihood regions and practical non-identifiability.

For a scalar parameter psi with nuisance parameters lambda the relative
profile likelihood is

    R_P(psi) = sup_lambda L(psi, lambda) / L(theta_hat),

which equals one at the MLE. A parameter is practically non-identifiable when
``R_P`` is still at least ``c = 0.147`` (the 95% calibration) at
``psi_hat - delta`` or ``psi_hat + delta``.

Scans run outward from the estimate, warm-starting each inner maximisation
at the neighbouring solution, because these profiles can have kinks and
secondary modes near the non-identifiable Weibull submodel.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .estimation import FitResult
from .model import GHLikelihood, SurvivalDataset

__all__ = [
    "LEVEL_95",
    "ProfileCurve",
    "ModelPNI",
    "profile_objective",
    "profile_scan",
    "likelihood_region",
    "pni_flag",
    "model_pni",
    "default_delta",
    "write_profiles_csv",
]

LEVEL_95 = 0.147
_NEG_BIG = 1e300


# ---------------------------------------------------------------------------
# generic machinery on an arbitrary negative log-likelihood
# ---------------------------------------------------------------------------


class _Profiler:
    """Profile of ``nll`` in coordinate ``j`` of its argument."""

    def __init__(self, nll: Callable[[np.ndarray], float], x_hat: np.ndarray, j: int):
        self.nll = nll
        self.x_hat = np.asarray(x_hat, dtype=float)
        self.j = j
        self.free = np.arange(self.x_hat.size) != j

    def full(self, u: float, z: np.ndarray) -> np.ndarray:
        x = self.x_hat.copy()
        x[self.j] = u
        x[self.free] = z
        return x

    def _objective(self, u: float):
        def g(z):
            v = self.nll(self.full(u, z))
            return v if math.isfinite(v) else _NEG_BIG
        return g

    def maximise(self, u: float, z0: np.ndarray) -> tuple[float, np.ndarray, bool]:
        """Return ``(profile loglik, nuisance solution, ok)`` at ``u``."""
        if z0.size == 0:
            v = self.nll(self.full(u, z0))
            return -v, z0, math.isfinite(v)
        g = self._objective(u)
        start = g(z0)
        if start >= _NEG_BIG:
            # the warm start left the domain; fall back to the MLE nuisance
            z0 = self.x_hat[self.free]
            start = g(z0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(g, z0, method="BFGS", options={"gtol": 1e-6, "maxiter": 400})
            z, f = res.x, res.fun
            if not res.success or f >= _NEG_BIG:
                nm = optimize.minimize(
                    g, z, method="Nelder-Mead",
                    options={"maxfev": 400 * z.size, "xatol": 1e-8, "fatol": 1e-10, "adaptive": z.size > 4},
                )
                pol = optimize.minimize(g, nm.x, method="BFGS", options={"gtol": 1e-6, "maxiter": 400})
                z, f = (pol.x, pol.fun) if pol.fun <= nm.fun else (nm.x, nm.fun)
        if f > start:
            z, f = z0, start
        ok = f < _NEG_BIG and math.isfinite(f)
        return (-f if ok else math.nan), z, ok


@dataclass(frozen=True)
class ProfileCurve:
    """A relative profile likelihood on a grid of parameter values.

    ``grid`` and ``region_endpoints`` are on the natural scale of the
    parameter; ``scale`` records whether the scan was equispaced in the
    parameter itself or in its logarithm. Missing inner maximisations are
    NaN in ``rel_profile``.
    """

    param_index: int
    name: str
    estimate: float
    grid: np.ndarray
    rel_profile: np.ndarray
    region_endpoints: tuple[float | None, float | None]
    level_c: float
    pni_flag: bool | None
    delta: float
    scale: str = "identity"
    failures: int = 0
    loglik_hat: float = math.nan
    improved_loglik: float | None = None
    _profiler: _Profiler | None = field(default=None, repr=False, compare=False)
    _solutions: tuple = field(default=(), repr=False, compare=False)

    def to_rows(self) -> list[dict]:
        return [
            {"param": self.name, "psi": float(p), "rel_profile": float(r)}
            for p, r in zip(self.grid, self.rel_profile)
        ]

    def to_dict(self) -> dict:
        lo, hi = self.region_endpoints
        return {
            "param": self.name,
            "index": self.param_index,
            "estimate": self.estimate,
            "delta": self.delta,
            "scale": self.scale,
            "level_c": self.level_c,
            "region": [lo, hi],
            "pni": self.pni_flag,
            "failures": self.failures,
            "grid": [float(v) for v in self.grid],
            "rel_profile": [None if math.isnan(v) else float(v) for v in self.rel_profile],
        }


def _to_natural(u, scale):
    return np.exp(u) if scale == "log" else np.asarray(u, dtype=float)


def _to_scan(x, scale):
    return np.log(x) if scale == "log" else np.asarray(x, dtype=float)


def _sweep(prof: _Profiler, u_grid: np.ndarray, centre: int) -> tuple[np.ndarray, list, int]:
    """Profile loglik along ``u_grid``, warm-starting outward from ``centre``."""
    z_hat = prof.x_hat[prof.free]
    values = np.full(u_grid.size, np.nan)
    sols: list = [None] * u_grid.size
    values[centre] = -prof.nll(prof.x_hat)
    sols[centre] = z_hat
    failures = 0
    for step in (-1, 1):
        z = z_hat
        i = centre + step
        while 0 <= i < u_grid.size:
            lp, z_new, ok = prof.maximise(float(u_grid[i]), z)
            if ok:
                values[i], sols[i], z = lp, z_new, z_new
            else:
                failures += 1
            i += step
    _repair(prof, u_grid, values, sols, centre)
    return values, sols, failures


def _repair(prof: _Profiler, u_grid: np.ndarray, values: np.ndarray, sols: list, centre: int) -> None:
    """Re-sweep inward wherever the profile rises away from the estimate.

    A rise usually means the outward path was on a lower branch of the
    nuisance optimum; warm starts from the higher outer point lift it.
    """
    for step in (-1, 1):
        i = centre + step
        while 0 <= i + step < u_grid.size:
            outer = i + step
            if np.isfinite(values[outer]) and not values[i] >= values[outer]:
                j = i
                while j != centre:
                    lp, z, ok = prof.maximise(float(u_grid[j]), sols[j + step])
                    if not (ok and not values[j] >= lp - 1e-9):
                        break
                    values[j], sols[j] = lp, z
                    j -= step
            i += step


def _crossing(prof: _Profiler, u_in: float, z_in, u_out: float, target: float, tol: float) -> float:
    """Bisect for the point between ``u_in`` (above target) and ``u_out`` (below)."""
    z = z_in
    for _ in range(60):
        if abs(u_out - u_in) <= tol:
            break
        mid = 0.5 * (u_in + u_out)
        lp, z_mid, ok = prof.maximise(mid, z)
        if ok and lp >= target:
            u_in, z = mid, z_mid
        else:
            u_out = mid
    return 0.5 * (u_in + u_out)


def _region(prof: _Profiler, u_grid, values, sols, loglik_hat, c, tol) -> tuple[float | None, float | None]:
    if c >= 1.0:
        return float(prof.x_hat[prof.j]), float(prof.x_hat[prof.j])
    target = loglik_hat + math.log(c)
    inside = np.where(np.nan_to_num(values, nan=-np.inf) >= target)[0]
    lo_i, hi_i = int(inside.min()), int(inside.max())
    lo = None if lo_i == 0 else _crossing(prof, u_grid[lo_i], sols[lo_i], u_grid[lo_i - 1], target, tol)
    last = u_grid.size - 1
    hi = None if hi_i == last else _crossing(prof, u_grid[hi_i], sols[hi_i], u_grid[hi_i + 1], target, tol)
    return lo, hi


def _curve(
    prof: _Profiler,
    u_grid: np.ndarray,
    *,
    name: str,
    scale: str,
    delta: float,
    level: float,
    loglik_hat: float | None = None,
) -> ProfileCurve:
    u_hat = float(prof.x_hat[prof.j])
    u_grid = np.unique(np.append(np.asarray(u_grid, dtype=float), u_hat))
    centre = int(np.searchsorted(u_grid, u_hat))
    values, sols, failures = _sweep(prof, u_grid, centre)
    ref = values[centre] if loglik_hat is None else loglik_hat
    top = float(np.nanmax(values))
    improved = top if top > ref + 1e-6 else None
    rel = np.minimum(np.exp(values - ref), 1.0)
    rel[centre] = 1.0
    tol = 1e-7 * max(1.0, float(np.ptp(u_grid)))
    lo, hi = _region(prof, u_grid, values, sols, ref, level, tol)
    flag = _pni_from(u_grid, rel, u_hat, delta, level)
    return ProfileCurve(
        param_index=prof.j,
        name=name,
        estimate=float(_to_natural(u_hat, scale)),
        grid=_to_natural(u_grid, scale),
        rel_profile=rel,
        region_endpoints=(
            None if lo is None else float(_to_natural(lo, scale)),
            None if hi is None else float(_to_natural(hi, scale)),
        ),
        level_c=level,
        pni_flag=flag,
        delta=delta,
        scale=scale,
        failures=failures,
        loglik_hat=float(ref),
        improved_loglik=improved,
        _profiler=prof,
        _solutions=tuple(sols),
    )


def _pni_from(u_grid, rel, u_hat, delta, level) -> bool | None:
    probes = []
    for u in (u_hat - delta, u_hat + delta):
        hit = np.isclose(u_grid, u, rtol=0.0, atol=1e-9 * max(1.0, abs(u)))
        if not hit.any():
            return None
        probes.append(float(rel[np.argmax(hit)]))
    known = [p for p in probes if not math.isnan(p)]
    if any(p >= level for p in known):
        return True
    if len(known) < 2:
        return None
    return False


def profile_objective(
    nll: Callable[[np.ndarray], float],
    x_hat: Sequence[float],
    index: int,
    grid: Sequence[float],
    level: float = LEVEL_95,
    delta: float | None = None,
    name: str | None = None,
) -> ProfileCurve:
    """Profile an arbitrary negative log-likelihood ``nll`` at its minimiser ``x_hat``.

    ``grid`` is in the coordinates of ``nll``. Useful for checking the
    machinery against closed-form likelihoods.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if delta is None:
        g = np.asarray(grid, dtype=float)
        delta = float(max(x_hat[index] - g.min(), g.max() - x_hat[index]))
    prof = _Profiler(nll, x_hat, index)
    return _curve(prof, np.asarray(grid, dtype=float), name=name or f"x[{index}]", scale="identity",
                  delta=delta, level=level)


# ---------------------------------------------------------------------------
# GH fits
# ---------------------------------------------------------------------------


def _resolve_index(fit: FitResult, param: int | str) -> int:
    if isinstance(param, str):
        try:
            return fit.names.index(param)
        except ValueError:
            raise KeyError(f"no parameter {param!r}; choose from {list(fit.names)}") from None
    if not 0 <= param < fit.k:
        raise IndexError(f"parameter index {param} out of range for {fit.k} parameters")
    return int(param)


def default_delta(fit: FitResult, index: int, delta: float = 3.0) -> float:
    """Scan half-width in scan coordinates.

    Regression coefficients use ``delta`` directly. Baseline parameters are
    scanned on the log scale over ``delta`` asymptotic standard deviations,
    falling back to ``delta`` when the working Hessian is not invertible.
    """
    if index >= fit.likelihood.r:
        return delta
    try:
        cov = np.linalg.inv(fit.hessian_working)
        sd = math.sqrt(cov[index, index])
    except (np.linalg.LinAlgError, ValueError):
        sd = math.nan
    if not math.isfinite(sd) or sd <= 0:
        sd = 1.0
    return delta * sd


def _gh_profiler(fit: FitResult, data: SurvivalDataset, index: int, nuisance: str) -> tuple[_Profiler, str]:
    like = GHLikelihood(data, fit.family, fit.structure)
    positive = bool(like.positive[index])
    scale = "log" if positive else "identity"
    if nuisance == "log":
        def nll(w):
            v = like.loglik_working(w)
            return -v if math.isfinite(v) else math.inf
        return _Profiler(nll, like.to_working(fit.estimate), index), scale
    if nuisance != "natural":
        raise ValueError("nuisance must be 'log' or 'natural'")

    # profiled coordinate stays on its scan scale, nuisance baseline parameters natural
    def nll_mixed(x):
        v = np.array(x, dtype=float)
        if positive:
            if abs(v[index]) > 700:
                return math.inf
            v[index] = math.exp(v[index])
        value = like.loglik(v)
        return -value if math.isfinite(value) else math.inf

    x_hat = np.array(fit.estimate, dtype=float)
    if positive:
        x_hat[index] = math.log(x_hat[index])
    return _Profiler(nll_mixed, x_hat, index), scale


def profile_scan(
    data: SurvivalDataset | None,
    fit: FitResult,
    param_index: int | str,
    grid: Sequence[float] | None = None,
    *,
    delta: float = 3.0,
    points: int = 41,
    level: float = LEVEL_95,
    nuisance: str = "log",
) -> ProfileCurve:
    """Relative profile likelihood of one parameter of a fitted GH model.

    Parameters
    ----------
    data
        Dataset to profile on; ``None`` uses ``fit.data``.
    param_index
        Position in ``fit.names`` or the name itself.
    grid
        Natural-scale values of the parameter. The default is ``points``
        equispaced values over ``psi_hat +/- delta`` (regression
        coefficients) or over ``delta`` standard deviations either side on
        the log scale (baseline parameters).
    nuisance
        ``"log"`` optimises positive nuisance parameters on the log scale,
        ``"natural"`` on their own scale. Both give the same profile.
    """
    data = fit.data if data is None else data
    if data is not fit.data and not data.same_outcomes(fit.data):
        raise ValueError("data differ from the data the model was fitted to")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    index = _resolve_index(fit, param_index)
    prof, scale = _gh_profiler(fit, data, index, nuisance)
    half = default_delta(fit, index, delta)
    u_hat = prof.x_hat[index]
    if grid is None:
        if points < 1:
            raise ValueError("need at least one grid point")
        u_grid = np.linspace(u_hat - half, u_hat + half, points) if points > 1 else np.array([u_hat])
    else:
        g = np.asarray(grid, dtype=float)
        if scale == "log" and np.any(g <= 0):
            raise ValueError(f"{fit.names[index]} is positive; grid values must be > 0")
        u_grid = _to_scan(g, scale)
    return _curve(prof, u_grid, name=fit.names[index], scale=scale, delta=half, level=level,
                  loglik_hat=fit.loglik)


def likelihood_region(curve: ProfileCurve, c: float = LEVEL_95) -> tuple[float | None, float | None]:
    """Outermost crossings of ``R_P = c`` on the scanned range.

    ``None`` on a side means the profile is still above ``c`` at the end of
    the scan there. Crossings are refined by bisection when the curve still
    carries its profiler, otherwise interpolated in ``log R_P``.
    """
    if not 0.0 < c <= 1.0:
        raise ValueError("c must lie in (0, 1]")
    if c == 1.0:
        return curve.estimate, curve.estimate
    if c == curve.level_c:
        return curve.region_endpoints
    u = _to_scan(curve.grid, curve.scale)
    if curve._profiler is not None:
        values = curve.loglik_hat + np.log(curve.rel_profile)
        tol = 1e-7 * max(1.0, float(np.ptp(u)))
        lo, hi = _region(curve._profiler, u, values, list(curve._solutions), curve.loglik_hat, c, tol)
    else:
        logr = np.log(curve.rel_profile)
        inside = np.where(np.nan_to_num(logr, nan=-np.inf) >= math.log(c))[0]
        i0, i1 = int(inside.min()), int(inside.max())
        lo = hi = None
        if i0 > 0:
            lo = float(np.interp(math.log(c), [logr[i0 - 1], logr[i0]], [u[i0 - 1], u[i0]]))
        if i1 < u.size - 1:
            hi = float(np.interp(math.log(c), [logr[i1 + 1], logr[i1]], [u[i1 + 1], u[i1]]))
    conv = lambda v: None if v is None else float(_to_natural(v, curve.scale))
    return conv(lo), conv(hi)


def pni_flag(
    data: SurvivalDataset | None,
    fit: FitResult,
    param_index: int | str,
    delta: float = 3.0,
    level: float = LEVEL_95,
    steps: int = 6,
) -> bool | None:
    """Practical non-identifiability of one parameter.

    True when ``R_P`` at ``psi_hat - delta`` or ``psi_hat + delta`` is at
    least ``level``; ``None`` when neither probe could be evaluated and no
    probe was above the level. The probes are reached in ``steps``
    warm-started increments.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    index = _resolve_index(fit, param_index)
    half = default_delta(fit, index, delta)
    prof, scale = _gh_profiler(fit, fit.data if data is None else data, index, "log")
    u_hat = prof.x_hat[index]
    u_grid = np.linspace(u_hat - half, u_hat + half, 2 * steps + 1)
    u_grid[steps] = u_hat
    values, _, _ = _sweep(prof, u_grid, steps)
    rel = np.minimum(np.exp(values - fit.loglik), 1.0)
    return _pni_from(u_grid, rel, u_hat, half, level)


@dataclass(frozen=True)
class ModelPNI:
    flags: dict
    indeterminate: tuple

    @property
    def pni(self) -> bool:
        return any(v is True for v in self.flags.values())

    def to_dict(self) -> dict:
        return {"pni": self.pni, "flags": dict(self.flags), "indeterminate": list(self.indeterminate)}


def model_pni(fit: FitResult, delta: float = 3.0, level: float = LEVEL_95, steps: int = 6) -> ModelPNI:
    """PNI of a model: any regression coefficient flagged."""
    r = fit.likelihood.r
    flags = {fit.names[i]: pni_flag(None, fit, i, delta, level, steps) for i in range(r, fit.k)}
    return ModelPNI(flags, tuple(n for n, v in flags.items() if v is None))


def write_profiles_csv(curves: Sequence[ProfileCurve], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["param", "psi", "rel_profile"])
        writer.writeheader()
        for curve in curves:
            writer.writerows(curve.to_rows())
