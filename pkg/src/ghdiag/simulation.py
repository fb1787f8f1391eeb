"""Simulation from GH models and the near-redundancy / PNI scenario study.

Event times are drawn by inverting the cumulative hazard at unit exponential
variates. Administrative censoring is calibrated to a target rate from a
large pilot sample. Each replicate of a scenario is fitted with a GH model
and classified by every near-redundancy method against practical
non-identifiability of the regression coefficients.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from .baseline import BaselineSpec, Family, InversionError
from .estimation import FitResult, NonConvergenceError, OptimizerConfig, fit_mle
from .model import GHParameters, Structure, SurvivalDataset
from .profile import model_pni
from .redundancy import diagnose

__all__ = [
    "SamplingError",
    "CalibrationError",
    "SCENARIOS",
    "METHODS",
    "ScenarioSpec",
    "ClassificationTable",
    "SampleClass",
    "sample_gh",
    "calibrate_censoring",
    "simulate_dataset",
    "classify_sample",
    "run_scenario",
    "read_scenario_config",
]

METHODS = ("hellinger", "kl", "hessian")

# id -> (generating baseline, its parameters, fitted baseline)
SCENARIOS = {
    1: (Family.PGW, (0.3, 1.5, 5.0), Family.PGW),
    2: (Family.PGW, (1.2, 1.3, 0.85), Family.PGW),
    3: (Family.PGW, (0.1, 0.9, 4.0), Family.PGW),
    4: (Family.LOGNORMAL, (0.0, 1.5), Family.PGW),
    5: (Family.EW, (0.7, 1.2, 0.85), Family.PGW),
    6: (Family.PGW, (1.2, 1.3, 0.85), Family.EW),
    7: (Family.PGW, (1.2, 1.3, 0.85), Family.GG),
}


class SamplingError(ArithmeticError):
    pass


class CalibrationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _linear(M: np.ndarray, coef: np.ndarray) -> np.ndarray:
    return M @ coef if coef.size else np.zeros(M.shape[0])


def sample_gh(theta: GHParameters, X, Xtilde, rng: np.random.Generator) -> np.ndarray:
    """Event times from a GH model by the probability-integral transform.

    Row ``i`` gets ``t = exp(-x~a) * H0^{-1}(E * exp(x~a - xb))`` with
    ``E ~ Exp(1)``, so that the model's cumulative hazard at ``t`` is ``E``.
    """
    X = np.asarray(X, dtype=float)
    Xt = np.asarray(Xtilde, dtype=float)
    if X.ndim != 2 or Xt.ndim != 2 or X.shape[0] != Xt.shape[0]:
        raise ValueError("X and Xtilde must be 2-D with the same number of rows")
    if X.shape[1] != theta.beta.size or Xt.shape[1] != theta.alpha.size:
        raise ValueError("design widths do not match the coefficient vectors")
    e = rng.exponential(size=X.shape[0])
    xa = _linear(Xt, theta.alpha)
    xb = _linear(X, theta.beta)
    target = e * np.exp(xa - xb)
    try:
        u = theta.baseline.inv_cum_hazard(target)
    except InversionError as exc:
        raise SamplingError(f"inverting H0 failed: {exc}") from exc
    t = np.exp(-xa) * u
    bad = ~(np.isfinite(t) & (t > 0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SamplingError(f"row {i}: sampled time {t[i]!r} (E={e[i]!r}, H0 target {target[i]!r})")
    return t


def calibrate_censoring(
    theta: GHParameters,
    X,
    Xtilde,
    target_rate: float,
    rng: np.random.Generator,
    pilot: int = 100_000,
) -> float:
    """Administrative censoring time giving roughly ``target_rate`` censoring.

    The empirical ``1 - target_rate`` quantile of ``pilot`` event times,
    with covariate rows resampled from ``(X, Xtilde)``.
    """
    if not 0.0 < target_rate < 1.0:
        raise CalibrationError("target censoring rate must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    Xt = np.asarray(Xtilde, dtype=float)
    idx = rng.integers(0, X.shape[0], size=pilot)
    t = sample_gh(theta, X[idx], Xt[idx], rng)
    c = float(np.quantile(t, 1.0 - target_rate))
    if not (math.isfinite(c) and c > 0) or np.ptp(t) == 0:
        raise CalibrationError(f"degenerate pilot sample (quantile {c!r})")
    return c


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """One cell of the simulation study.

    One standard-normal covariate enters at both the time level and the
    hazard level with coefficients ``alpha`` and ``beta``.
    """

    scenario_id: int
    n: int
    target_censoring: float
    replicates: int = 50
    seed: int = 0
    true_family: Family | None = None
    true_xi: tuple | None = None
    fit_family: Family | None = None
    alpha: float = 1.5
    beta: float = 2.5
    k_exponent: int = 1
    delta: float = 3.0

    def __post_init__(self):
        if self.scenario_id in SCENARIOS:
            fam, xi, fit = SCENARIOS[self.scenario_id]
            if self.true_family is None:
                object.__setattr__(self, "true_family", fam)
                object.__setattr__(self, "true_xi", xi)
            if self.fit_family is None:
                object.__setattr__(self, "fit_family", fit)
        elif self.true_family is None or self.fit_family is None:
            raise ValueError(f"scenario {self.scenario_id} is not preset; give true_family/true_xi/fit_family")
        object.__setattr__(self, "true_family", Family.parse(self.true_family))
        object.__setattr__(self, "fit_family", Family.parse(self.fit_family))
        object.__setattr__(self, "true_xi", tuple(float(v) for v in self.true_xi))
        BaselineSpec(self.true_family, self.true_xi)
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if not 0.0 < self.target_censoring < 1.0:
            raise ValueError("target_censoring must lie in (0, 1)")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")

    @property
    def theta(self) -> GHParameters:
        return GHParameters(
            BaselineSpec(self.true_family, self.true_xi),
            np.array([self.alpha]),
            np.array([self.beta]),
            Structure.GH,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["true_family"] = self.true_family.value
        out["fit_family"] = self.fit_family.value
        out["true_xi"] = list(self.true_xi)
        return out


_CONFIG_KEYS = {
    "scenario": ("scenario_id", int),
    "scenario_id": ("scenario_id", int),
    "n": ("n", int),
    "censoring": ("target_censoring", float),
    "target_censoring": ("target_censoring", float),
    "replicates": ("replicates", int),
    "seed": ("seed", int),
    "true_family": ("true_family", str),
    "true_xi": ("true_xi", lambda s: tuple(float(v) for v in s.split(","))),
    "fit_family": ("fit_family", str),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "k_exponent": ("k_exponent", int),
    "delta": ("delta", float),
}


def read_scenario_config(path: str | Path) -> ScenarioSpec:
    """Read a ``key = value`` scenario file (``#`` starts a comment)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        name, conv = _CONFIG_KEYS[key]
        try:
            values[name] = conv(val)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad value {val!r} for {key!r}") from None
    for required in ("scenario_id", "n", "target_censoring"):
        if required not in values:
            raise ValueError(f"{path}: missing required key {required!r}")
    return ScenarioSpec(**values)


def simulate_dataset(spec: ScenarioSpec, c_adm: float, rng: np.random.Generator) -> SurvivalDataset:
    x = rng.standard_normal((spec.n, 1))
    t = sample_gh(spec.theta, x, x, rng)
    status = (t <= c_adm).astype(int)
    return SurvivalDataset(np.minimum(t, c_adm), status, x, x, ("x",), ("x",))


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleClass:
    nr: dict
    pni: bool | None
    pni_flags: dict
    gamma_hat: float | None = None

    def to_dict(self) -> dict:
        return {"nr": dict(self.nr), "pni": self.pni, "pni_flags": dict(self.pni_flags), "gamma_hat": self.gamma_hat}


def classify_sample(
    fit: FitResult,
    data: SurvivalDataset | None = None,
    *,
    delta: float = 3.0,
    k_exponent: int = 1,
    **thresholds,
) -> SampleClass:
    """Near-redundancy by each method and model-level PNI for one fitted sample."""
    if data is not None and data is not fit.data and not data.same_outcomes(fit.data):
        raise ValueError("data differ from the data the model was fitted to")
    report = diagnose(fit, k_exponent=k_exponent, **thresholds)
    pni = model_pni(fit, delta=delta)
    nr = {
        "hellinger": report.flags["nr_hellinger"],
        "kl": report.flags["nr_kl"],
        "hessian": report.flags["nr_hessian"],
    }
    xi = fit.theta_hat.baseline.xi
    gamma = float(xi[2]) if len(xi) == 3 else None
    overall = True if pni.pni else (None if pni.indeterminate else False)
    return SampleClass(nr, overall, pni.flags, gamma)


@dataclass
class ClassificationTable:
    """Counts per NR method over the (NR, PNI) cells."""

    spec: ScenarioSpec
    counts: dict = field(default_factory=lambda: {m: {(a, b): 0 for a in (True, False) for b in (True, False)} for m in METHODS})
    replicate_failures: int = 0
    achieved_censoring: list = field(default_factory=list)
    gamma_hat: list = field(default_factory=list)
    c_adm: float = math.nan
    elapsed: float = 0.0

    @property
    def classified(self) -> int:
        return sum(self.counts[METHODS[0]].values())

    def add(self, cls: SampleClass) -> None:
        for m in METHODS:
            self.counts[m][(bool(cls.nr[m]), bool(cls.pni))] += 1

    def proportion(self, method: str, nr: bool, pni: bool) -> float:
        total = self.classified
        return self.counts[method][(nr, pni)] / total if total else math.nan

    def rows(self) -> list[dict]:
        out = []
        for m in METHODS:
            for nr in (True, False):
                for pni in (True, False):
                    out.append({
                        "method": m,
                        "nr": "NR" if nr else "I",
                        "pni": "PNI" if pni else "I",
                        "count": self.counts[m][(nr, pni)],
                        "proportion": self.proportion(m, nr, pni),
                    })
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["method", "nr", "pni", "count", "proportion"])
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "scenario": self.spec.to_dict(),
            "replicates": self.spec.replicates,
            "classified": self.classified,
            "replicate_failures": self.replicate_failures,
            "c_adm": self.c_adm,
            "mean_achieved_censoring": float(np.mean(self.achieved_censoring)) if self.achieved_censoring else None,
            "achieved_censoring": list(self.achieved_censoring),
            "gamma_hat": list(self.gamma_hat),
            "elapsed_seconds": self.elapsed,
            "cells": self.rows(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format(self) -> str:
        lines = [
            f"scenario {self.spec.scenario_id}: n={self.spec.n}, censoring {self.spec.target_censoring:.0%}, "
            f"{self.classified} classified, {self.replicate_failures} failed"
        ]
        for m in METHODS:
            lines.append(f"  {m:<9}        PNI      I")
            for nr in (True, False):
                label = "NR" if nr else "I"
                lines.append(
                    f"  {'':<9}{label:>3}  {self.proportion(m, nr, True):7.3f} {self.proportion(m, nr, False):7.3f}"
                )
        return "\n".join(lines)


def _replicate(spec: ScenarioSpec, c_adm: float, seq: np.random.SeedSequence, config: OptimizerConfig):
    rng = np.random.default_rng(seq)
    data = simulate_dataset(spec, c_adm, rng)
    fit = fit_mle(data, spec.fit_family, Structure.GH, config)
    if not fit.converged:
        raise NonConvergenceError("replicate fit did not converge", fit.estimate, fit.loglik)
    cls = classify_sample(fit, delta=spec.delta, k_exponent=spec.k_exponent)
    if cls.pni is None:
        raise NonConvergenceError("profile likelihood indeterminate", fit.estimate, fit.loglik)
    return data.censored / data.n, cls


def _replicate_job(spec, c_adm, config, seq):
    try:
        return _replicate(spec, c_adm, seq, config)
    except (NonConvergenceError, ArithmeticError, ValueError) as exc:
        return exc


def run_scenario(
    spec: ScenarioSpec,
    config: OptimizerConfig | None = None,
    progress: Callable[[int, str], None] | None = None,
    workers: int = 1,
) -> ClassificationTable:
    """Simulate, fit and classify ``spec.replicates`` samples.

    Seeds derive from ``spec.seed``: the censoring calibration and each
    replicate get their own child of one ``SeedSequence``, so a replicate's
    data depend only on ``(seed, index)``, and the table does not depend on
    ``workers``.
    """
    config = config or OptimizerConfig()
    started = time.perf_counter()
    children = np.random.SeedSequence(spec.seed).spawn(spec.replicates + 1)
    cal_rng = np.random.default_rng(children[0])
    pilot_x = cal_rng.standard_normal((100_000, 1))
    c_adm = calibrate_censoring(spec.theta, pilot_x, pilot_x, spec.target_censoring, cal_rng)
    table = ClassificationTable(spec, c_adm=c_adm)
    job = partial(_replicate_job, spec, c_adm, config)
    if workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(job, children[1:])
    else:
        pool = None
        results = map(job, children[1:])
    for r, out in enumerate(results):
        if isinstance(out, Exception):
            table.replicate_failures += 1
            if progress:
                progress(r, f"failed: {out}")
            continue
        rate, cls = out
        table.achieved_censoring.append(rate)
        table.gamma_hat.append(cls.gamma_hat)
        table.add(cls)
        if progress:
            progress(r, "ok")
    if pool is not None:
        pool.shutdown()
    table.elapsed = time.perf_counter() - started
    return table
