"""General hazard (GH) regression structure and its censored log-likelihood.

The hazard of an individual with hazard-level covariates ``x`` and time-level
covariates ``xt`` is::

    h(t) = h0(t * exp(xt @ alpha)) * exp(x @ beta)
    H(t) = H0(t * exp(xt @ alpha)) * exp(x @ beta - xt @ alpha)

PH, AFT and AH are the constrained sub-structures ``alpha = 0``,
``alpha = beta`` (with ``xt = x``) and ``beta = 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baseline import BaselineSpec, Family, ParameterDomainError

__all__ = [
    "Structure",
    "StructureError",
    "SurvivalDataset",
    "GHParameters",
    "GHLikelihood",
    "apply_structure",
    "gh_hazard",
    "gh_cum_hazard",
    "log_likelihood",
]


class StructureError(ValueError):
    """Raised when a hazard structure's constraints cannot be met."""


class Structure(str, enum.Enum):
    GH = "gh"
    PH = "ph"
    AFT = "aft"
    AH = "ah"

    @classmethod
    def parse(cls, value: "Structure | str") -> "Structure":
        if isinstance(value, Structure):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown hazard structure {value!r}") from None

    @property
    def has_alpha(self) -> bool:
        """Whether time-level coefficients are free parameters."""
        return self in (Structure.GH, Structure.AH)

    @property
    def has_beta(self) -> bool:
        return self in (Structure.GH, Structure.PH, Structure.AFT)


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored survival data with hazard- and time-level designs."""

    times: np.ndarray
    status: np.ndarray
    X: np.ndarray
    Xtilde: np.ndarray
    hazard_names: tuple[str, ...] = ()
    time_names: tuple[str, ...] = ()

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        n = times.size
        status = np.asarray(self.status).ravel()
        X = np.asarray(self.X, dtype=float).reshape(n, -1) if np.size(self.X) else np.zeros((n, 0))
        Xt = np.asarray(self.Xtilde, dtype=float).reshape(n, -1) if np.size(self.Xtilde) else np.zeros((n, 0))
        if n < 1:
            raise ValueError("dataset is empty")
        if status.size != n:
            raise ValueError(f"status has length {status.size}, expected {n}")
        if not np.all(np.isfinite(times)) or np.any(times <= 0.0):
            raise ValueError("all observed times must be finite and strictly positive")
        if not np.all(np.isin(status, (0, 1))):
            raise ValueError("status must be 0 (censored) or 1 (event)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Xt))):
            raise ValueError("design matrices contain missing or non-finite values")
        hn = tuple(self.hazard_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        tn = tuple(self.time_names) or tuple(f"xt{j + 1}" for j in range(Xt.shape[1]))
        if len(hn) != X.shape[1] or len(tn) != Xt.shape[1]:
            raise ValueError("covariate names do not match design matrix widths")
        for name, value in (("times", times), ("status", status.astype(np.int8)), ("X", X), ("Xtilde", Xt)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "hazard_names", hn)
        object.__setattr__(self, "time_names", tn)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Xtilde.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @property
    def censored(self) -> int:
        return self.n - self.n_events

    def subset(self, index: Sequence[int] | np.ndarray) -> "SurvivalDataset":
        idx = np.asarray(index, dtype=int)
        return SurvivalDataset(
            self.times[idx], self.status[idx], self.X[idx], self.Xtilde[idx], self.hazard_names, self.time_names
        )

    def aft_view(self) -> "SurvivalDataset":
        """The same data with the time-level design set equal to the hazard-level one."""
        return SurvivalDataset(self.times, self.status, self.X, self.X, self.hazard_names, self.hazard_names)

    def same_outcomes(self, other: "SurvivalDataset") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.status, other.status)
            and np.array_equal(self.X, other.X)
        )


@dataclass(frozen=True, eq=False)
class GHParameters:
    """Full parameter vector ``(xi, alpha, beta)`` under a hazard structure."""

    baseline: BaselineSpec
    alpha: np.ndarray
    beta: np.ndarray
    structure: Structure = Structure.GH

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        structure = Structure.parse(self.structure)
        if structure is Structure.PH and np.any(alpha != 0.0):
            raise StructureError("PH structure requires alpha = 0")
        if structure is Structure.AH and np.any(beta != 0.0):
            raise StructureError("AH structure requires beta = 0")
        if structure is Structure.AFT and (alpha.shape != beta.shape or np.any(alpha != beta)):
            raise StructureError("AFT structure requires alpha = beta")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "structure", structure)

    @property
    def k(self) -> int:
        return free_count(self.structure, (len(self.baseline.xi), len(self.beta), len(self.alpha)))

    def free_vector(self) -> np.ndarray:
        parts = [np.asarray(self.baseline.xi)]
        if self.structure.has_alpha:
            parts.append(self.alpha)
        if self.structure.has_beta:
            parts.append(self.beta)
        return np.concatenate(parts)

    def to_dict(self) -> dict:
        return {
            "structure": self.structure.value,
            "baseline": self.baseline.to_dict(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }


def free_count(structure: Structure, dims: tuple[int, int, int]) -> int:
    r, p, q = dims
    structure = Structure.parse(structure)
    return r + (q if structure.has_alpha else 0) + (p if structure.has_beta else 0)


def apply_structure(
    structure: Structure | str,
    free_params: Sequence[float],
    dims: tuple[int, int, int],
    family: Family | str,
) -> GHParameters:
    """Embed a constrained parameter vector into a full :class:`GHParameters`.

    ``free_params`` is laid out as ``xi`` followed by ``alpha`` (GH, AH) and
    then ``beta`` (GH, PH, AFT). ``dims`` is ``(r, p, q)``.
    """
    structure = Structure.parse(structure)
    family = Family.parse(family)
    r, p, q = dims
    if r != family.arity:
        raise StructureError(f"{family.value} has {family.arity} baseline parameters, dims say {r}")
    if structure is Structure.AFT and p != q:
        raise StructureError("AFT structure needs identical time-level and hazard-level designs")
    free = np.asarray(free_params, dtype=float).ravel()
    expected = free_count(structure, dims)
    if free.size != expected:
        raise StructureError(f"{structure.value} with dims {dims} takes {expected} free parameters, got {free.size}")
    xi = free[:r]
    pos = r
    if structure.has_alpha:
        alpha = free[pos : pos + q]
        pos += q
    else:
        alpha = np.zeros(q)
    beta = free[pos : pos + p] if structure.has_beta else np.zeros(p)
    if structure is Structure.AFT:
        alpha = beta
    return GHParameters(BaselineSpec(family, tuple(xi)), alpha, beta, structure)


def _linear(design: np.ndarray, coef: np.ndarray) -> np.ndarray:
    design = np.asarray(design, dtype=float)
    coef = np.asarray(coef, dtype=float)
    if design.shape[-1] != coef.size:
        raise ValueError(f"covariate vector has {design.shape[-1]} entries, coefficients have {coef.size}")
    return design @ coef if coef.size else np.zeros(design.shape[:-1])


def gh_hazard(theta: GHParameters, t, x, xtilde):
    """``h0(t * exp(xt @ alpha)) * exp(x @ beta)``; vectorised over rows of ``x``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("hazard requires t > 0")
    ea = _linear(np.atleast_1d(xtilde), theta.alpha)
    eb = _linear(np.atleast_1d(x), theta.beta)
    return theta.baseline.hazard(t * np.exp(ea)) * np.exp(eb)


def gh_cum_hazard(theta: GHParameters, t, x, xtilde):
    """``H0(t * exp(xt @ alpha)) * exp(x @ beta - xt @ alpha)``."""
    t = np.asarray(t, dtype=float)
    ea = _linear(np.atleast_1d(xtilde), theta.alpha)
    eb = _linear(np.atleast_1d(x), theta.beta)
    return theta.baseline.cum_hazard(t * np.exp(ea)) * np.exp(eb - ea)


def _check_dims(theta: GHParameters, data: SurvivalDataset) -> None:
    if theta.alpha.size != data.q or theta.beta.size != data.p:
        raise ValueError(
            f"parameters have q={theta.alpha.size}, p={theta.beta.size}; data has q={data.q}, p={data.p}"
        )
    if theta.structure is Structure.AFT and not np.array_equal(data.X, data.Xtilde):
        raise StructureError("AFT structure requires Xtilde == X")


def log_likelihood(theta: GHParameters, data: SurvivalDataset) -> float:
    """Censored log-likelihood ``sum(delta * log h) - sum(H)``.

    Returns ``-inf`` when an observed event has zero hazard. Parameters outside
    the domain raise :class:`ParameterDomainError` when ``theta`` is built.
    """
    _check_dims(theta, data)
    ea = _linear(data.Xtilde, theta.alpha)
    eb = _linear(data.X, theta.beta)
    return _loglik_core(theta.baseline, data, ea, eb)


def _loglik_core(baseline: BaselineSpec, data: SurvivalDataset, ea: np.ndarray, eb: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        log_h0, H0 = baseline.kernel(data.times * np.exp(ea))
        events = data.status == 1
        ev = log_h0[events] + eb[events]
        if np.any(np.isneginf(ev)):
            return -math.inf
        H = H0 * np.exp(eb - ea)
        value = float(np.sum(ev) - np.sum(H))
    if math.isnan(value):
        return -math.inf
    return value


@dataclass
class GHLikelihood:
    """Log-likelihood of one (family, structure) pair as a function of a flat vector.

    ``natural`` vectors follow the :func:`apply_structure` layout. ``working``
    vectors replace the strictly positive baseline parameters by their logs and
    are what optimisers see.
    """

    data: SurvivalDataset
    family: Family
    structure: Structure
    _positive: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.structure = Structure.parse(self.structure)
        if self.structure is Structure.AFT and not np.array_equal(self.data.X, self.data.Xtilde):
            raise StructureError("AFT structure requires Xtilde == X; use SurvivalDataset.aft_view()")
        mask = np.zeros(self.k, dtype=bool)
        mask[: self.r] = self.family.positive_mask
        self._positive = mask

    @property
    def r(self) -> int:
        return self.family.arity

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.r, self.data.p, self.data.q)

    @property
    def k(self) -> int:
        return free_count(self.structure, self.dims)

    @property
    def names(self) -> list[str]:
        names = list(self.family.param_names)
        if self.structure.has_alpha:
            names += [f"alpha[{v}]" for v in self.data.time_names]
        if self.structure.has_beta:
            names += [f"beta[{v}]" for v in self.data.hazard_names]
        return names

    @property
    def positive(self) -> np.ndarray:
        return self._positive.copy()

    def to_working(self, natural: np.ndarray) -> np.ndarray:
        w = np.array(natural, dtype=float)
        w[self._positive] = np.log(w[self._positive])
        return w

    def to_natural(self, working: np.ndarray) -> np.ndarray:
        v = np.array(working, dtype=float)
        v[self._positive] = np.exp(v[self._positive])
        return v

    def params(self, natural: np.ndarray) -> GHParameters:
        return apply_structure(self.structure, natural, self.dims, self.family)

    def split(self, natural: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(xi, alpha, beta)`` with structure constraints applied."""
        natural = np.asarray(natural, dtype=float)
        r, p, q = self.dims
        xi = natural[:r]
        pos = r
        if self.structure.has_alpha:
            alpha = natural[pos : pos + q]
            pos += q
        else:
            alpha = np.zeros(q)
        beta = natural[pos : pos + p] if self.structure.has_beta else np.zeros(p)
        if self.structure is Structure.AFT:
            alpha = beta
        return xi, alpha, beta

    def loglik(self, natural: np.ndarray) -> float:
        """Log-likelihood at a natural-scale vector; ``-inf`` outside the domain."""
        xi, alpha, beta = self.split(natural)
        try:
            baseline = BaselineSpec(self.family, tuple(xi))
        except ParameterDomainError:
            return -math.inf
        ea = self.data.Xtilde @ alpha if alpha.size else np.zeros(self.data.n)
        eb = self.data.X @ beta if beta.size else np.zeros(self.data.n)
        return _loglik_core(baseline, self.data, ea, eb)

    def loglik_working(self, working: np.ndarray) -> float:
        w = np.asarray(working, dtype=float)
        if np.any(np.abs(w[self._positive]) > 700.0):
            return -math.inf
        return self.loglik(self.to_natural(w))
