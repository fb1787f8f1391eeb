"""Command-line interface: ``ghdiag fit | diagnose | profile | simulate``.

Exit codes: 0 success, 2 input error, 3 numerical failure. Diagnostic
verdicts never change the exit code.
"""

from __future__ import annotations

import functools
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from .baseline import Family
from .datasets import FIXTURES, DatasetFile, IngestionError, fixture_path, load_dataset
from .estimation import FitResult, NonConvergenceError, OptimizerConfig, compare_models, fit_mle
from .model import Structure, SurvivalDataset
from .profile import LEVEL_95, model_pni, profile_scan, write_profiles_csv
from .redundancy import DEFAULTS, bootstrap_criterion_probability, diagnose
from .simulation import ScenarioSpec, read_scenario_config, run_scenario

EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(func):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (NonConvergenceError, ArithmeticError) as exc:
            _fail(str(exc), EXIT_NUMERIC)
        except (ValueError, KeyError, IndexError, FileNotFoundError) as exc:
            _fail(str(exc), EXIT_INPUT)

    return wrapper


def _split(value: str | None) -> tuple[str, ...]:
    if not value:
        return ()
    return tuple(v.strip() for v in value.split(",") if v.strip())


def data_options(func):
    opts = [
        click.option("--fixture", type=click.Choice(sorted(FIXTURES)), help="Bundled case-study dataset."),
        click.option("--data", "data_path", type=click.Path(dir_okay=False), help="CSV file with a header row."),
        click.option("--time", "time_col", default="time", show_default=True, help="Follow-up time column."),
        click.option("--status", "status_col", default="status", show_default=True, help="Event indicator column (1=event)."),
        click.option("--hlevel", help="Comma-separated hazard-level covariates."),
        click.option("--tlevel", help="Comma-separated time-level covariates."),
        click.option("--standardize", help="Comma-separated covariates to centre and scale."),
        click.option("--time-scale", type=float, default=1.0, show_default=True, help="Divide times by this."),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


def model_options(func):
    opts = [
        click.option("--family", default="pgw", show_default=True,
                     type=click.Choice([f.value for f in Family] + ["w", "ln"], case_sensitive=False)),
        click.option("--structure", default="gh", show_default=True,
                     type=click.Choice([s.value for s in Structure], case_sensitive=False)),
        click.option("--starts", type=int, default=5, show_default=True, help="Optimizer starts."),
        click.option("--seed", type=int, default=0, show_default=True, help="Seed for all randomness."),
        click.option("--threads", type=int, default=1, show_default=True, help="Worker processes."),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


def _load(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale) -> SurvivalDataset:
    if bool(fixture) == bool(data_path):
        raise IngestionError("give exactly one of --fixture or --data")
    if fixture:
        layout = FIXTURES[fixture]
        path = fixture_path(fixture)
        hazard = _split(hlevel) or layout["hazard"]
        timecov = _split(tlevel) if tlevel is not None else layout["time"]
    else:
        path, hazard, timecov = Path(data_path), _split(hlevel), _split(tlevel)
    spec = DatasetFile(path, time_col, status_col, hazard, timecov, _split(standardize), time_scale)
    return load_dataset(spec)


def _fit(data: SurvivalDataset, family, structure, starts: int, seed: int) -> FitResult:
    structure = Structure.parse(structure)
    if structure is Structure.AFT:
        data = data.aft_view()
    return fit_mle(data, family, structure, OptimizerConfig(n_starts=starts, seed=seed))


def _write_json(payload: dict, path: str | None) -> None:
    if path:
        Path(path).write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _standard_errors(fit: FitResult) -> np.ndarray:
    try:
        cov = np.linalg.inv(fit.hessian)
        se = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        return np.full(fit.k, np.nan)
    return np.where(np.diag(cov) > 0, se, np.nan)


def _fit_table(fits: list[FitResult]) -> str:
    names = []
    for f in fits:
        names.extend(n for n in f.names if n not in names)
    seen = {n: i for i, n in enumerate(names)}
    baseline_order = ("sigma", "mu", "nu", "s", "gamma")
    group = lambda n: 2 if n.startswith("beta[") else 1 if n.startswith("alpha[") else 0
    names.sort(key=lambda n: (group(n), seen[n] if group(n) else baseline_order.index(n)))
    width = max(len(n) for n in names + ["loglik"]) + 2
    head = "".join(f"{f.label:>20}" for f in fits)
    lines = [f"{'':<{width}}{head}"]
    for name in names:
        row = f"{name:<{width}}"
        for f in fits:
            if name in f.names:
                i = f.names.index(name)
                se = _standard_errors(f)[i]
                cell = f"{f.estimate[i]:.3f}" + (f" ({se:.3f})" if math.isfinite(se) else " (NA)")
            else:
                cell = "-"
            row += f"{cell:>20}"
        lines.append(row)
    lines.append(f"{'loglik':<{width}}" + "".join(f"{f.loglik:>20.3f}" for f in fits))
    lines.append(f"{'AIC':<{width}}" + "".join(f"{f.aic:>20.3f}" for f in fits))
    return "\n".join(lines)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Fit general hazard survival models and diagnose near-redundancy."""


@main.command()
@data_options
@model_options
@click.option("--models", help="Comma-separated family-structure pairs to compare, e.g. pgw-gh,weibull-aft.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the fit(s) as JSON.")
@_guarded
def fit(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale,
        family, structure, starts, seed, threads, models, out):
    """Maximum likelihood fit; prints estimates (standard errors), loglik and AIC."""
    data = _load(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale)
    pairs = [tuple(m.rsplit("-", 1)) for m in _split(models)] or [(family, structure)]
    for pair in pairs:
        if len(pair) != 2:
            raise ValueError(f"cannot read model {'-'.join(pair)!r}; use family-structure, e.g. pgw-gh")
    fits = [_fit(data, fam, st, starts, seed) for fam, st in pairs]
    if len(fits) > 1:
        fits = compare_models(fits)
    click.echo(_fit_table(fits))
    payload = fits[0].to_dict() if len(fits) == 1 else {"models": [f.to_dict() for f in fits]}
    _write_json(payload, out)
    bad = [f.label for f in fits if not f.converged]
    if bad:
        _fail(f"fit did not converge for {', '.join(bad)}; best point written to JSON", EXIT_NUMERIC)


@main.command(name="diagnose")
@data_options
@model_options
@click.option("--M", "M", type=float, default=DEFAULTS["M"], show_default=True, help="KL threshold constant.")
@click.option("--kappa", type=float, default=DEFAULTS["kappa"], show_default=True, help="Hellinger error budget.")
@click.option("--rho", type=float, default=DEFAULTS["rho"], show_default=True, help="Censored-observation weight.")
@click.option("--k-exponent", type=click.IntRange(1, 2), default=DEFAULTS["k_exponent"], show_default=True,
              help="Power of k in the KL threshold.")
@click.option("--hessian-threshold", type=float, default=DEFAULTS["hessian_threshold"], show_default=True)
@click.option("--bootstrap", "B", type=int, default=0, show_default=True,
              help=f"Bootstrap replicates (0 skips; {DEFAULTS['B']} is the usual choice).")
@click.option("--pni/--no-pni", default=True, show_default=True, help="Also profile the regression coefficients.")
@click.option("--delta", type=float, default=3.0, show_default=True, help="PNI probe distance.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the report as JSON.")
@_guarded
def diagnose_cmd(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale,
                 family, structure, starts, seed, threads, M, kappa, rho, k_exponent, hessian_threshold,
                 B, pni, delta, out):
    """Near-redundancy screens (KL, Hellinger, Hessian) and optional PNI and bootstrap."""
    data = _load(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale)
    model = _fit(data, family, structure, starts, seed)
    report = diagnose(model, M=M, kappa=kappa, rho=rho, k_exponent=k_exponent,
                      hessian_threshold=hessian_threshold)
    if B > 0:
        boot = bootstrap_criterion_probability(
            model.data, model, B=B, seed=seed, M=M, kappa=kappa, rho=rho, k_exponent=k_exponent,
            hessian_threshold=hessian_threshold, workers=threads,
        )
        report = report.with_bootstrap(boot)
    payload = report.to_dict()
    click.echo(f"{report.model}: n={report.n}, censored={report.censored}, n_eff={report.n_eff:g}, k={report.k}")
    for line in report.verdicts():
        click.echo(line)
    if report.bootstrap:
        b = report.bootstrap
        probs = ", ".join(f"{k}={v:.3f}" for k, v in b.probabilities.items())
        note = " (unreliable: >20% failed)" if b.unreliable else ""
        click.echo(f"bootstrap B={b.B}: {probs}; {b.failures} failed{note}")
    if pni:
        result = model_pni(model, delta=delta)
        for name, flag in result.flags.items():
            word = {True: "PNI", False: "identifiable", None: "indeterminate"}[flag]
            click.echo(f"profile {name}: {word}")
        payload["pni"] = result.to_dict()
        payload["settings"]["delta"] = delta
        payload["settings"]["level_c"] = LEVEL_95
    payload["settings"]["B"] = B
    _write_json(payload, out)
    if not model.converged:
        click.echo("warning: the fit did not meet the convergence check", err=True)


@main.command()
@data_options
@model_options
@click.option("--params", help="Comma-separated parameter names (default: all).")
@click.option("--delta", type=float, default=3.0, show_default=True, help="Scan half-width.")
@click.option("--grid-points", type=int, default=41, show_default=True)
@click.option("--level", type=float, default=LEVEL_95, show_default=True, help="Likelihood-region level c.")
@click.option("--out", type=click.Path(dir_okay=False), help="CSV with columns param, psi, rel_profile.")
@_guarded
def profile(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale,
            family, structure, starts, seed, threads, params, delta, grid_points, level, out):
    """Relative profile likelihoods and practical non-identifiability flags."""
    data = _load(fixture, data_path, time_col, status_col, hlevel, tlevel, standardize, time_scale)
    model = _fit(data, family, structure, starts, seed)
    names = _split(params) or model.names
    curves = []
    for name in names:
        curve = profile_scan(None, model, name, delta=delta, points=grid_points, level=level)
        curves.append(curve)
        lo, hi = curve.region_endpoints
        fmt = lambda v: "open" if v is None else f"{v:.4g}"
        word = {True: "true", False: "false", None: "indeterminate"}[curve.pni_flag]
        click.echo(f"{name}: estimate={curve.estimate:.4g} region=[{fmt(lo)}, {fmt(hi)}] pni={word}")
    if out:
        write_profiles_csv(curves, out)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key = value scenario file.")
@click.option("--scenario", type=click.IntRange(1, 7), help="Preset scenario 1-7.")
@click.option("--n", type=int, help="Sample size.")
@click.option("--censoring", type=float, help="Target censoring rate.")
@click.option("--replicates", type=int, help="Replicates (default 50).")
@click.option("--full", is_flag=True, help="Use 250 replicates.")
@click.option("--seed", type=int, help="Seed (default 0).")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker processes.")
@click.option("--out-csv", type=click.Path(dir_okay=False))
@click.option("--out-json", type=click.Path(dir_okay=False))
@_guarded
def simulate(config_path, scenario, n, censoring, replicates, full, seed, threads, out_csv, out_json):
    """Run one simulation-study cell and print its classification table."""
    if config_path:
        spec = read_scenario_config(config_path)
    else:
        if scenario is None or n is None or censoring is None:
            raise ValueError("give --config or all of --scenario, --n and --censoring")
        spec = ScenarioSpec(scenario, n, censoring)
    overrides = {}
    if replicates is not None:
        overrides["replicates"] = replicates
    if full:
        overrides["replicates"] = 250
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        spec = ScenarioSpec(**{**_spec_fields(spec), **overrides})
    table = run_scenario(spec, workers=threads)
    click.echo(table.format())
    if out_csv:
        Path(out_csv).write_text(table.to_csv())
    if out_json:
        Path(out_json).write_text(table.to_json() + "\n")


def _spec_fields(spec: ScenarioSpec) -> dict:
    d = spec.to_dict()
    d["true_xi"] = tuple(d["true_xi"])
    return d


if __name__ == "__main__":  # pragma: no cover
    main()
