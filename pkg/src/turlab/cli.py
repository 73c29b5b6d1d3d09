"""Command-line experiment runner.

Verbs: ``run``, ``sweep``, ``validate`` and ``list-models``.  Exit codes:
0 all checks pass, 1 some inequality check fails beyond its band,
2 configuration or validation error, 3 internal numerical failure.
The default output directory comes from ``TURLAB_OUT_DIR`` (else ``turlab-out``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import config as cfgmod
from .config import ConfigError

OUT_ENV = "TURLAB_OUT_DIR"
DEFAULT_OUT = "turlab-out"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalFailure(RuntimeError):
    pass


def check(name, lhs, rhs, sigma_band=0.0, margin=None):
    """Check record; ``pass`` iff ``margin >= -sigma_band`` with ``margin = lhs - rhs`` by default."""
    lhs = float(lhs)
    rhs = float(rhs)
    margin = lhs - rhs if margin is None else float(margin)
    sigma_band = float(sigma_band)
    return {"name": name, "lhs": lhs, "rhs": rhs, "margin": margin, "sigma_band": sigma_band,
            "pass": bool(margin >= -sigma_band)}


def _units(cfg):
    from .ensembles import Units

    return Units(k=cfg["k"], h=cfg["h"], c=cfg["c"])


# -- experiment runners; each returns (checks, results, data_files) --------------------

def _run_inference(cfg, parallel):
    from .ensembles import make_model
    from .inference import estimator_study

    model = make_model(cfg["model"], **cfgmod.model_params(cfg))
    rep = estimator_study(model, cfg["theta"], cfg["sample_size"], cfg["replicas"], seed=cfg["seed"],
                          units=_units(cfg), n_boot=cfg["n_boot"], variance_method=cfg["variance_method"],
                          parallel=parallel)
    n = cfg["n_sigma"]
    checks = [
        check("cramer_rao_bound", rep.cr_ratio, 1.0, n * rep.cr_sigma),
        check("uncertainty_product", rep.uncertainty_product, 1.0, n / 3.0 * rep.epsilon_mc),
    ]
    results = {k: v for k, v in rep.to_dict().items() if k != "sampler_info"}
    results["sampler_info"] = dict(sorted(rep.sampler_info.items()))
    return checks, results, {}


def _environment(cfg):
    from . import fluctuation as fl

    env = cfg["env"]
    if env == "gaussian":
        return fl.gaussian_environment(cfg["E0"], cfg["sigma"], cfg["theta"])
    if env == "ideal_gas":
        return fl.ideal_gas_environment(cfg["N"], cfg["d"], cfg["theta"])
    if env == "power_law":
        return fl.power_law_environment(cfg["nu"], cfg["theta"])
    return fl.volume_environment(cfg["nu"], cfg["n_particles"], cfg["theta"], cfg["pressure"])


def _run_fluctuation(cfg, parallel):
    from .fluctuation import covariance_identity_check, sample_macrostates

    units = _units(cfg)
    sample = sample_macrostates(_environment(cfg), cfg["sample_size"], seed=cfg["seed"], units=units)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = covariance_identity_check(sample, n_boot=cfg["n_boot"], seed=cfg["seed"], n_sigma=cfg["n_sigma"])
    checks = [check("cauchy_schwarz", rep.product, abs(rep.cov), 1e-12 * abs(rep.cov))]
    if rep.identity_asserted:
        # equality check: margin is minus the absolute deviation
        checks.append(check("covariance_identity", -rep.cov, units.k, cfg["n_sigma"] * rep.cov_sigma,
                            margin=-abs(rep.cov + units.k)))
        checks.append(check("uncertainty_relation", rep.product, units.k, cfg["n_sigma"] * rep.product_sigma))
    results = {"cov": rep.cov, "delta_E": rep.delta_E, "delta_beta": rep.delta_beta, "product": rep.product,
               "cov_sigma": rep.cov_sigma, "product_sigma": rep.product_sigma,
               "boundary_term_vanishes": rep.identity_asserted, "diagnostics": rep.diagnostics}
    return checks, results, {}


def _run_kinematics(cfg, parallel):
    from . import clock as ck

    units = _units(cfg)
    c = units.c
    vs = np.linspace(-0.999 * c, 0.999 * c, cfg["points"] + (cfg["points"] % 2 == 1))
    vs = vs[vs != 0][: cfg["points"]]
    err_t = err_d = err_w = 0.0
    for v in vs:
        kin = ck.Kinematics(cfg["m0"], float(v), units)
        nu0 = kin.rest_frequency
        err_t = max(err_t, abs(ck.clock_frequency(kin) * ck.wave_frequency(kin) / nu0**2 - 1.0))
        err_d = max(err_d, abs(ck.phase_velocity(kin) * v / c**2 - 1.0))
        err_w = max(err_w, abs(ck.de_broglie_wavelength(kin) * abs(kin.momentum) / units.h - 1.0))
    tol = cfg["tolerance"]
    checks = [check(name, tol, err) for name, err in
              (("transform_identity", err_t), ("dispersion_identity", err_d), ("wavelength_identity", err_w))]
    kin = ck.Kinematics(cfg["m0"], cfg["v"], units)
    results = {"velocities": len(vs), "v": cfg["v"], "gamma": kin.gamma, "nu_clock": ck.clock_frequency(kin),
               "nu_wave": ck.wave_frequency(kin), "momentum": kin.momentum}
    if cfg["v"] != 0:
        results["phase_velocity"] = ck.phase_velocity(kin)
        results["wavelength"] = ck.de_broglie_wavelength(kin)
    return checks, results, {}


def _run_chain(cfg, parallel):
    from . import clock as ck
    from .ensembles import make_model

    units = _units(cfg)
    if cfg["source"] == "gaussian-beta":
        source = ck.GaussianBetaSpec(cfg["theta_mean"], cfg["delta_E"], cfg["product"], cfg["E_mean"])
        theta = None
    else:
        source = make_model(cfg["model"], **cfgmod.model_params(cfg))
        theta = cfg["theta"]
    process = ck.StaticDisorder() if cfg["process"] == "static" else ck.MeanReverting(cfg["correlation_time"])
    rep = ck.chain_verify(source, theta, process_model=process, horizon=cfg["horizon"], replicas=cfg["replicas"],
                          seed=cfg["seed"], units=units, n_boot=cfg["n_boot"], points=cfg["points"],
                          allow_invalid=cfg["allow_invalid"], n_sigma=cfg["n_sigma"])
    checks = [check(r.name, r.lhs, r.rhs, r.band, margin=r.margin) for r in rep.records]
    results = rep.to_dict()
    results.pop("records")
    files = {}
    if cfg["write_csv"]:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "check", "lhs", "rhs", "margin", "sigma_band"])
        for name in ck.CHAIN_RECORDS:
            s = rep.sweep[name]
            for i, t in enumerate(rep.sweep["t"]):
                writer.writerow([repr(float(t)), name, repr(float(s["lhs"][i])), repr(float(s["rhs"][i])),
                                 repr(float(s["margin"][i])), repr(float(s["band"][i]))])
        files["sweep.csv"] = buf.getvalue()
    return checks, results, files


def _run_gibbs(cfg, parallel):
    from .ensembles import make_model, mean_energy
    from .inference import gibbs_boltzmann_gap

    units = _units(cfg)
    model = make_model(cfg["model"], **cfgmod.model_params(cfg))
    E = cfg["energy"] if cfg["energy"] is not None else mean_energy(model, cfg["theta"])
    closed = gibbs_boltzmann_gap(model, E, units, "auto")
    numeric = gibbs_boltzmann_gap(model, E, units, "numeric")
    a = model.alpha
    expected = a / (a - 1.0)
    tol = cfg["tolerance"]
    checks = [
        check("closed_form_ratio", 1e-10, abs(closed["ratio"] / expected - 1.0)),
        check("quadrature_ratio", tol, abs(numeric["ratio"] / expected - 1.0)),
    ]
    results = {"energy": E, "alpha": a, "expected_ratio": expected, **closed,
               "numeric_ratio": numeric["ratio"]}
    return checks, results, {}


def _run_taylor(cfg, parallel):
    from .clock import ClockProcess, taylor_remainder_check

    process = ClockProcess(cfg["mean_freq"], cfg["rel_spread"], replicas=cfg["replicas"], seed=cfg["seed"])
    rep = taylor_remainder_check(process, C_max=cfg["C_max"])
    bound = rep.C_max * rep.scale
    checks = [check("taylor_mean_remainder", bound, rep.mean_remainder),
              check("taylor_spread_remainder", bound, rep.spread_remainder)]
    results = {k: v for k, v in vars(rep).items()}
    return checks, results, {}


def _run_exchange(cfg, parallel):
    from .fluctuation import finite_bath_subsystem_variance, subsystem_exchange_sim, write_trajectory_csv

    traj = subsystem_exchange_sim(cfg["m"], cfg["n"], cfg["E_total"], cfg["steps"], cfg["exchange_rate"],
                                  seed=cfg["seed"], record_every=cfg["record_every"], units=_units(cfg))
    err = abs(traj.final_sum - cfg["E_total"]) / cfg["E_total"]
    checks = [check("energy_conservation", cfg["tolerance"], err)]
    if cfg["n"] > 1:
        checks.append(check("timescale_hierarchy", traj.tau_fl, traj.tau_sub))
    results = {"tau_sub": traj.tau_sub, "tau_fl": traj.tau_fl, "relative_energy_error": err,
               "subsystem_variance": float(np.var(traj.subsystem_energies[:, 0])),
               "predicted_subsystem_variance": finite_bath_subsystem_variance(cfg["m"], cfg["n"], cfg["E_total"]),
               "temperature_variance": float(np.var(traj.temperature_estimates[:, 0])),
               "records": int(traj.times.size)}
    files = {}
    if cfg["write_csv"]:
        buf = io.StringIO()
        _write_traj(traj, buf)
        files["trajectory.csv"] = buf.getvalue()
    return checks, results, files


def _write_traj(traj, fh):
    T = traj.temperature_estimates
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["step", "subsystem_id", "energy", "T_hat"])
    for i, step in enumerate(traj.times):
        for j in range(traj.m):
            writer.writerow([int(step), j, repr(float(traj.subsystem_energies[i, j])), repr(float(T[i, j]))])


RUNNERS = {
    "tur-inference": _run_inference,
    "tur-fluctuation": _run_fluctuation,
    "clock-kinematics": _run_kinematics,
    "chain": _run_chain,
    "gibbs-boltzmann": _run_gibbs,
    "taylor": _run_taylor,
    "exchange": _run_exchange,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def execute(cfg: dict, parallel: int | None = None) -> tuple[dict, dict]:
    """Run a normalized config; returns the report and extra data files (name -> text)."""
    from .fluctuation import NormalizationError
    from .inference import SaturationError

    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            checks, results, files = RUNNERS[cfg["experiment"]](cfg, parallel)
    except ConfigError:
        raise
    except (SaturationError, NormalizationError) as exc:
        raise NumericalFailure(f"{type(exc).__name__}: {exc}") from None
    except (ValueError, TypeError) as exc:
        # model-level validation that the config layer could not anticipate
        raise ConfigError(str(exc)) from None
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"{type(exc).__name__}: {exc}") from None
    report = {
        "config": cfg,
        "checks": checks,
        "results": _jsonable(results),
        "passed": all(c["pass"] for c in checks),
        "seed": cfg["seed"],
        "version": __version__,
        "wall_time": time.perf_counter() - start,
    }
    return report, files


def canonical_json(report: dict) -> str:
    """Deterministic serialization used for the report file."""
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def _safe_path(out_dir: Path, filename: str) -> Path:
    target = (out_dir / filename).resolve()
    root = out_dir.resolve()
    if target.parent != root:
        raise ConfigError(f"output file {filename!r} would leave the output directory")
    return target


def _write_outputs(out_dir: Path, stem: str, report: dict, files: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = _safe_path(out_dir, f"{stem}.json")
    path.write_text(canonical_json(report))
    for name, text in files.items():
        _safe_path(out_dir, f"{stem}_{name}").write_text(text)
    return path


TABLE_HEADER = f"{'check':<28} {'lhs':>15} {'rhs':>15} {'margin':>15} {'result':>6}"


def format_table(checks) -> str:
    """Fixed-format summary: one row per check."""
    lines = [TABLE_HEADER, " ".join("-" * w for w in (28, 15, 15, 15, 6))]
    for c in checks:
        lines.append(f"{c['name']:<28} {c['lhs']:>15.6e} {c['rhs']:>15.6e} {c['margin']:>15.6e} "
                     f"{'PASS' if c['pass'] else 'FAIL':>6}")
    return "\n".join(lines) + "\n"


def format_checks_csv(checks) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["check", "lhs", "rhs", "margin", "sigma_band", "pass"])
    for c in checks:
        writer.writerow([c["name"], repr(c["lhs"]), repr(c["rhs"]), repr(c["margin"]), repr(c["sigma_band"]),
                         c["pass"]])
    return buf.getvalue()


def _load_config(path, seed):
    raw = cfgmod.load(path)
    if seed is not None:
        raw["seed"] = seed
    return cfgmod.normalize(raw)


def _out_dir(out):
    return Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


common_options = [
    click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                 help="Config file (flat key = value or JSON)."),
    click.option("--seed", type=int, default=None, help="Override the config seed."),
    click.option("--out", type=click.Path(file_okay=False), default=None,
                 help=f"Output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})."),
    click.option("--format", "fmt", type=click.Choice(["json", "csv", "table"]), default="table",
                 help="Format of the summary printed to stdout."),
    click.option("--parallel", type=int, default=None, help="Worker threads for replicas or sweep points."),
]


def with_common(func):
    for option in reversed(common_options):
        func = option(func)
    return func


@click.group()
@click.version_option(__version__, prog_name="turlab")
def main():
    """Numerical laboratory for energy-temperature and time-energy uncertainty relations."""


@main.command()
@with_common
def run(config_path, seed, out, fmt, parallel):
    """Run one experiment and write its JSON report."""
    try:
        cfg = _load_config(config_path, seed)
        report, files = execute(cfg, parallel)
        stem = cfg["name"] or cfg["experiment"]
        path = _write_outputs(_out_dir(out), stem, report, files)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, exc)
    except NumericalFailure as exc:
        _fail(EXIT_NUMERIC, exc)
    if fmt == "json":
        click.echo(canonical_json(report), nl=False)
    elif fmt == "csv":
        click.echo(format_checks_csv(report["checks"]), nl=False)
    else:
        click.echo(format_table(report["checks"]), nl=False)
        click.echo(f"report: {path}")
    sys.exit(EXIT_OK if report["passed"] else EXIT_FAIL)


def _parse_values(text):
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise ConfigError("field 'values': empty list")
    return values


PLOT_SCRIPT = '''"""Plot a turlab sweep (generated; needs matplotlib)."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{results}"
with open(path) as fh:
    rows = list(csv.DictReader(fh))
x = [float(r["value"]) for r in rows]
for key in {metrics!r}:
    y = [abs(float(r[key])) for r in rows if r.get(key) not in (None, "")]
    if len(y) == len(x):
        plt.loglog(x, y, "o-", label=key)
plt.xlabel("{axis}")
plt.legend()
plt.savefig("{stem}.png", dpi=150)
'''


@main.command()
@with_common
@click.option("--axis", required=True, help="Numeric config field to vary.")
@click.option("--values", "values_text", required=True, help="Comma-separated values.")
def sweep(config_path, seed, out, fmt, parallel, axis, values_text):
    """Run one experiment per value of AXIS and aggregate the checks into a CSV."""
    try:
        base = cfgmod.load(config_path)
        if seed is not None:
            base["seed"] = seed
        values = _parse_values(values_text)
        probe = cfgmod.normalize(base)
        schema = {**cfgmod.COMMON, **cfgmod.EXPERIMENTS[probe["experiment"]]}
        if axis not in schema or schema[axis][0] not in (int, float):
            raise ConfigError(f"field '{axis}': not a numeric field of experiment '{probe['experiment']}'")
    except ConfigError as exc:
        _fail(EXIT_CONFIG, exc)

    def one(value):
        # a value that fails validation is recorded like a failed run
        try:
            cfg = cfgmod.normalize({**base, axis: value})
            report, _ = execute(cfg, None)
            return cfg[axis], report, None
        except (ConfigError, NumericalFailure) as exc:
            return value, None, exc

    if parallel and parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(one, values))
    else:
        outcomes = [one(v) for v in values]

    worst = EXIT_OK
    rows = []
    result_rows = []
    metric_keys = []
    for value, report, exc in outcomes:
        if exc is not None:
            code = EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_NUMERIC
            worst = max(worst, code)
            click.echo(f"error at {axis}={value}: {exc}", err=True)
            rows.append([value, "error", "", "", "", "", False])
            continue
        if not report["passed"]:
            worst = max(worst, EXIT_FAIL)
        for c in report["checks"]:
            rows.append([value, c["name"], repr(c["lhs"]), repr(c["rhs"]), repr(c["margin"]),
                         repr(c["sigma_band"]), c["pass"]])
        scalars = {k: v for k, v in report["results"].items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
        for k in scalars:
            if k not in metric_keys:
                metric_keys.append(k)
        result_rows.append((value, scalars))

    stem = f"{probe['name'] or probe['experiment']}_sweep_{axis}"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "check", "lhs", "rhs", "margin", "sigma_band", "pass"])
    writer.writerows(rows)
    res = io.StringIO()
    rwriter = csv.writer(res, lineterminator="\n")
    rwriter.writerow(["value"] + metric_keys)
    for value, scalars in result_rows:
        rwriter.writerow([value] + [repr(float(scalars[k])) if k in scalars else "" for k in metric_keys])
    out_dir = _out_dir(out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _safe_path(out_dir, f"{stem}.csv").write_text(buf.getvalue())
        _safe_path(out_dir, f"{stem}_results.csv").write_text(res.getvalue())
        _safe_path(out_dir, f"plot_{stem}.py").write_text(
            PLOT_SCRIPT.format(results=f"{stem}_results.csv", metrics=metric_keys, axis=axis, stem=stem))
    except ConfigError as exc:
        _fail(EXIT_CONFIG, exc)
    if fmt == "csv":
        click.echo(buf.getvalue(), nl=False)
    elif fmt == "json":
        click.echo(json.dumps({"axis": axis, "rows": rows}, sort_keys=True, indent=2))
    else:
        click.echo(f"{'value':>12} {'check':<28} {'margin':>15} {'result':>6}")
        for r in rows:
            margin = f"{float(r[4]):>15.6e}" if r[4] != "" else f"{'':>15}"
            click.echo(f"{r[0]!s:>12} {r[1]:<28} {margin} {'PASS' if r[6] else 'FAIL':>6}")
    sys.exit(worst)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None)
def validate(config_path, seed):
    """Check a config without running it; prints the normalized form."""
    try:
        cfg = _load_config(config_path, seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, exc)
    click.echo(json.dumps(cfg, sort_keys=True, indent=2))
    sys.exit(EXIT_OK)


@main.command("list-models")
def list_models():
    """List ensemble models, fluctuation environments and experiments."""
    click.echo("ensemble models:")
    click.echo("  ideal_gas    N, d        continuous, Gamma(dN/2)")
    click.echo("  harmonic     N           continuous, Gamma(N)")
    click.echo("  two_level    N, gap      discrete, bounded")
    click.echo("  ising        N, J, field discrete, bounded (periodic chain)")
    click.echo("fluctuation environments: gaussian, ideal_gas, power_law, volume")
    click.echo("experiments: " + ", ".join(sorted(cfgmod.EXPERIMENTS)))


if __name__ == "__main__":  # pragma: no cover
    main()
