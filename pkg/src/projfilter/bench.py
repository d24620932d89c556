"""Scenario configuration and end-to-end experiments.

A scenario simulates the signal and observation once per seed, feeds the same
observation increments to every rostered filter and to the finite-difference
reference, and records parameters and residuals at every step.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import BoundaryError, ConfigError, NumericalError
from .filters import (
    FILTERS,
    PROJECTION_FILTERS,
    PROJECTIONS,
    adf_coefficients,
    cubic_sensor,
    ekf_coefficients,
    linear_model,
    make_stepper,
    projection_coefficients,
    projection_diffusion,
)
from .projection import KINDS, circle_test_sde, fit_loglog_slope, order_probe_all
from .geometry import circle
from .reference import GridDensity, fd_ks_step, grid_moments, residual
from .sde import noise_generator

OUT_ENV = "PROJFILTER_OUT"
PRESETS = ("cubic_sensor", "linear")
SWEEP_FILTERS = ("ito_jet", "ito_vector", "stratonovich", "ekf")
EXACT_MATCH = 1e-10


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = "cubic_sensor"
    epsilon: float = 0.05
    prior_mean: float = 0.0
    prior_sd: float = 1.0
    horizon: float = 1.0
    dt: float = 1e-3
    half_width: float = 8.0
    num_nodes: int = 400
    order: int = 40
    roster: tuple[str, ...] = FILTERS
    seeds: tuple[int, ...] = tuple(range(20))
    output: str | None = None
    workers: int = 1
    sweep_epsilons: tuple[float, ...] = (0.01, 0.02, 0.04, 0.07, 0.1)
    sweep_theta: tuple[float, float] = (0.0, 1.0)
    probe_kinds: tuple[str, ...] = ("ito_vector", "ito_jet")
    probe_trials: int = 100_000
    probe_exponents: tuple[int, ...] = (4, 5, 6, 7, 8, 9, 10)
    probe_seed: int = 7
    probe_substeps: int = 16
    probe_antithetic: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown model preset {self.preset!r}; expected one of {PRESETS}")
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be non-negative")
        if not (self.dt > 0 and self.horizon > 0):
            raise ConfigError("dt and horizon must be positive")
        if abs(self.steps * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ConfigError(f"horizon {self.horizon} is not an integer multiple of dt {self.dt}")
        if self.num_nodes < 100:
            raise ConfigError("grid needs at least 100 nodes")
        if not (self.half_width > 0 and self.prior_sd > 0 and self.order > 1):
            raise ConfigError("half_width, prior_sd and quadrature order must be positive")
        unknown = set(self.roster) - set(FILTERS)
        if unknown or not self.roster:
            raise ConfigError(f"unknown filters in roster: {sorted(unknown)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if set(self.probe_kinds) - set(KINDS):
            raise ConfigError(f"probe kinds must be among {KINDS}")
        if len(self.sweep_epsilons) < 2 or min(self.sweep_epsilons) <= 0:
            raise ConfigError("epsilon sweep needs at least two positive values")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    def model(self):
        if self.preset == "cubic_sensor":
            return cubic_sensor(self.epsilon)
        return linear_model()

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.output or "out")


# section.key in the TOML file -> ScenarioConfig field
_KEYS = {
    "model.preset": "preset",
    "model.epsilon": "epsilon",
    "prior.mean": "prior_mean",
    "prior.sd": "prior_sd",
    "run.horizon": "horizon",
    "run.dt": "dt",
    "run.roster": "roster",
    "run.seeds": "seeds",
    "run.workers": "workers",
    "grid.half_width": "half_width",
    "grid.nodes": "num_nodes",
    "quadrature.order": "order",
    "output.dir": "output",
    "sweep.epsilons": "sweep_epsilons",
    "sweep.theta": "sweep_theta",
    "probe.kinds": "probe_kinds",
    "probe.trials": "probe_trials",
    "probe.exponents": "probe_exponents",
    "probe.seed": "probe_seed",
    "probe.substeps": "probe_substeps",
    "probe.antithetic": "probe_antithetic",
}
CONFIG_KEYS = tuple(_KEYS)


def _coerce(name: str, value):
    kind = {f.name: f.type for f in fields(ScenarioConfig)}[name]
    try:
        if kind.startswith("tuple"):
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            inner = float if "float" in kind else int if "int" in kind else str
            if name == "seeds" and len(value) == 1 and isinstance(value[0], str) and ":" in value[0]:
                lo, hi = value[0].split(":")
                return tuple(range(int(lo), int(hi)))
            return tuple(inner(v) for v in value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return None if value is None else str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for {name}") from exc


def config_from_mapping(data: dict, overrides: dict | None = None) -> ScenarioConfig:
    """Build a config from nested TOML sections plus flat ``section.key`` overrides."""
    values = {}
    for section, body in data.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {section!r} must be a section")
        for key, value in body.items():
            dotted = f"{section}.{key}"
            if dotted not in _KEYS:
                raise ConfigError(f"unknown config key {dotted!r}")
            values[_KEYS[dotted]] = _coerce(_KEYS[dotted], value)
    for dotted, value in (overrides or {}).items():
        if dotted not in _KEYS:
            raise ConfigError(f"unknown config key {dotted!r}")
        values[_KEYS[dotted]] = _coerce(_KEYS[dotted], value)
    return ScenarioConfig(**values)


def load_config(path, overrides: dict | None = None) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_mapping(data, overrides)


# ----------------------------------------------------------------------------
# Scenario runs


def simulate_observations(config: ScenarioConfig, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Signal path and observation increments, ``(times, x, dY)``.

    The signal starts from a draw of the prior; signal and observation noise
    come from separate substreams of the seed.
    """
    model = config.model()
    n, dt = config.steps, config.dt
    times = dt * np.arange(n + 1)
    signal_rng, obs_rng = noise_generator(seed, 0), noise_generator(seed, 1)
    dW = np.sqrt(dt) * signal_rng.standard_normal(n)
    dV = np.sqrt(dt) * obs_rng.standard_normal(n)
    x = np.empty(n + 1)
    x[0] = config.prior_mean + config.prior_sd * noise_generator(seed, 2).standard_normal()
    dY = np.empty(n)
    for k in range(n):
        xk = x[k : k + 1]
        dY[k] = model.b(xk, times[k])[0] * dt + dV[k]
        x[k + 1] = x[k] + model.f(xk, times[k])[0] * dt + model.sigma(xk, times[k])[0] * dW[k]
    return times, x, dY


def increment_checksum(dY: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(dY, dtype="<f8").tobytes()).hexdigest()


@dataclass
class RunResult:
    seed: int
    times: np.ndarray
    signal: np.ndarray
    params: dict[str, np.ndarray]  # (steps + 1, 2) mean and sd, NaN after truncation
    res_l2: dict[str, np.ndarray]
    res_hell: dict[str, np.ndarray]
    ref_mean: np.ndarray
    ref_sd: np.ndarray
    truncated: dict[str, int | None]  # first step whose output is missing
    dy_sha256: str
    flags: dict[str, str] = field(default_factory=dict)


def run_seed(config: ScenarioConfig, seed: int) -> RunResult:
    model = config.model()
    times, x, dY = simulate_observations(config, seed)
    n = config.steps
    theta0 = np.array([config.prior_mean, config.prior_sd])
    steppers = {name: make_stepper(name, model, config.order) for name in config.roster}
    params = {name: np.full((n + 1, 2), np.nan) for name in config.roster}
    res_l2 = {name: np.full(n + 1, np.nan) for name in config.roster}
    res_hell = {name: np.full(n + 1, np.nan) for name in config.roster}
    truncated: dict[str, int | None] = {name: None for name in config.roster}
    flags: dict[str, str] = {}
    ref_mean, ref_sd = np.empty(n + 1), np.empty(n + 1)

    p = GridDensity.from_family(theta0, config.half_width, config.num_nodes)
    current = {name: theta0.copy() for name in config.roster}

    def record(k):
        m, v = grid_moments(p)
        ref_mean[k], ref_sd[k] = m, math.sqrt(v)
        for name, theta in current.items():
            params[name][k] = theta
            res_l2[name][k] = residual(p, theta, "direct")
            res_hell[name][k] = residual(p, theta, "hellinger")

    record(0)
    for k in range(n):
        t = times[k]
        p = fd_ks_step(model, p, t, config.dt, dY[k])
        for name in list(current):
            try:
                current[name] = steppers[name](current[name], t, config.dt, dY[k])
            except (BoundaryError, NumericalError) as exc:
                truncated[name] = k + 1
                flags[name] = f"{type(exc).__name__}: {exc}"
                del current[name]
        record(k + 1)
    return RunResult(seed, times, x, params, res_l2, res_hell, ref_mean, ref_sd, truncated,
                     increment_checksum(dY), flags)


def _fmt(v) -> str:
    return "%.17g" % v


def result_csv(result: RunResult, roster: Sequence[str]) -> str:
    """Wide per-seed table; the first line records the increment checksum."""
    buf = io.StringIO()
    buf.write(f"# dy_sha256={result.dy_sha256}\n")
    w = csv.writer(buf, lineterminator="\n")
    header = ["t"]
    for name in roster:
        header += [f"{name}.mean", f"{name}.sd", f"{name}.res_l2", f"{name}.res_hell"]
    w.writerow(header + ["ref.mean", "ref.sd"])
    for k, t in enumerate(result.times):
        row = [_fmt(t)]
        for name in roster:
            row += [_fmt(result.params[name][k, 0]), _fmt(result.params[name][k, 1]),
                    _fmt(result.res_l2[name][k]), _fmt(result.res_hell[name][k])]
        w.writerow(row + [_fmt(result.ref_mean[k]), _fmt(result.ref_sd[k])])
    return buf.getvalue()


@dataclass
class ScenarioSummary:
    """Seed averages; a truncated series drops out of the average after truncation."""

    times: np.ndarray
    params: dict[str, np.ndarray]
    res_l2: dict[str, np.ndarray]
    res_hell: dict[str, np.ndarray]
    ref_mean: np.ndarray
    ref_sd: np.ndarray
    seeds_used: dict[str, np.ndarray]

    def at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def _nanmean(stack):
    with np.errstate(invalid="ignore", divide="ignore"):
        count = np.sum(~np.isnan(stack), axis=0)
        total = np.nansum(stack, axis=0)
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def summarize(results: Sequence[RunResult], roster: Sequence[str]) -> ScenarioSummary:
    times = results[0].times
    return ScenarioSummary(
        times,
        {n: _nanmean(np.stack([r.params[n] for r in results])) for n in roster},
        {n: _nanmean(np.stack([r.res_l2[n] for r in results])) for n in roster},
        {n: _nanmean(np.stack([r.res_hell[n] for r in results])) for n in roster},
        np.mean([r.ref_mean for r in results], axis=0),
        np.mean([r.ref_sd for r in results], axis=0),
        {n: np.sum([~np.isnan(r.res_l2[n]) for r in results], axis=0) for n in roster},
    )


def summary_csv(summary: ScenarioSummary, roster: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t"]
    for name in roster:
        header += [f"{name}.mean", f"{name}.sd", f"{name}.res_l2", f"{name}.res_hell", f"{name}.seeds"]
    w.writerow(header + ["ref.mean", "ref.sd"])
    for k, t in enumerate(summary.times):
        row = [_fmt(t)]
        for name in roster:
            row += [_fmt(summary.params[name][k, 0]), _fmt(summary.params[name][k, 1]),
                    _fmt(summary.res_l2[name][k]), _fmt(summary.res_hell[name][k]),
                    str(int(summary.seeds_used[name][k]))]
        w.writerow(row + [_fmt(summary.ref_mean[k]), _fmt(summary.ref_sd[k])])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def run_scenario(config: ScenarioConfig, write: bool = True) -> tuple[list[RunResult], ScenarioSummary]:
    """Run every seed (in worker processes if ``config.workers > 1``) and summarize."""
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        results = [run_seed(config, s) for s in config.seeds]
    summary = summarize(results, config.roster)
    if write:
        out = config.output_dir()
        for r in results:
            _write(out / f"run_seed{r.seed}.csv", result_csv(r, config.roster))
        _write(out / "summary.csv", summary_csv(summary, config.roster))
    return results, summary


# ----------------------------------------------------------------------------
# Epsilon sweep


@dataclass
class SweepResult:
    epsilons: np.ndarray
    theta: np.ndarray
    drifts: dict[str, np.ndarray]  # filter -> (len(eps), 2), including "adf"
    differences: dict[str, np.ndarray]  # filter -> |A_filter - A_adf|
    slopes: dict[str, float]  # NaN where every difference is an exact match
    exact_match: dict[str, bool]


def hellinger_drifts(epsilon: float, theta, order: int = 40) -> dict[str, np.ndarray]:
    """Itô drift of every Hellinger-mode filter and of the ADF and EKF at ``theta``."""
    model = cubic_sensor(epsilon)
    theta = np.asarray(theta, dtype=float)
    out = {kind: projection_coefficients(model, theta, 0.0, kind, "hellinger", order=order)[0] for kind in PROJECTIONS}
    out["adf"] = adf_coefficients(model, theta, order=order)[0]
    out["ekf"] = ekf_coefficients(model, theta)[0]
    return out


def epsilon_sweep(config: ScenarioConfig, epsilons: Sequence[float] | None = None, write: bool = True) -> SweepResult:
    eps = np.asarray(epsilons if epsilons is not None else config.sweep_epsilons, dtype=float)
    theta = np.asarray(config.sweep_theta, dtype=float)
    table = [hellinger_drifts(e, theta, config.order) for e in eps]
    names = ("adf",) + SWEEP_FILTERS
    drifts = {n: np.array([row[n] for row in table]) for n in names}
    diffs = {n: np.linalg.norm(drifts[n] - drifts["adf"], axis=1) for n in SWEEP_FILTERS}
    slopes, exact = {}, {}
    positive = eps > 0
    for n in SWEEP_FILTERS:
        d = diffs[n][positive]
        exact[n] = bool(np.all(d <= EXACT_MATCH))
        slopes[n] = float("nan") if exact[n] or np.any(d <= 0) else fit_loglog_slope(eps[positive], d)
    result = SweepResult(eps, theta, drifts, diffs, slopes, exact)
    if write:
        _write(config.output_dir() / "epsilon_sweep.csv", sweep_csv(result))
    return result


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon"] + [f"{n}.A_mean" for n in result.drifts] + [f"{n}.A_sd" for n in result.drifts]
               + [f"{n}.diff_adf" for n in result.differences])
    for i, e in enumerate(result.epsilons):
        w.writerow([_fmt(e)] + [_fmt(result.drifts[n][i, 0]) for n in result.drifts]
                   + [_fmt(result.drifts[n][i, 1]) for n in result.drifts]
                   + [_fmt(result.differences[n][i]) for n in result.differences])
    for n, s in result.slopes.items():
        w.writerow([f"# slope {n}", _fmt(s), "exact_match" if result.exact_match[n] else ""])
    return buf.getvalue()


# ----------------------------------------------------------------------------
# Order probes


@dataclass
class ProbeTable:
    rows: list[dict]  # one per (kind, criterion)
    results: dict  # (kind, criterion) -> ProbeResult

    def slope(self, kind: str, criterion: str) -> float:
        return self.results[(kind, criterion)].slope


def probe_orders(config: ScenarioConfig, write: bool = True) -> ProbeTable:
    """Order probes of the projected circle SDE started at ``(1, 0)``."""
    sde, e = circle_test_sde(), circle(1.0)
    horizons = [2.0**-k for k in config.probe_exponents]
    rows, results = [], {}
    for kind in config.probe_kinds:
        table = order_probe_all(sde, e, kind, horizons, config.probe_trials, config.probe_seed, [0.0],
                                substeps=config.probe_substeps, antithetic=config.probe_antithetic)
        for crit, res in table.items():
            results[(kind, crit)] = res
            rows.append({"kind": kind, "criterion": crit, "slope": res.slope,
                         "norm_slope": res.extra.get("norm_slope", float("nan")),
                         "degenerate": res.degenerate, "discarded": int(res.discarded.sum())})
    out = ProbeTable(rows, results)
    if write:
        _write(config.output_dir() / "probe_orders.csv", probe_csv(out))
    return out


def probe_csv(table: ProbeTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "criterion", "horizon", "error", "std_error", "slope", "norm_slope", "degenerate"])
    for row in table.rows:
        res = table.results[(row["kind"], row["criterion"])]
        for h, err, se in zip(res.horizons, res.errors, res.std_errors):
            w.writerow([row["kind"], row["criterion"], _fmt(h), _fmt(err), _fmt(se), _fmt(row["slope"]),
                        _fmt(row["norm_slope"]), str(row["degenerate"]).lower()])
    return buf.getvalue()


# ----------------------------------------------------------------------------
# Dry-run checks


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def validate(config: ScenarioConfig) -> list[Check]:
    """Cheap invariant checks on the configured model, grid and quadrature."""
    from .family import family_metric

    model = config.model()
    checks = []
    theta0 = np.array([config.prior_mean, config.prior_sd])

    p = GridDensity.from_family(theta0, config.half_width, config.num_nodes)
    edge = max(p.values[:2].max(), p.values[-2:].max())
    checks.append(Check("prior inside grid", bool(edge < 1e-10), f"boundary density {edge:.3g}"))

    for mode in ("direct", "hellinger"):
        B = [projection_diffusion(model, theta0, 0.0, mode, order=config.order)]
        for kind in PROJECTIONS:
            B.append(projection_coefficients(model, theta0, 0.0, kind, mode, order=config.order)[1])
        same = all(np.array_equal(B[0], b) for b in B[1:])
        checks.append(Check(f"shared diffusion ({mode})", same, f"B = {B[0]}"))

        g = family_metric(theta0, mode, order=config.order)
        g2 = family_metric(theta0, mode, order=2 * config.order)
        change = float(np.abs(g.metric - g2.metric).max())
        checks.append(Check(f"quadrature converged ({mode})", change < 1e-9, f"metric change on doubling {change:.3g}"))

    grid_mass = p.mass
    checks.append(Check("prior mass on grid", abs(grid_mass - 1) < 1e-12, f"mass {grid_mass!r}"))

    try:
        q = fd_ks_step(model, p, 0.0, config.dt, 0.0)
        checks.append(Check("reference step", True, f"mass {q.mass!r}"))
    except NumericalError as exc:
        checks.append(Check("reference step", False, str(exc)))

    for name in config.roster:
        try:
            th = make_stepper(name, model, config.order)(theta0, 0.0, config.dt, 0.0)
            checks.append(Check(f"step {name}", bool(np.all(np.isfinite(th)) and th[1] > 0), f"theta {th}"))
        except NumericalError as exc:
            checks.append(Check(f"step {name}", False, str(exc)))
    return checks

