"""Batch command-line front-end.

Subcommands:
    run <config-or-name> [--out DIR] [--seed N]   execute one scenario
    batch <config...> [--out DIR] [--jobs N]      run scenarios in parallel
    validate <config-or-name>                     parse + validate only
    list-scenarios                                show bundled scenarios

Configs are JSON files; bundled scenario names (see list-scenarios) are
accepted wherever a path is.  Outputs are written to
<out>/<scenario-name>/: CSV series (12 significant digits) plus a
report.json carrying the scenario echo, the cost-comparison triple
(controlled, u=0, u=1), convergence diagnostics, and the file manifest.

Output directory precedence: --out flag, then the config's "out_dir",
then $ANTHRACTL_OUT_DIR, then ./anthractl-out.

Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .grid import GridSpec, ScalarField, build_grid
from .host import (
    ConstantForcing,
    ControlSignal,
    DivisionGuardError,
    HostState,
    ModelParams,
    ProportionalForcing,
    SampledPath,
    SeasonalForcing,
    Trajectory,
    integrate_ode,
)
from .ode_control import (
    BangRegimeError,
    CostSpec,
    ShootingError,
    eval_cost_JT,
    shoot_p0,
)
from .pde import (
    EigenConvergenceError,
    FieldPath,
    SolverBreakdownError,
    assemble_operator,
    integrate_pde,
)
from .pde_control import (
    LinearizationPoint,
    PdeCostSpec,
    RiccatiBlowupError,
    closed_loop_linearized,
    eval_cost_JT3,
    forward_backward_sweep,
    integrate_controlled,
    integrate_linearized,
    integrate_riccati,
    linearize,
)
from .severity import (
    AsiCoefficients,
    DoddCoefficients,
    DuthieCoefficients,
    SeverityForcing,
    WeatherSeries,
)

__all__ = ["ConfigError", "ScenarioConfig", "RunReport", "parse_config", "execute", "main"]

_MODES = ("simulate-ode", "optimize-ode", "simulate-pde", "riccati-pde",
          "sweep-pde", "forecast")

_NUMERICAL_ERRORS = (ShootingError, BangRegimeError, RiccatiBlowupError,
                     SolverBreakdownError, EigenConvergenceError,
                     DivisionGuardError, ArithmeticError, np.linalg.LinAlgError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Scenario config failed validation; message names the offending key."""


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: name, mode, seed, raw data, and its base dir
    (used to resolve relative file references such as weather CSVs)."""

    name: str
    mode: str
    seed: int
    data: dict = field(repr=False)
    base_dir: str = "."

    def out_dir_hint(self):
        return self.data.get("out_dir")


@dataclass(frozen=True)
class RunReport:
    """Outcome of one scenario run: cost triple, diagnostics, and the
    list of files written (paths relative to the scenario directory)."""

    name: str
    mode: str
    seed: int
    costs: dict
    diagnostics: dict
    outputs: tuple
    out_dir: str


def _scenario_dir():
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")


def bundled_scenarios() -> dict:
    """Map of bundled scenario name -> config path."""
    found = {}
    sdir = _scenario_dir()
    if os.path.isdir(sdir):
        for fn in sorted(os.listdir(sdir)):
            if fn.endswith(".json"):
                found[fn[:-5]] = os.path.join(sdir, fn)
    return found


def resolve_config_path(ref: str) -> str:
    """Interpret ref as a file path, else as a bundled scenario name."""
    if os.path.exists(ref):
        return ref
    bundled = bundled_scenarios()
    if ref in bundled:
        return bundled[ref]
    raise FileNotFoundError(f"no config file or bundled scenario named {ref!r} "
                            f"(bundled: {', '.join(sorted(bundled)) or 'none'})")


def _need(data: dict, key: str, where: str):
    if key not in data:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return data[key]


def _num(data: dict, key: str, where: str, default=None, minimum=None,
         maximum=None, strict_min=False):
    if key not in data:
        if default is None:
            raise ConfigError(f"{where}: missing required numeric key {key!r}")
        return float(default)
    try:
        v = float(data[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected a number, got {data[key]!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{where}.{key}: must be finite")
    if minimum is not None and (v <= minimum if strict_min else v < minimum):
        op = ">" if strict_min else ">="
        raise ConfigError(f"{where}.{key}: must be {op} {minimum}, got {v}")
    if maximum is not None and v > maximum:
        raise ConfigError(f"{where}.{key}: must be <= {maximum}, got {v}")
    return v


def parse_config(path: str) -> ScenarioConfig:
    """Load and validate a scenario config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    mode = _need(data, "mode", path)
    if mode not in _MODES:
        raise ConfigError(f"{path}.mode: must be one of {', '.join(_MODES)}; got {mode!r}")
    name = data.get("name") or os.path.splitext(os.path.basename(path))[0]
    seed = int(data.get("seed", 0))
    cfg = ScenarioConfig(name=str(name), mode=mode, seed=seed, data=data,
                         base_dir=os.path.dirname(os.path.abspath(path)) or ".")
    _validate_mode(cfg)
    return cfg


# --- forcing builders ------------------------------------------------------

def _build_host_forcing(spec, where: str, default=None):
    if spec is None:
        if default is None:
            raise ConfigError(f"{where}: missing forcing spec")
        return ConstantForcing(default)
    if isinstance(spec, (int, float)):
        return ConstantForcing(float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a number or an object with 'kind'")
    kind = _need(spec, "kind", where)
    try:
        if kind == "constant":
            return ConstantForcing(_num(spec, "value", where, minimum=0.0))
        if kind == "seasonal":
            return SeasonalForcing(
                a=_num(spec, "a", where, minimum=0.0),
                b=_num(spec, "b", where, minimum=0.0, maximum=1.0),
                c=_num(spec, "c", where, minimum=0.0, strict_min=True, maximum=1.0),
            )
        if kind == "proportional":
            return ProportionalForcing(_num(spec, "coeff", where, minimum=0.0))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}.kind: unknown forcing kind {kind!r}")


def _build_host_params(cfg: ScenarioConfig, alpha_override=None) -> ModelParams:
    host = _need(cfg.data, "host", cfg.name)
    if not isinstance(host, dict):
        raise ConfigError(f"{cfg.name}.host: expected an object")
    where = f"{cfg.name}.host"
    theta2 = _num(host, "theta2", where, default=1.0, minimum=0.0, strict_min=True, maximum=1.0)
    alpha = alpha_override if alpha_override is not None else \
        _build_host_forcing(host.get("alpha"), where + ".alpha")
    # gamma defaults to a rate proportional to theta (it must vanish at 0)
    gamma = ProportionalForcing(0.1) if host.get("gamma") is None else \
        _build_host_forcing(host.get("gamma"), where + ".gamma")
    try:
        return ModelParams(
            theta1=_num(host, "theta1", where, minimum=0.0, maximum=1.0),
            theta2=theta2,
            v_max=_num(host, "v_max", where, default=1.0, minimum=0.0, strict_min=True),
            alpha=alpha,
            beta=_build_host_forcing(host.get("beta"), where + ".beta", default=0.5),
            gamma=gamma,
            eta=_build_host_forcing(host.get("eta"), where + ".eta", default=theta2),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build_initial_state(cfg: ScenarioConfig) -> HostState:
    init = _need(cfg.data, "initial", cfg.name)
    where = f"{cfg.name}.initial"
    try:
        return HostState(
            theta=_num(init, "theta", where),
            v=_num(init, "v", where, default=0.5),
            v_r=_num(init, "v_r", where, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _time_grid(cfg: ScenarioConfig):
    tblock = _need(cfg.data, "time", cfg.name)
    where = f"{cfg.name}.time"
    T = _num(tblock, "T", where, minimum=0.0, strict_min=True)
    dt = _num(tblock, "dt", where, minimum=0.0, strict_min=True)
    if dt > T:
        raise ConfigError(f"{where}: dt must not exceed T")
    return T, dt


def _build_pde_alpha(spec, centers, where: str) -> np.ndarray:
    x = centers[:, 0]
    if isinstance(spec, (int, float)):
        return np.full(x.shape, float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a number or an object with 'kind'")
    kind = _need(spec, "kind", where)
    if kind == "constant":
        v = _num(spec, "value", where, minimum=0.0)
        return np.full(x.shape, v)
    if kind == "cells":
        vals = np.asarray(spec.get("values", []), dtype=float)
        if vals.shape != x.shape:
            raise ConfigError(f"{where}.values: expected {x.shape[0]} entries, got {vals.size}")
        if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
            raise ConfigError(f"{where}.values: must be finite and nonnegative")
        return vals
    if kind == "burst-profile":
        # smooth burst shape along the first axis, scaled to a peak value
        a = _num(spec, "a", where, default=4.0, minimum=0.0)
        b = _num(spec, "b", where, default=0.75)
        c = _num(spec, "c", where, default=0.2, minimum=0.0, strict_min=True)
        scale = _num(spec, "scale", where, default=1.0, minimum=0.0)
        q = a * (x - b) ** 2 * (1.0 - np.cos(2.0 * np.pi * x / c))
        peak = float(np.max(q))
        return scale * q / peak if peak > 0.0 else np.zeros_like(q)
    raise ConfigError(f"{where}.kind: unknown alpha kind {kind!r}")


def _build_grid(cfg: ScenarioConfig):
    gblock = _need(cfg.data, "grid", cfg.name)
    where = f"{cfg.name}.grid"
    extents = gblock.get("extents")
    resolution = gblock.get("resolution")
    if not isinstance(extents, (list, tuple)) or not isinstance(resolution, (list, tuple)):
        raise ConfigError(f"{where}: extents and resolution must be arrays")
    diffusion = gblock.get("diffusion", 1.0)
    try:
        return build_grid(GridSpec(tuple(extents), tuple(resolution)), A_spec=diffusion)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build_pde_cost(cfg: ScenarioConfig) -> PdeCostSpec:
    cblock = _need(cfg.data, "cost", cfg.name)
    where = f"{cfg.name}.cost"
    try:
        return PdeCostSpec(
            k1=_num(cblock, "k1", where, minimum=0.0, strict_min=True),
            k2=_num(cblock, "k2", where, default=0.0, minimum=0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build_severity(cfg: ScenarioConfig) -> SeverityForcing:
    sblock = _need(cfg.data, "severity", cfg.name)
    where = f"{cfg.name}.severity"
    model = _need(sblock, "model", where)
    coeffs = sblock.get("coefficients", {})
    if not isinstance(coeffs, dict):
        raise ConfigError(f"{where}.coefficients: expected an object")
    weather_ref = _need(cfg.data, "weather", cfg.name)
    weather_path = weather_ref if os.path.isabs(weather_ref) else \
        os.path.join(cfg.base_dir, weather_ref)
    if not os.path.exists(weather_path):
        packaged = os.path.join(_scenario_dir(), weather_ref)
        if os.path.exists(packaged):
            weather_path = packaged
    try:
        series = WeatherSeries.from_csv(weather_path)
    except ValueError as exc:
        raise ConfigError(f"{cfg.name}.weather: {weather_path}: {exc}") from None
    try:
        if model == "asi":
            co = AsiCoefficients(**coeffs)
        elif model == "dodd":
            co = DoddCoefficients(**coeffs)
        elif model == "duthie":
            co = DuthieCoefficients(**coeffs)
        else:
            raise ConfigError(f"{where}.model: unknown model {model!r}")
        return SeverityForcing(
            series=series,
            model=model,
            coefficients=co,
            scale=_num(sblock, "scale", where, default=1.0, minimum=0.0),
            incubation=_num(sblock, "incubation", where, default=1.0),
        )
    except TypeError as exc:
        raise ConfigError(f"{where}.coefficients: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _validate_mode(cfg: ScenarioConfig):
    """Mode-specific structural validation (builders raise ConfigError)."""
    mode = cfg.data["mode"]
    if mode in ("simulate-ode", "optimize-ode", "forecast"):
        if mode == "forecast":
            _build_severity(cfg)
            _build_host_params(cfg, alpha_override=ConstantForcing(0.0))
        else:
            _build_host_params(cfg)
        _build_initial_state(cfg)
        _time_grid(cfg)
        cost = cfg.data.get("cost", {})
        _num(cost, "k", f"{cfg.name}.cost", default=1.0, minimum=0.0, strict_min=True)
        if mode != "optimize-ode":
            u = _num(cfg.data.get("control", {}), "u", f"{cfg.name}.control",
                     default=0.0, minimum=0.0, maximum=1.0)
            theta1 = _num(_need(cfg.data, "host", cfg.name), "theta1", cfg.name,
                          minimum=0.0, maximum=1.0)
            if 1.0 - theta1 * u <= 0.0:
                raise ConfigError(f"{cfg.name}: 1 - theta1*u must stay positive")
    elif mode in ("simulate-pde", "riccati-pde", "sweep-pde"):
        grid, _ = _build_grid(cfg)
        theta1 = _num(cfg.data, "theta1", cfg.name, minimum=0.0, maximum=1.0)
        _build_pde_alpha(_need(cfg.data, "alpha", cfg.name), grid.centers,
                         f"{cfg.name}.alpha")
        init = _need(cfg.data, "initial", cfg.name)
        _num(init, "theta", f"{cfg.name}.initial", minimum=0.0)
        _time_grid(cfg)
        if mode == "simulate-pde":
            u = _num(cfg.data.get("control", {}), "u", f"{cfg.name}.control",
                     default=0.0, minimum=0.0, maximum=1.0)
            if 1.0 - theta1 * u <= 0.0:
                raise ConfigError(f"{cfg.name}: 1 - theta1*u must stay positive")
            _num(cfg.data.get("cost", {"k1": 1.0}), "k1", f"{cfg.name}.cost",
                 default=1.0, minimum=0.0, strict_min=True)
        else:
            _build_pde_cost(cfg)
        if mode == "riccati-pde":
            lin = _need(cfg.data, "linearization", cfg.name)
            _num(lin, "epsilon", f"{cfg.name}.linearization", minimum=0.0, strict_min=True)
            if theta1 <= 0.0:
                raise ConfigError(f"{cfg.name}.theta1: must be positive for the "
                                  f"feedback offset")
        if mode == "sweep-pde":
            sw = cfg.data.get("sweep", {})
            _num(sw, "relax", f"{cfg.name}.sweep", default=0.5, minimum=0.0,
                 strict_min=True, maximum=1.0)
            if int(sw.get("max_iter", 100)) < 1:
                raise ConfigError(f"{cfg.name}.sweep.max_iter: must be >= 1")
    else:  # pragma: no cover - mode already checked in parse_config
        raise ConfigError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# output writers
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return _fmt(v)


def _write_csv(path: str, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _write_field_path_csv(path: str, fp: FieldPath):
    """(t, cell, value) rows for a sampled field path."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,cell,value\n")
        for i, t in enumerate(fp.times):
            for j, v in enumerate(fp.values[i]):
                fh.write(f"{_fmt(t)},{j},{_fmt(v)}\n")


def _write_cost_csv(path: str, costs: dict):
    _write_csv(path, ("label", "cost"),
               [("controlled", costs["controlled"]),
                ("u_zero", costs["u_zero"]),
                ("u_one", costs["u_one"])])


def _cost_triple(controlled: float, u_zero: float, u_one: float) -> dict:
    return {
        "controlled": float(controlled),
        "u_zero": float(u_zero),
        "u_one": float(u_one),
        "controlled_is_best": bool(controlled <= min(u_zero, u_one) + 1e-9),
    }


def _write_report(out_dir: str, report: RunReport):
    payload = {
        "name": report.name,
        "mode": report.mode,
        "seed": report.seed,
        "costs": report.costs,
        "diagnostics": report.diagnostics,
        "outputs": list(report.outputs),
        "version": __version__,
    }
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# mode runners
# --------------------------------------------------------------------------

def _host_cost_for_control(params, cost, x0, T, dt, u_values, times) -> float:
    """Integrate the host model under a sampled control and evaluate J_T."""
    u = ControlSignal(times=times, values=u_values)
    traj = integrate_ode(params, u, x0, t0=0.0, T=T, dt=dt)
    theta = SampledPath(times=traj.times, values=traj.theta)
    return eval_cost_JT(u, theta, cost, dt)


def _run_ode_like(cfg: ScenarioConfig, out_dir: str, alpha_override=None,
                  extra_outputs=(), extra_diag=None) -> RunReport:
    params = _build_host_params(cfg, alpha_override=alpha_override)
    x0 = _build_initial_state(cfg)
    T, dt = _time_grid(cfg)
    k = _num(cfg.data.get("cost", {}), "k", f"{cfg.name}.cost", default=1.0,
             minimum=0.0, strict_min=True)
    cost = CostSpec(k=k)
    times = np.linspace(0.0, T, int(round(T / dt)) + 1)
    diag = dict(extra_diag or {})
    outputs = list(extra_outputs)

    if cfg.mode == "optimize-ode":
        tol = float(cfg.data.get("shooting", {}).get("tol", 1e-8))
        max_iter = int(cfg.data.get("shooting", {}).get("max_iter", 100))
        sol = shoot_p0(x0.theta, params, cost, T=T, dt=dt, tol=tol, max_iter=max_iter)
        u_values = np.clip(sol.control.values, 0.0, 1.0)
        diag.update({
            "p0": sol.p0,
            "shooting_residual": sol.residual,
            "shooting_iterations": sol.iterations,
        })
    else:
        u_const = _num(cfg.data.get("control", {}), "u", f"{cfg.name}.control",
                       default=0.0, minimum=0.0, maximum=1.0)
        u_values = np.full(times.shape, u_const)

    u = ControlSignal(times=times, values=u_values)
    traj = integrate_ode(params, u, x0, t0=0.0, T=T, dt=dt)
    theta = SampledPath(times=traj.times, values=traj.theta)
    J = eval_cost_JT(u, theta, cost, dt)
    J0 = _host_cost_for_control(params, cost, x0, T, dt, np.zeros(times.shape), times)
    J1 = _host_cost_for_control(params, cost, x0, T, dt, np.ones(times.shape), times)

    rows = zip(traj.times, traj.theta, traj.v, traj.v_r, u_values)
    if cfg.mode == "optimize-ode":
        p_vals = sol.adjoint_path.values
        rows = zip(traj.times, traj.theta, traj.v, traj.v_r, u_values, p_vals)
        _write_csv(os.path.join(out_dir, "ode_series.csv"),
                   ("t", "theta", "v", "v_r", "u", "p"), rows)
        diag["theta_T_controlled"] = float(traj.theta[-1])
    else:
        _write_csv(os.path.join(out_dir, "ode_series.csv"),
                   ("t", "theta", "v", "v_r", "u"), rows)
        diag["theta_T"] = float(traj.theta[-1])
    outputs.append("ode_series.csv")

    costs = _cost_triple(J, J0, J1)
    _write_cost_csv(os.path.join(out_dir, "cost_comparison.csv"), costs)
    outputs.append("cost_comparison.csv")
    return RunReport(name=cfg.name, mode=cfg.mode, seed=cfg.seed, costs=costs,
                     diagnostics=diag, outputs=tuple(outputs), out_dir=out_dir)


def _run_forecast(cfg: ScenarioConfig, out_dir: str) -> RunReport:
    forcing = _build_severity(cfg)
    T, dt = _time_grid(cfg)
    times = np.linspace(0.0, T, int(round(T / dt)) + 1)
    alphas = np.array([forcing(t) for t in times])
    _write_csv(os.path.join(out_dir, "forecast_series.csv"), ("t", "alpha"),
               zip(times, alphas))
    diag = {
        "severity_model": forcing.model,
        "alpha_max": float(np.max(alphas)),
        "alpha_mean": float(np.mean(alphas)),
    }
    return _run_ode_like(cfg, out_dir, alpha_override=forcing,
                         extra_outputs=("forecast_series.csv",), extra_diag=diag)


def _run_simulate_pde(cfg: ScenarioConfig, out_dir: str) -> RunReport:
    grid, A = _build_grid(cfg)
    theta1 = _num(cfg.data, "theta1", cfg.name, minimum=0.0, maximum=1.0)
    alpha = _build_pde_alpha(cfg.data["alpha"], grid.centers, f"{cfg.name}.alpha")
    theta0 = ScalarField.constant(grid, _num(cfg.data["initial"], "theta",
                                             f"{cfg.name}.initial", minimum=0.0))
    T, dt = _time_grid(cfg)
    store_every = int(cfg.data.get("store_every", 1))
    u_const = _num(cfg.data.get("control", {}), "u", f"{cfg.name}.control",
                   default=0.0, minimum=0.0, maximum=1.0)
    k1 = _num(cfg.data.get("cost", {"k1": 1.0}), "k1", f"{cfg.name}.cost",
              default=1.0, minimum=0.0, strict_min=True)
    k2 = _num(cfg.data.get("cost", {}), "k2", f"{cfg.name}.cost", default=0.0,
              minimum=0.0)
    cost = PdeCostSpec(k1=k1, k2=k2)

    def run_const(u_val):
        L = assemble_operator(grid, A, alpha, u_val, theta1, reaction="full")
        path = integrate_pde(theta0, L, alpha, T, dt, store_every=store_every)
        u_path = FieldPath(path.times, np.full(path.values.shape, u_val))
        # cost on the stored grid; with store_every=1 this is the dt grid
        step = float(path.times[1] - path.times[0]) if path.n_times > 1 else dt
        return path, eval_cost_JT3(path, u_path, cost, grid, step)

    path, J = run_const(u_const)
    _, J0 = run_const(0.0) if u_const != 0.0 else (path, J)
    _, J1 = run_const(1.0) if u_const != 1.0 else (path, J)

    snap = os.path.join(out_dir, "pde_snapshots.csv")
    dim = grid.dimension
    with open(snap, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,cell," + ("x," if dim == 1 else "x,y,") + "theta\n")
        for i, t in enumerate(path.times):
            for j in range(grid.n_cells):
                coords = ",".join(_fmt(c) for c in grid.centers[j])
                fh.write(f"{_fmt(t)},{j},{coords},{_fmt(path.values[i, j])}\n")

    costs = _cost_triple(J, J0, J1)
    _write_cost_csv(os.path.join(out_dir, "cost_comparison.csv"), costs)
    diag = {
        "theta_final_min": float(np.min(path.values[-1])),
        "theta_final_max": float(np.max(path.values[-1])),
        "control": u_const,
    }
    return RunReport(name=cfg.name, mode=cfg.mode, seed=cfg.seed, costs=costs,
                     diagnostics=diag,
                     outputs=("pde_snapshots.csv", "cost_comparison.csv"),
                     out_dir=out_dir)


def _run_riccati_pde(cfg: ScenarioConfig, out_dir: str) -> RunReport:
    grid, A = _build_grid(cfg)
    theta1 = _num(cfg.data, "theta1", cfg.name, minimum=0.0, maximum=1.0)
    alpha = _build_pde_alpha(cfg.data["alpha"], grid.centers, f"{cfg.name}.alpha")
    theta0 = ScalarField.constant(grid, _num(cfg.data["initial"], "theta",
                                             f"{cfg.name}.initial", minimum=0.0))
    T, dt = _time_grid(cfg)
    cost = _build_pde_cost(cfg)
    eps = LinearizationPoint(_num(cfg.data["linearization"], "epsilon",
                                  f"{cfg.name}.linearization", minimum=0.0,
                                  strict_min=True))

    L1, b = linearize(alpha, eps, theta1, grid, A)
    P_path = integrate_riccati(L1, b, cost, T=T, dt=dt)
    theta_path, u_path = closed_loop_linearized(theta0, L1, b, P_path, cost, eps,
                                                theta1, alpha, T, dt)
    J = eval_cost_JT3(theta_path, u_path, cost, grid, dt)

    def const_cost(u_val):
        up = FieldPath(theta_path.times,
                       np.full(theta_path.values.shape, u_val))
        th = integrate_linearized(theta0, L1, b, up, alpha, T, dt)
        return eval_cost_JT3(th, up, cost, grid, dt)

    costs = _cost_triple(J, const_cost(0.0), const_cost(1.0))

    _write_field_path_csv(os.path.join(out_dir, "theta_path.csv"), theta_path)
    _write_field_path_csv(os.path.join(out_dir, "u_path.csv"), u_path)
    diag_rows = []
    for i in range(P_path.times.shape[0]):
        P = P_path.matrices[i]
        eigs = np.linalg.eigvalsh(P)
        diag_rows.append((P_path.times[i], float(np.trace(P)),
                          float(eigs[0]), float(eigs[-1])))
    _write_csv(os.path.join(out_dir, "riccati_diagnostics.csv"),
               ("s", "trace", "eig_min", "eig_max"), diag_rows)
    _write_cost_csv(os.path.join(out_dir, "cost_comparison.csv"), costs)

    diag = {
        "P_final_trace": float(np.trace(P_path.matrices[-1])),
        "P_final_eig_min": float(np.linalg.eigvalsh(P_path.matrices[-1])[0]),
        "u_min": float(np.min(u_path.values)),
        "u_max": float(np.max(u_path.values)),
    }
    return RunReport(name=cfg.name, mode=cfg.mode, seed=cfg.seed, costs=costs,
                     diagnostics=diag,
                     outputs=("theta_path.csv", "u_path.csv",
                              "riccati_diagnostics.csv", "cost_comparison.csv"),
                     out_dir=out_dir)


def _run_sweep_pde(cfg: ScenarioConfig, out_dir: str) -> RunReport:
    grid, A = _build_grid(cfg)
    theta1 = _num(cfg.data, "theta1", cfg.name, minimum=0.0, maximum=1.0)
    alpha = _build_pde_alpha(cfg.data["alpha"], grid.centers, f"{cfg.name}.alpha")
    theta0 = ScalarField.constant(grid, _num(cfg.data["initial"], "theta",
                                             f"{cfg.name}.initial", minimum=0.0))
    T, dt = _time_grid(cfg)
    cost = _build_pde_cost(cfg)
    sw = cfg.data.get("sweep", {})
    relax = _num(sw, "relax", f"{cfg.name}.sweep", default=0.5, minimum=0.0,
                 strict_min=True, maximum=1.0)
    max_iter = int(sw.get("max_iter", 100))

    res = forward_backward_sweep(theta0, grid, A, alpha, cost, T, dt,
                                 theta1=theta1, relax=relax, max_iter=max_iter)
    J = float(res.cost_history[-1])

    def const_cost(u_val):
        up = FieldPath(res.u_path.times, np.full(res.u_path.values.shape, u_val))
        th = integrate_controlled(theta0, grid, A, alpha, up, theta1, T, dt)
        return eval_cost_JT3(th, up, cost, grid, dt)

    costs = _cost_triple(J, const_cost(0.0), const_cost(1.0))

    _write_field_path_csv(os.path.join(out_dir, "u_path.csv"), res.u_path)
    _write_field_path_csv(os.path.join(out_dir, "theta_path.csv"), res.theta_path)
    _write_field_path_csv(os.path.join(out_dir, "adjoint_path.csv"), res.adjoint_path)
    _write_csv(os.path.join(out_dir, "cost_history.csv"), ("iteration", "cost"),
               list(enumerate(res.cost_history)))
    _write_cost_csv(os.path.join(out_dir, "cost_comparison.csv"), costs)

    diag = {
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "u_max": float(np.max(res.u_path.values)),
    }
    return RunReport(name=cfg.name, mode=cfg.mode, seed=cfg.seed, costs=costs,
                     diagnostics=diag,
                     outputs=("u_path.csv", "theta_path.csv", "adjoint_path.csv",
                              "cost_history.csv", "cost_comparison.csv"),
                     out_dir=out_dir)


_RUNNERS = {
    "simulate-ode": _run_ode_like,
    "optimize-ode": _run_ode_like,
    "forecast": _run_forecast,
    "simulate-pde": _run_simulate_pde,
    "riccati-pde": _run_riccati_pde,
    "sweep-pde": _run_sweep_pde,
}


def execute(cfg: ScenarioConfig, out_root: str) -> RunReport:
    """Run one validated scenario; outputs go to <out_root>/<name>/."""
    out_dir = os.path.join(out_root, cfg.name)
    os.makedirs(out_dir, exist_ok=True)
    report = _RUNNERS[cfg.mode](cfg, out_dir)
    report = RunReport(name=report.name, mode=report.mode, seed=report.seed,
                       costs=report.costs, diagnostics=report.diagnostics,
                       outputs=report.outputs + ("report.json",),
                       out_dir=out_dir)
    _write_report(out_dir, report)
    for fn in report.outputs:
        if not os.path.exists(os.path.join(out_dir, fn)):  # pragma: no cover
            raise OSError(f"expected output file missing: {fn}")
    return report


# --------------------------------------------------------------------------
# command-line entry points
# --------------------------------------------------------------------------

def _resolve_out_root(args, cfg: ScenarioConfig | None = None) -> str:
    if getattr(args, "out", None):
        return args.out
    if cfg is not None and cfg.out_dir_hint():
        return cfg.out_dir_hint()
    env = os.environ.get("ANTHRACTL_OUT_DIR")
    if env:
        return env
    return os.path.join(os.getcwd(), "anthractl-out")


def _load(ref: str, seed_override=None) -> ScenarioConfig:
    cfg = parse_config(resolve_config_path(ref))
    if seed_override is not None:
        cfg = ScenarioConfig(name=cfg.name, mode=cfg.mode, seed=int(seed_override),
                             data=cfg.data, base_dir=cfg.base_dir)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args.config, args.seed)
    out_root = _resolve_out_root(args, cfg)
    report = execute(cfg, out_root)
    c = report.costs
    print(f"{report.name} [{report.mode}] -> {report.out_dir}")
    print(f"  cost controlled={_fmt(c['controlled'])} u_zero={_fmt(c['u_zero'])} "
          f"u_one={_fmt(c['u_one'])} best={'controlled' if c['controlled_is_best'] else 'constant'}")
    for key in sorted(report.diagnostics):
        print(f"  {key}={report.diagnostics[key]}")
    return EXIT_OK


def _cmd_batch(args) -> int:
    cfgs = [_load(ref, args.seed) for ref in args.configs]
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError("batch scenarios must have distinct names "
                          f"(got {', '.join(names)})")
    out_root = _resolve_out_root(args)
    failures = []

    def worker(cfg):
        try:
            return execute(cfg, out_root)
        except Exception as exc:  # collected and reported per scenario
            return exc

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(worker, cfgs))
    for cfg, res in zip(cfgs, results):
        if isinstance(res, Exception):
            failures.append((cfg.name, res))
            print(f"{cfg.name}: FAILED: {res}", file=sys.stderr)
        else:
            c = res.costs
            print(f"{cfg.name} [{cfg.mode}] -> {res.out_dir} "
                  f"controlled={_fmt(c['controlled'])}")
    if failures:
        exc = failures[0][1]
        if isinstance(exc, ConfigError):
            return EXIT_CONFIG
        if isinstance(exc, _NUMERICAL_ERRORS):
            return EXIT_NUMERICAL
        return EXIT_IO
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    print(f"OK: {cfg.name} ({cfg.mode})")
    return EXIT_OK


def _cmd_list(args) -> int:
    bundled = bundled_scenarios()
    if not bundled:
        print("no bundled scenarios found")
        return EXIT_OK
    for name, path in bundled.items():
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
            desc = data.get("description", "")
            print(f"{name:16s} {data.get('mode', '?'):13s} {desc}")
        except (OSError, json.JSONDecodeError) as exc:  # pragma: no cover
            print(f"{name:16s} (unreadable: {exc})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="anthractl",
        description="Disease-control solvers: within-host ODE optimal control, "
                    "spatial reaction-diffusion control, severity forecasting.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario config")
    p_run.add_argument("config", help="config path or bundled scenario name")
    p_run.add_argument("--out", help="output root directory")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.set_defaults(fn=_cmd_run)

    p_batch = sub.add_parser("batch", help="run several scenarios in parallel")
    p_batch.add_argument("configs", nargs="+", help="config paths or bundled names")
    p_batch.add_argument("--out", help="output root directory")
    p_batch.add_argument("--jobs", type=int, default=2, help="worker threads")
    p_batch.add_argument("--seed", type=int, default=None, help="override config seeds")
    p_batch.set_defaults(fn=_cmd_batch)

    p_val = sub.add_parser("validate", help="validate a config without running it")
    p_val.add_argument("config", help="config path or bundled scenario name")
    p_val.set_defaults(fn=_cmd_validate)

    p_list = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p_list.set_defaults(fn=_cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
