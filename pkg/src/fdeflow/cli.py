"""Experiment orchestration: flat-file configs, pipelines, and the verify suite.

Configs are INI-style key=value files with section headers (no external
parser dependencies). All randomness flows from the single master seed
through named sub-streams, and identical config plus seed reproduces CSV
outputs byte for byte (wall-clock timings live only in the JSON sidecars).

Exit codes: 0 all assertions pass, 1 assertion failures, 2 config or
environment errors, 3 solver divergence.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracles
from .errors import FdeflowError, InvalidArgumentError, PicardDivergedError
from .fde import export_solution, solve_global
from .fixtures import FIXTURES, Fixture, get_fixture
from .girsanov import (assemble_weak_solution, bmo_diagnostic, build_measure_change,
                       check_z_invariance, export_weak_solution)
from .grid import build_uniform_grid, sample_ensemble
from .portfolio import (export_portfolio_results, solve_portfolio,
                        verify_martingale_optimality)
from .regression import polynomial_basis, quantile_linear_basis

PROBLEMS = ("fbsde", "qbsde-weak", "portfolio", "verify-suite")
LOCK_NAME = ".fdeflow.lock"

# absolute slack added to per-step drift bounds; guards the exact-null case
# where the control variate leaves only second-order noise
_DRIFT_ATOL = 5e-5


class ConfigError(FdeflowError):
    """Config parse or validation failure (exit code 2)."""


@dataclass
class Assertion:
    name: str
    value: float
    bound: str
    passed: bool


@dataclass
class RunReport:
    problem: str
    seed: int
    assertions: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def to_json(self) -> dict:
        return {
            "problem": self.problem,
            "seed": self.seed,
            "assertions": [
                {"name": a.name, "value": float(a.value), "bound": a.bound,
                 "passed": bool(a.passed)} for a in self.assertions],
            "outputs": [str(p) for p in self.outputs],
            "wall_clock": {k: float(v) for k, v in self.wall_clock.items()},
            "config": self.config_echo,
        }


@dataclass
class ExperimentConfig:
    problem: str
    seed: int = 20260808
    num_paths: int | None = None
    out_dir: str = "out"
    fixture: str | None = None
    fixture_params: dict = field(default_factory=dict)
    T: float | None = None
    K: int | None = None
    c4: float | None = None
    tol: float = 1e-4
    max_iter: int = 50
    basis_kind: str | None = None
    basis_degree: int | None = None
    exploration_radius: float = 2.2
    exploration_floor: float = 1.0
    clip_y: bool = True
    force: bool = False
    export_paths: int = 200
    quiet: bool = False
    market: dict = field(default_factory=dict)

    def echo(self) -> dict:
        out = {
            "problem": self.problem, "seed": self.seed, "num_paths": self.num_paths,
            "out": self.out_dir, "fixture": self.fixture,
            "fixture_params": self.fixture_params, "T": self.T, "K": self.K,
            "c4": self.c4, "tol": self.tol, "max_iter": self.max_iter,
            "basis_kind": self.basis_kind, "basis_degree": self.basis_degree,
            "exploration_radius": self.exploration_radius,
            "exploration_floor": self.exploration_floor, "clip_y": self.clip_y,
            "export_paths": self.export_paths, "market": self.market,
        }
        return {k: v for k, v in out.items() if v is not None}


def substream_seed(master: int, label: str) -> int:
    """Deterministic named sub-seed of the master seed."""
    return (int(master) * 1_000_003 + zlib.crc32(label.encode("utf-8"))) % (2 ** 62)


def _parse_bool(raw: str, where: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def load_config(path) -> ExperimentConfig:
    """Parse a flat key=value config file with section headers."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    def need(section, key):
        if not parser.has_option(section, key):
            raise ConfigError(f"missing required field [{section}] {key}")
        return parser.get(section, key)

    def opt(section, key, cast, default=None):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        if cast is bool:
            return _parse_bool(raw, f"[{section}] {key}")
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc

    problem = need("run", "problem").strip()
    if problem not in PROBLEMS:
        raise ConfigError(f"[run] problem must be one of {PROBLEMS}, got {problem!r}")
    cfg = ExperimentConfig(
        problem=problem,
        seed=opt("run", "seed", int, 20260808),
        num_paths=opt("run", "num_paths", int),
        out_dir=opt("run", "out", str, "out"),
        T=opt("grid", "T", float),
        K=opt("grid", "K", int),
        c4=opt("grid", "c4", float),
        tol=opt("solver", "tol", float, 1e-4),
        max_iter=opt("solver", "max_iter", int, 50),
        basis_kind=opt("solver", "basis_kind", str),
        basis_degree=opt("solver", "basis_degree", int),
        exploration_radius=opt("solver", "exploration_radius", float, 2.2),
        exploration_floor=opt("solver", "exploration_floor", float, 1.0),
        clip_y=opt("solver", "clip_y", bool, True),
        force=opt("solver", "force", bool, False),
        export_paths=opt("output", "export_paths", int, 200),
        quiet=opt("output", "quiet", bool, False),
    )
    if problem in ("fbsde", "qbsde-weak"):
        cfg.fixture = need("coefficients", "fixture").strip()
        if cfg.fixture not in FIXTURES:
            raise ConfigError(f"[coefficients] fixture: unknown fixture {cfg.fixture!r}")
        for key in parser.options("coefficients"):
            if key != "fixture":
                cfg.fixture_params[key] = float(parser.get("coefficients", key))
    elif problem == "portfolio":
        if not parser.has_section("market"):
            raise ConfigError("missing required section [market]")
        for key in ("gamma", "mu_s", "sigma_bar_s"):
            if not parser.has_option("market", key):
                raise ConfigError(f"missing required field [market] {key}")
        for key in parser.options("market"):
            raw = parser.get("market", key)
            if key == "endowment":
                cfg.market[key] = raw.strip()
            else:
                try:
                    cfg.market[key] = float(raw)
                except ValueError as exc:
                    raise ConfigError(f"[market] {key}: {exc}") from exc
    if not np.isfinite(cfg.tol) or cfg.tol <= 0:
        raise ConfigError(f"[solver] tol must be positive and finite, got {cfg.tol}")
    return cfg


def _basis_for(cfg: ExperimentConfig, fixture: Fixture):
    if cfg.basis_kind is None and cfg.basis_degree is None:
        return fixture.basis
    kind = cfg.basis_kind or fixture.basis.kind
    p = cfg.basis_degree or fixture.basis.p
    if kind == "polynomial":
        return polynomial_basis(p, fixture.basis.state_dim)
    if kind == "quantile-linear":
        return quantile_linear_basis(p)
    raise ConfigError(f"[solver] basis_kind: unknown kind {kind!r}")


def _solve_fixture(fixture: Fixture, cfg: ExperimentConfig):
    """Build grid/ensemble/coefficients for a fixture and run the solver."""
    T = cfg.T if cfg.T is not None else fixture.T
    K = cfg.K if cfg.K is not None else fixture.K
    paths = cfg.num_paths if cfg.num_paths is not None else fixture.num_paths
    c4 = cfg.c4 if cfg.c4 is not None else fixture.c4
    basis = _basis_for(cfg, fixture)
    grid = build_uniform_grid(T, K)
    seed = substream_seed(cfg.seed, f"{fixture.name}:ensemble")
    ensemble = sample_ensemble(grid, paths, 2 if fixture.kind == "portfolio" else 1, seed)
    if fixture.kind == "portfolio":
        model = fixture.build(**cfg.fixture_params)
        psol = solve_portfolio(model, grid, ensemble, tol=cfg.tol, c4=c4, basis=basis,
                               max_iter=cfg.max_iter,
                               exploration_radius=cfg.exploration_radius,
                               exploration_floor=cfg.exploration_floor,
                               clip_y=cfg.clip_y, force=cfg.force)
        return {"grid": grid, "ensemble": ensemble, "portfolio": psol,
                "sol": psol.fde_sol, "coeffs": psol.coeffs, "model": model}
    coeffs = fixture.build(**cfg.fixture_params)
    sol = solve_global(coeffs, grid, 0.0, ensemble, c4=c4, tol=cfg.tol, basis=basis,
                       max_iter=cfg.max_iter, exploration_radius=cfg.exploration_radius,
                       exploration_floor=cfg.exploration_floor, clip_y=cfg.clip_y,
                       force=cfg.force)
    return {"grid": grid, "ensemble": ensemble, "sol": sol, "coeffs": coeffs}


def _common_assertions(bundle, tol) -> list:
    sol = bundle["sol"]
    out = []
    factor = max((r.empirical_factor for r in sol.iteration_log), default=0.0)
    out.append(Assertion("contraction_factor", factor, "<= 0.6", factor <= 0.6))
    iters = max((r.iterations_to(1e-4) for r in sol.iteration_log), default=0)
    out.append(Assertion("picard_iterations_at_1e-4", iters, "<= 10", 0 < iters <= 10))
    res = sol.residuals
    out.append(Assertion("backward_residual_rms", res["backward_rms"], "<= 0.01",
                         res["backward_rms"] <= 0.01))
    out.append(Assertion("forward_residual_max", res["forward_max"], "== 0",
                         res["forward_max"] == 0.0))
    out.append(Assertion("terminal_residual_rms", res["terminal_rms"], "<= 1e-10",
                         res["terminal_rms"] <= 1e-10))
    return out


def _probe_grid(halfwidth=2.0, count=21):
    return np.linspace(-halfwidth, halfwidth, count)


def _fixture_assertions(name, bundle, cfg) -> list:
    sol = bundle["sol"]
    grid = bundle["grid"]
    ensemble = bundle["ensemble"]
    coeffs = bundle["coeffs"]
    T = grid.horizon
    out = []
    if name == "trivial":
        out.append(_dev("y_deviation_max", np.abs(sol.Y - 1.0).max(), 1e-6))
        out.append(_dev("z_rms", float(np.sqrt(np.mean(sol.Z ** 2))), 1e-6))
        out.append(_dev("v_max", np.abs(sol.V).max(), 0.0, exact=True))
    elif name == "const_driver":
        c = cfg.fixture_params.get("c", 0.3)
        v_dev = np.abs(sol.V[:, :, 0] - c * grid.points[None, :]).max()
        out.append(_dev("v_affine_dev", v_dev, 1e-9))
        y_dev = max(np.abs(sol.Y[:, k, 0] - c * (T - grid.points[k])).max()
                    for k in range(grid.num_steps + 1))
        out.append(_dev("y_affine_dev", y_dev, 1e-2))
        out.append(_dev("z_rms", float(np.sqrt(np.mean(sol.Z ** 2))), 1e-6))
    elif name == "tanh_terminal":
        xs = _probe_grid()
        worst = 0.0
        for frac in (0.25, 0.5, 0.75):
            k = int(round(frac * grid.num_steps))
            fitted = sol.phi_fits[k].evaluate(xs[:, None])[:, 0]
            exact = oracles.heat_value(np.tanh, grid.points[k], xs, T)
            worst = max(worst, float(np.abs(fitted - exact).max()))
        out.append(_dev("heat_oracle_sup", worst, 0.02))
        out.append(_dev("y0_abs", abs(float(sol.y0_mean[0])), 0.01))
    elif name == "linear_driver":
        a = cfg.fixture_params.get("a", 0.5)
        cn = oracles.CrankNicolsonOracle(a, np.sin, T)
        xs = _probe_grid()
        worst = 0.0
        for frac in (0.25, 0.5, 0.75):
            k = int(round(frac * grid.num_steps))
            fitted = sol.phi_fits[k].evaluate(xs[:, None])[:, 0]
            worst = max(worst, float(np.abs(fitted - cn.at(grid.points[k], xs)).max()))
        out.append(_dev("pde_oracle_sup", worst, 0.02))
    elif name == "const_forward":
        c = cfg.fixture_params.get("c", 0.5)
        mc = build_measure_change(sol, coeffs, ensemble, 0.0)
        b_t = ensemble.increments[:, :, 0].sum(axis=1)
        exact = np.exp(-c * b_t - 0.5 * c * c * T)
        out.append(_dev("weight_formula_dev", np.abs(mc.weights - exact).max(), 1e-10))
        dev_se = abs(mc.weight_mean - 1.0) / mc.weight_stderr
        out.append(_dev("weight_mean_dev_se", dev_se, 5.0))
        weak = assemble_weak_solution(sol, mc, coeffs)
        out.append(_dev("weak_residual_weighted_rms", weak.residual["weighted_rms"], 0.1))
        fresh = sample_ensemble(build_uniform_grid(T, 1), ensemble.num_paths, 1,
                                substream_seed(cfg.seed, f"{name}:evaluation-ensemble"))
        fresh_bt = fresh.increments[:, 0, 0]
        for label, fn in (("tanh", np.tanh),
                          ("clipped_identity", lambda x: np.clip(x, -1.0, 1.0))):
            wtd = float(np.sum(mc.weights * fn(mc.w_paths[:, -1, 0])) / np.sum(mc.weights))
            ref_vals = fn(fresh_bt)
            ref = float(ref_vals.mean())
            se = float(np.sqrt(
                np.var(mc.weights * fn(mc.w_paths[:, -1, 0]), ddof=1) / ensemble.num_paths
                + ref_vals.var(ddof=1) / fresh.num_paths))
            out.append(_dev(f"reweighted_mean_dev_sigma_{label}", abs(wtd - ref) / se, 3.0))
        zinv = check_z_invariance(sol, mc, coeffs)
        out.append(_dev("z_invariance_max", zinv["max_discrepancy"], 0.05))
        bmo = bmo_diagnostic(sol, coeffs, [0.0, 0.25, 0.5])
        bmo_dev = max(abs(row["mean"] - c * c * (T - row["t"])) / (c * c * (T - row["t"]))
                      for row in bmo["per_probe"])
        out.append(_dev("bmo_const_rel_dev", bmo_dev, 0.05))
    return out


def _portfolio_assertions(bundle, cfg) -> list:
    psol = bundle["portfolio"]
    model = bundle["model"]
    out = []
    mc = psol.measure_change
    dev_se = abs(mc.weight_mean - 1.0) / mc.weight_stderr
    out.append(_dev("weight_mean_dev_se", dev_se, 5.0))
    out.append(_dev("weight_tail_mass_999", mc.tail_mass_above_quantile(0.999), 0.01))
    out.append(_dev("weak_residual_weighted_rms",
                    psol.weak_sol.residual["weighted_rms"], 0.01))
    pi_ident = float(np.abs(psol.pi_star - psol.pi_star_reference()).max())
    out.append(_dev("pi_star_identity", pi_ident, 0.0, exact=True))
    zinv = check_z_invariance(psol.fde_sol, mc, psol.coeffs)
    out.append(_dev("z_invariance_max", zinv["max_discrepancy"], 0.05))
    if model.g is None:
        y0_ref = oracles.merton_y0(model.mu_s, model.sigma_bar_s, model.gamma,
                                   psol.grid.horizon)
        out.append(_dev("y0_dev", abs(psol.y0 - y0_ref), 0.01))
        value_ref = -np.exp(-model.gamma * (model.x0 + y0_ref))
        out.append(_dev("value_dev", abs(psol.value - value_ref), 0.01))
        mu0 = model.mu_s_fn()(0.0)
        pi_ref = mu0 / (model.gamma * model.sigma_bar_s ** 2)
        out.append(_dev("pi_star_dev", float(np.abs(psol.pi_star - pi_ref).max()), 0.05))
        out.append(_dev("y0_stderr", psol.y0_stderr, cfg.tol / 3))
        out.append(_dev("merton_z_rms",
                        float(np.sqrt(np.mean(psol.fde_sol.Z ** 2))), 1e-3))
    else:
        K = psol.grid.num_steps
        probes = [float(psol.grid.points[i]) for i in (0, K // 4, K // 2, (3 * K) // 4)]
        bmo = bmo_diagnostic(psol.fde_sol, psol.coeffs, probes)
        vals = [row["mean"] for row in bmo["per_probe"]]
        mono = max((vals[i + 1] - vals[i]) / max(abs(vals[i]), 1e-12)
                   for i in range(len(vals) - 1))
        out.append(_dev("bmo_monotone_slack", mono, 0.10))
    # out-of-sample optimality
    eval_seed = substream_seed(cfg.seed, "portfolio:evaluation-ensemble")
    eval_ens = sample_ensemble(psol.grid, psol.fde_sol.num_paths, 2, eval_seed)
    report = verify_martingale_optimality(psol, model, (0.5, 1.0, -0.5, -1.0), eval_ens)
    psol.optimality_report = report
    star = report["strategies"]["pi_star"]
    if model.g is None:
        # closed-form benchmark: the fitted surfaces are exact, so the
        # zero-drift test runs at full statistical sharpness
        out.append(_dev("optimality_star_total_drift_sigma",
                        abs(star["total_drift"]) / star["total_se"], 3.0))
        step_ok = np.abs(star["step_drift"]) <= 3.0 * star["step_se"] + _DRIFT_ATOL
        out.append(Assertion("optimality_star_step_drift_3sigma",
                             float(np.abs(star["step_drift"]).max()),
                             "<= 3 se + atol", bool(step_ok.all())))
    else:
        # fitted surfaces carry a regression-bias floor; assert that the
        # candidate optimum is clearly separated from every perturbation
        worst = min(abs(r["total_drift"]) for label, r in report["strategies"].items()
                    if label != "pi_star")
        ratio = abs(star["total_drift"]) / worst
        out.append(_dev("optimality_star_relative_drift", ratio, 0.5))
    # per-step slack: surface bias floor for fitted (non-closed-form) problems
    atol = _DRIFT_ATOL if model.g is None else 4 * _DRIFT_ATOL
    for label, res in report["strategies"].items():
        if label == "pi_star":
            continue
        tstat = res["total_drift"] / res["total_se"]
        out.append(_dev(f"optimality_{label}_drift_tstat", tstat, -3.0))
        step_ok = res["step_drift"] <= 3.0 * res["step_se"] + atol
        out.append(Assertion(f"optimality_{label}_step_upper_3sigma",
                             float(res["step_drift"].max()), "<= 3 se + atol",
                             bool(step_ok.all())))
        dom = res["value_estimate"] - star["value_estimate"]
        dom_se = np.hypot(res["value_se"], star["value_se"])
        out.append(Assertion(f"optimality_{label}_value_dominated", dom,
                             "<= 3 sigma", dom <= 3.0 * dom_se))
    return out


def _dev(name, value, bound, exact=False):
    value = float(value)
    if exact:
        return Assertion(name, value, f"== {bound}", value == bound)
    return Assertion(name, value, f"<= {bound}", value <= bound)


def _write_verdicts_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("fixture,assertion,value,bound,passed\n")
        for fixture, a in rows:
            fh.write(f"{fixture},{a.name},{float(a.value)!r},{a.bound},"
                     f"{int(a.passed)}\n")


def _evaluate_fixture(name, cfg, out_dir, report):
    fixture = get_fixture(name)
    t0 = time.perf_counter()
    bundle = _solve_fixture(fixture, cfg)
    solve_time = time.perf_counter() - t0
    report.wall_clock[f"{name}:solve"] = solve_time
    assertions = _common_assertions(bundle, cfg.tol)
    if fixture.kind == "portfolio":
        assertions += _portfolio_assertions(bundle, cfg)
    else:
        assertions += _fixture_assertions(name, bundle, cfg)
    csv_path = out_dir / f"{name}_paths.csv"
    side_path = out_dir / f"{name}_summary.json"
    export_solution(bundle["sol"], csv_path, side_path,
                    path_limit=cfg.export_paths, config_echo=cfg.echo())
    report.outputs += [csv_path, side_path]
    if fixture.kind == "portfolio":
        pj = out_dir / f"{name}_portfolio.json"
        export_portfolio_results(bundle["portfolio"], pj, config_echo=cfg.echo())
        report.outputs.append(pj)
    report.wall_clock[f"{name}:total"] = time.perf_counter() - t0
    return bundle, assertions


def run(cfg: ExperimentConfig) -> RunReport:
    """Execute the configured problem; returns the report (no exit-code logic)."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(problem=cfg.problem, seed=cfg.seed, config_echo=cfg.echo())
    t_start = time.perf_counter()
    if cfg.problem == "verify-suite":
        rows = []
        for name in FIXTURES:
            bundle, assertions = _evaluate_fixture(name, cfg, out_dir, report)
            rows += [(name, a) for a in assertions]
            report.assertions += assertions
        verdicts = out_dir / "verdicts.csv"
        _write_verdicts_csv(verdicts, rows)
        report.outputs.append(verdicts)
    elif cfg.problem in ("fbsde", "qbsde-weak"):
        name = cfg.fixture
        bundle, assertions = _evaluate_fixture(name, cfg, out_dir, report)
        if cfg.problem == "qbsde-weak" and bundle.get("portfolio") is None:
            mc = build_measure_change(bundle["sol"], bundle["coeffs"],
                                      bundle["ensemble"], 0.0)
            weak = assemble_weak_solution(bundle["sol"], mc, bundle["coeffs"])
            wcsv = out_dir / f"{name}_weak.csv"
            wjson = out_dir / f"{name}_weak.json"
            export_weak_solution(weak, wcsv, wjson, path_limit=cfg.export_paths,
                                 config_echo=cfg.echo())
            report.outputs += [wcsv, wjson]
            dev_se = abs(float(mc.weight_mean) - 1.0) / mc.weight_stderr
            assertions.append(_dev("weight_mean_dev_se", dev_se, 5.0))
        report.assertions += assertions
        rows = [(name, a) for a in assertions]
        verdicts = out_dir / "verdicts.csv"
        _write_verdicts_csv(verdicts, rows)
        report.outputs.append(verdicts)
    elif cfg.problem == "portfolio":
        fixture_name = "endowment" if cfg.market.get("endowment", "zero") != "zero" else "merton"
        cfg.fixture_params = {k: v for k, v in cfg.market.items() if k != "endowment"}
        bundle, assertions = _evaluate_fixture(fixture_name, cfg, out_dir, report)
        report.assertions += assertions
        verdicts = out_dir / "verdicts.csv"
        _write_verdicts_csv(verdicts, [(fixture_name, a) for a in assertions])
        report.outputs.append(verdicts)
    report.wall_clock["total"] = time.perf_counter() - t_start
    report_path = out_dir / "run_report.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.outputs.append(report_path)
    return report


def verify_suite(cfg: ExperimentConfig) -> RunReport:
    """Run every shipped fixture with its assertion set and a summary table."""
    cfg.problem = "verify-suite"
    return run(cfg)


def _acquire_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory is locked by another run: {lock} (remove if stale)")
    with os.fdopen(fd, "w") as fh:
        fh.write(f"pid={os.getpid()}\n")
    return lock


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fdeflow",
        description="solve coupled forward-backward systems and verify them "
                    "against analytic and brute-force oracles")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config", help="path to a key=value config file")
    p_ver = sub.add_parser("verify", help="run the full verification suite")
    for p in (p_run, p_ver):
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--paths", type=int, default=None, help="path-count override")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            cfg = load_config(args.config)
        else:
            cfg = ExperimentConfig(problem="verify-suite")
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.paths is not None:
            cfg.num_paths = args.paths
        if args.quiet:
            cfg.quiet = True
    except ConfigError as exc:
        print(f"config error: {exc}")
        return 2

    lock = None
    try:
        lock = _acquire_lock(Path(cfg.out_dir))
        report = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return 2
    except PicardDivergedError as exc:
        dump = Path(cfg.out_dir) / "picard_report.json"
        rep = exc.report
        payload = {"error": str(exc)}
        if rep is not None:
            payload["report"] = {
                "window": list(rep.window), "iterations": rep.iterations,
                "distances": [float(v) for v in rep.distances],
                "converged": rep.converged,
                "empirical_factor": float(rep.empirical_factor)}
        with open(dump, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"solver divergence: {exc} (report dumped to {dump})")
        return 3
    except InvalidArgumentError as exc:
        print(f"config error: {exc}")
        return 2
    finally:
        if lock is not None and lock.exists():
            lock.unlink()

    if not cfg.quiet:
        width = max((len(a.name) for a in report.assertions), default=10)
        for a in report.assertions:
            status = "pass" if a.passed else "FAIL"
            print(f"{status}  {a.name:<{width}}  value={a.value:.6g}  bound {a.bound}")
        n_fail = sum(not a.passed for a in report.assertions)
        total = report.wall_clock.get("total", 0.0)
        print(f"{len(report.assertions) - n_fail}/{len(report.assertions)} assertions "
              f"passed in {total:.1f}s; outputs in {cfg.out_dir}")
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
