"""Experiment runner.

Parses a flat key=value config with dotted section names, dispatches the
full pipeline (assemble -> gains -> mean-field fixed point -> simulate ->
stability report), and writes reproducible CSV artifacts plus a manifest of
their checksums.
"""

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import meanfield, model, riccati, simulate, stability
from ._csv import fmt, sha256_file, sha256_text, write_csv, write_manifest
from ._kernels import BACKEND

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

STAGES = ("parse", "assemble", "riccati", "meanfield", "simulate",
          "stability", "io")


class StageError(Exception):
    """Pipeline failure tagged with the stage it occurred in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__("%s: %s" % (stage, cause))
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        if self.stage in ("parse", "assemble"):
            return EXIT_CONFIG
        if self.stage == "io":
            return EXIT_IO
        return EXIT_NUMERICAL

    def record(self) -> str:
        return json.dumps({"stage": self.stage, "error": str(self.cause),
                           "exit_code": self.exit_code}, sort_keys=True)


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "are"              # "finite_horizon" | "are"
    T: float = 30.0
    K: int = 300
    x_lin: float = 0.0
    eps_y: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("finite_horizon", "are"):
            raise ValueError("solver.mode must be 'finite_horizon' or "
                             "'are', got %r" % (self.mode,))
        if self.T <= 0 or self.K < 2:
            raise ValueError("solver grid invalid: T=%r K=%r"
                             % (self.T, self.K))


@dataclass(frozen=True)
class MeanFieldConfig:
    damping: float = 0.5
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("meanfield.damping must lie in (0, 1], got %r"
                             % (self.damping,))


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    prefix: str = ""
    emit_agents: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    params: model.ModelParams = field(default_factory=model.ModelParams)
    scenario: simulate.ScenarioConfig = field(
        default_factory=simulate.ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    meanfield: MeanFieldConfig = field(default_factory=MeanFieldConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_PARAM_KEYS = [f.name for f in dataclasses.fields(model.ModelParams)
               if f.name != "phi"]
_SOLVER_KEYS = [f.name for f in dataclasses.fields(SolverConfig)]
_MEANFIELD_KEYS = [f.name for f in dataclasses.fields(MeanFieldConfig)]
_OUTPUT_KEYS = [f.name for f in dataclasses.fields(OutputConfig)]
_SCENARIO_KEYS = ["variant", "n_agents", "dt", "steps", "impulse_period",
                  "impulse_rule", "impulse_x", "impulse_y", "seed",
                  "closure", "x0_mean", "x0_std", "y0_mode", "y0_low",
                  "y0_high", "y0_value", "legacy_dt_noise", "drift_mode"]


def _parse_bool(text: str) -> bool:
    token = text.strip().lower()
    if token in ("true", "1", "yes", "on"):
        return True
    if token in ("false", "0", "no", "off"):
        return False
    raise ValueError("expected a boolean, got %r" % (text,))


def _convert(value: str, target_type):
    if target_type is bool:
        return _parse_bool(value)
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value.strip()


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat dotted key=value format; '#' starts a comment."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError("line %d: expected 'key = value', got %r"
                             % (lineno, raw))
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ValueError("line %d: duplicate key %r" % (lineno, key))
        entries[key] = value

    def take(section, name, current, target_type):
        value = entries.pop("%s.%s" % (section, name), None)
        if value is None:
            return current
        return _convert(value, target_type)

    params_kwargs = {}
    defaults = model.ModelParams()
    for name in _PARAM_KEYS:
        params_kwargs[name] = take("params", name,
                                   getattr(defaults, name), float)
    phi_keys = ["params.phi11", "params.phi12", "params.phi22"]
    if any(k in entries for k in phi_keys):
        missing = [k for k in phi_keys if k not in entries]
        if missing:
            raise ValueError("partial phi specification; missing %s"
                             % ", ".join(missing))
        p11 = float(entries.pop("params.phi11"))
        p12 = float(entries.pop("params.phi12"))
        p22 = float(entries.pop("params.phi22"))
        params_kwargs["phi"] = ((p11, p12), (p12, p22))
    params = model.ModelParams(**params_kwargs)

    sd = simulate.ScenarioConfig()
    rule = sd.impulse_rule
    scen_kwargs = dict(
        variant=riccati.Variant.parse(
            take("scenario", "variant", sd.variant.value, str)),
        n_agents=take("scenario", "n_agents", sd.n_agents, int),
        dt=take("scenario", "dt", sd.dt, float),
        steps=take("scenario", "steps", sd.steps, int),
        impulse_period=take("scenario", "impulse_period",
                            sd.impulse_period, float),
        impulse_rule=simulate.ImpulseRule(
            kind=take("scenario", "impulse_rule", rule.kind, str),
            ax=take("scenario", "impulse_x", rule.ax, float),
            ay=take("scenario", "impulse_y", rule.ay, float)),
        seed=take("scenario", "seed", sd.seed, int),
        closure=take("scenario", "closure", sd.closure, str),
        x0_mean=take("scenario", "x0_mean", sd.x0_mean, float),
        x0_std=take("scenario", "x0_std", sd.x0_std, float),
        y0_mode=take("scenario", "y0_mode", sd.y0_mode, str),
        y0_low=take("scenario", "y0_low", sd.y0_low, float),
        y0_high=take("scenario", "y0_high", sd.y0_high, float),
        y0_value=take("scenario", "y0_value", sd.y0_value, float),
        legacy_dt_noise=take("scenario", "legacy_dt_noise",
                             sd.legacy_dt_noise, bool),
        drift_mode=take("scenario", "drift_mode", sd.drift_mode, str),
    )
    scenario = simulate.ScenarioConfig(**scen_kwargs)

    solver_defaults = SolverConfig()
    solver = SolverConfig(**{
        name: take("solver", name, getattr(solver_defaults, name),
                   type(getattr(solver_defaults, name)))
        for name in _SOLVER_KEYS})
    mf_defaults = MeanFieldConfig()
    mf = MeanFieldConfig(**{
        name: take("meanfield", name, getattr(mf_defaults, name),
                   type(getattr(mf_defaults, name)))
        for name in _MEANFIELD_KEYS})
    out_defaults = OutputConfig()
    output = OutputConfig(**{
        name: take("output", name, getattr(out_defaults, name),
                   type(getattr(out_defaults, name)))
        for name in _OUTPUT_KEYS})

    if entries:
        raise ValueError("unknown config keys: %s"
                         % ", ".join(sorted(entries)))
    return ExperimentConfig(params=params, scenario=scenario, solver=solver,
                            meanfield=mf, output=output)


def parse_config_file(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical serialization: every key, sorted, one per line."""
    lines = []
    for name in _PARAM_KEYS:
        lines.append("params.%s = %s" % (name, fmt(getattr(cfg.params, name))))
    if cfg.params.phi is not None:
        phi = np.asarray(cfg.params.phi, dtype=float)
        lines.append("params.phi11 = %s" % fmt(phi[0, 0]))
        lines.append("params.phi12 = %s" % fmt(phi[0, 1]))
        lines.append("params.phi22 = %s" % fmt(phi[1, 1]))
    sc = cfg.scenario
    scen_values = {
        "variant": sc.variant.value, "n_agents": sc.n_agents, "dt": sc.dt,
        "steps": sc.steps, "impulse_period": sc.impulse_period,
        "impulse_rule": sc.impulse_rule.kind, "impulse_x": sc.impulse_rule.ax,
        "impulse_y": sc.impulse_rule.ay, "seed": sc.seed,
        "closure": sc.closure, "x0_mean": sc.x0_mean, "x0_std": sc.x0_std,
        "y0_mode": sc.y0_mode, "y0_low": sc.y0_low, "y0_high": sc.y0_high,
        "y0_value": sc.y0_value, "legacy_dt_noise": sc.legacy_dt_noise,
        "drift_mode": sc.drift_mode,
    }
    for name in _SCENARIO_KEYS:
        lines.append("scenario.%s = %s" % (name, fmt(scen_values[name])))
    for name in _SOLVER_KEYS:
        lines.append("solver.%s = %s" % (name, fmt(getattr(cfg.solver, name))))
    for name in _MEANFIELD_KEYS:
        lines.append("meanfield.%s = %s"
                     % (name, fmt(getattr(cfg.meanfield, name))))
    for name in _OUTPUT_KEYS:
        lines.append("output.%s = %s" % (name, fmt(getattr(cfg.output, name))))
    return "\n".join(sorted(lines)) + "\n"


def _initial_mean(scenario: simulate.ScenarioConfig) -> np.ndarray:
    y0 = scenario.y0_value if scenario.y0_mode == "constant" \
        else 0.5 * (scenario.y0_low + scenario.y0_high)
    return np.array([scenario.x0_mean, y0])


def _write_agents_csv(path, record: simulate.RunRecord) -> None:
    steps1, n, _ = record.states.shape
    t_col = np.repeat(record.times, n)
    id_col = np.tile(np.arange(n), steps1)
    x_col = record.states[:, :, 0].reshape(-1)
    y_col = record.states[:, :, 1].reshape(-1)
    u = np.empty((steps1, n, 2))
    for k in range(steps1):
        u[k] = record.controls(k)
    write_csv(path, ["t", "agent_id", "x", "y", "u_on", "u_off"],
              [t_col, id_col, x_col, y_col,
               u[:, :, 0].reshape(-1), u[:, :, 1].reshape(-1)])


def _stability_stage(cfg: ExperimentConfig, eq: meanfield.EquilibriumSolution,
                     record: simulate.RunRecord):
    params = cfg.params
    mats = model.assemble(params)
    variant = cfg.scenario.variant
    A = mats.A(cfg.solver.x_lin)
    Meff = riccati.effective_gain_matrix(params, variant)
    if cfg.scenario.closure == "simplified":
        M_cl = A + Meff @ eq.riccati.P[0]
        b_cl = np.zeros(2)
    else:
        M_cl = A + Meff @ eq.riccati.P[0]
        b_cl = Meff @ eq.riccati.Psi[0] + mats.C
    eq_set = stability.equilibrium_point(M_cl, b_cl)
    drift_fn = stability.closed_loop_drift(M_cl, b_cl)
    delta = 1e-6 * (params.x_off - params.x_on)
    mean_path = record.states.mean(axis=1)
    if variant is riccati.Variant.DETERMINISTIC:
        report = stability.check_asymptotic(mean_path, record.times, eq_set,
                                            drift_fn, delta=delta)
        name = "asymptotic"
    elif variant is riccati.Variant.ROBUST:
        report = stability.check_worst_case(mean_path, record.times, eq_set,
                                            drift_fn, delta=delta)
        name = "worst_case"
    else:
        span_x = 0.025 * (params.x_off - params.x_on)
        box = ((eq_set.X_star[0] - span_x, eq_set.X_star[0] + span_x),
               (eq_set.X_star[1] - 0.05, eq_set.X_star[1] + 0.05)) \
            if eq_set.kind == "point" else ((-np.inf, np.inf),
                                            (-np.inf, np.inf))
        report = stability.check_second_moment(
            [record], box, variant, params, drift_fn, eq_set)
        name = "second_moment"
    return name, report


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute the pipeline and write all artifacts.

    Returns the manifest record.  Raises StageError with the failing stage.
    """
    # assemble
    try:
        model.validate(cfg.params)
        model.assemble(cfg.params)
        if cfg.solver.mode == "finite_horizon":
            grid_ok = (cfg.solver.K == cfg.scenario.steps
                       and abs(cfg.solver.T - cfg.scenario.horizon) < 1e-9)
            if not grid_ok:
                raise ValueError(
                    "finite-horizon mode needs solver grid == scenario "
                    "grid (T=%g vs %g, K=%d vs %d)"
                    % (cfg.solver.T, cfg.scenario.horizon, cfg.solver.K,
                       cfg.scenario.steps))
    except Exception as exc:
        raise StageError("assemble", exc) from exc

    # riccati: infinite-horizon anchor (also the default terminal weight)
    try:
        P_inf = riccati.solve_are(cfg.params, x_lin=cfg.solver.x_lin,
                                  eps_y=cfg.solver.eps_y)
    except Exception as exc:
        raise StageError("riccati", exc) from exc

    # meanfield fixed point (quasi-static in ARE mode)
    try:
        eq = meanfield.fixed_point(
            cfg.params, cfg.scenario.variant, _initial_mean(cfg.scenario),
            T=cfg.solver.T, K=cfg.solver.K, damping=cfg.meanfield.damping,
            tol=cfg.meanfield.tol, max_iter=cfg.meanfield.max_iter,
            x_lin=cfg.solver.x_lin, eps_y=cfg.solver.eps_y, phi=P_inf,
            stationary=(cfg.solver.mode == "are"))
    except riccati.RiccatiBlowUpError as exc:
        raise StageError("riccati", exc) from exc
    except Exception as exc:
        raise StageError("meanfield", exc) from exc

    # simulate
    try:
        schedule = simulate.schedule_from_equilibrium(eq, cfg.params,
                                                      cfg.scenario)
        record = simulate.run(cfg.scenario, cfg.params, schedule=schedule)
    except Exception as exc:
        raise StageError("simulate", exc) from exc

    # stability
    try:
        check_name, report = _stability_stage(cfg, eq, record)
    except Exception as exc:
        raise StageError("stability", exc) from exc

    # io
    try:
        outdir = cfg.output.dir
        os.makedirs(outdir, exist_ok=True)
        prefix = cfg.output.prefix
        paths = {}

        def emit(name, writer):
            path = os.path.join(outdir, prefix + name)
            writer(path)
            paths[prefix + name] = path

        emit("riccati.csv", eq.riccati.to_csv)
        emit("equilibrium.csv", eq.to_csv)
        emit("aggregates.csv", lambda p: write_csv(
            p, ["t", "m_on", "e", "std_x", "std_y"],
            [record.times, record.m_on, record.e, record.std_x,
             record.std_y]))
        if cfg.output.emit_agents:
            emit("agents.csv", lambda p: _write_agents_csv(p, record))
        emit("stability_summary.csv", lambda p: write_csv(
            p, ["check", "fraction_satisfied", "worst_margin",
                "excluded_count", "n_samples", "note"],
            [[check_name], [report.fraction_satisfied],
             [report.worst_margin], [report.excluded_count],
             [len(report.lhs)], [report.note]]))

        # output location does not identify the experiment
        hashed = "\n".join(line for line in dump_config(cfg).splitlines()
                           if not line.startswith("output.")) + "\n"
        manifest = {
            "config_sha256": sha256_text(hashed),
            "seed": cfg.scenario.seed,
            "artifacts": {name: sha256_file(path)
                          for name, path in sorted(paths.items())},
        }
        if (cfg.scenario.variant is riccati.Variant.ROBUST
                and cfg.solver.mode == "finite_horizon"):
            # the affine backward equation admits two gain placements; we
            # integrate the one that reduces to the nominal variants and
            # record the residual of both forms along the trajectory
            res_impl, res_alt = riccati.robust_psi_equation_residuals(
                eq.riccati, cfg.params)
            manifest["diagnostics"] = {
                "robust_affine_residual_implemented": fmt(res_impl),
                "robust_affine_residual_literal": fmt(res_alt),
            }
        write_manifest(os.path.join(outdir, prefix + "manifest.json"),
                       manifest)
    except OSError as exc:
        raise StageError("io", exc) from exc
    return manifest


def compare_variants(cfg: ExperimentConfig) -> dict:
    """Run the three noise variants on the same seed and write the per-time
    dispersion comparison."""
    variants = (riccati.Variant.DETERMINISTIC,
                riccati.Variant.STOCHASTIC_CONST,
                riccati.Variant.STOCHASTIC_STATE_DEP)
    table = {}
    times = None
    for variant in variants:
        scenario = replace(cfg.scenario, variant=variant)
        try:
            record = simulate.run(scenario, cfg.params,
                                  x_lin=cfg.solver.x_lin,
                                  eps_y=cfg.solver.eps_y)
        except StageError:
            raise
        except (riccati.AREError, riccati.RiccatiBlowUpError) as exc:
            raise StageError("riccati", exc) from exc
        except Exception as exc:
            raise StageError("simulate", exc) from exc
        times = record.times
        table["std_x_" + variant.value] = record.std_x
        table["std_y_" + variant.value] = record.std_y
    try:
        os.makedirs(cfg.output.dir, exist_ok=True)
        path = os.path.join(cfg.output.dir, cfg.output.prefix + "compare.csv")
        header = ["t"] + list(table.keys())
        write_csv(path, header, [times] + list(table.values()))
    except OSError as exc:
        raise StageError("io", exc) from exc
    table["t"] = times
    return table


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tclgame",
        description="Mean-field experiments for populations of "
                    "thermostatically controlled loads")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run one experiment end to end"),
                            ("compare", "compare the noise variants on a "
                                        "shared seed")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="path to the experiment config")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--out", default=None,
                         help="override the output directory")
        cmd.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    def info(msg):
        if not args.quiet:
            print(msg, file=sys.stderr)

    try:
        cfg = parse_config_file(args.config)
    except OSError as exc:
        err = StageError("io", exc)
        print(err.record(), file=sys.stderr)
        return err.exit_code
    except Exception as exc:
        err = StageError("parse", exc)
        print(err.record(), file=sys.stderr)
        return err.exit_code

    if args.seed is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=args.out))

    info("backend: %s" % BACKEND)
    try:
        if args.command == "run":
            manifest = run_experiment(cfg)
            info("artifacts written to %s" % cfg.output.dir)
            info(json.dumps(manifest, sort_keys=True))
        else:
            compare_variants(cfg)
            info("comparison written to %s" % cfg.output.dir)
    except StageError as err:
        print(err.record(), file=sys.stderr)
        return err.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
