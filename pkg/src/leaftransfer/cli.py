"""Command-line entry point.

Every subcommand reads an optional ``key = value`` config file, then applies
flag overrides (flags win). Files land in ``--out`` (default
``./out/<subcommand>-<timestamp>``): ``report.json``, ``report.csv``,
``plot.svg`` where a plot makes sense, and ``resolved-config.txt``.

Exit codes: 0 success, 1 failed check, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from leaftransfer import foliation, harness, plotting
from leaftransfer.config import ConfigError, format_config, read_config
from leaftransfer.groups import GroupFamily, GroupElement, fit_relating, orbit_grid, relates
from leaftransfer.pendulum import PendulumParams, dynamics_dataset, oscillation_period, simulate
from leaftransfer.taskspace import get_family, write_csv_rows

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _float_rows(text: str) -> list[list[float]]:
    return [_floats(chunk) for chunk in str(text).split(";") if chunk.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _words(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [w.strip() for w in str(text).split(",") if w.strip()]


@dataclass(frozen=True)
class Option:
    name: str
    kind: Callable[[Any], Any]
    default: Any
    help: str
    choices: Sequence[str] | None = None

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


GROUP_CHOICES = [g.value for g in GroupFamily]

SEED = Option("seed", int, 0, "random seed")

SCHEMAS: dict[str, tuple[str, list[Option]]] = {
    "orbit": ("images of a task under a list of group elements", [
        Option("task_family", str, "sinusoid", "task family name"),
        Option("group", str, "translation", "transformation group", GROUP_CHOICES[:2]),
        Option("f", str, "1,1,0,0", "task coordinates, comma separated"),
        Option("params", str, "-1;0;1", "group parameter vectors, ';' between elements"),
        Option("grid_n", int, 101, "grid points for relatedness checks"),
        SEED,
    ]),
    "relate": ("search for the group element relating two tasks", [
        Option("task_family", str, "sinusoid", "task family name"),
        Option("family", str, "translation", "transformation group", GROUP_CHOICES[:2]),
        Option("f", str, "1,1,0,0", "source task coordinates"),
        Option("g", str, "1,1,0,2", "target task coordinates"),
        Option("tol", float, 1e-6, "max pointwise residual accepted"),
        Option("grid_n", int, 101, "grid points on the task domain"),
        SEED,
    ]),
    "check-foliation": ("finite-difference check of chart transitions", [
        Option("atlas", str, "polar", "catalog atlas, e.g. polar, sinusoid-affine, planted-defect"),
        Option("samples", int, 200, "overlap samples per chart pair"),
        Option("step", float, 1e-5, "central-difference step"),
        Option("tol", float, 1e-6, "max allowed |d h_m / d y|"),
        SEED,
    ]),
    "check-invariance": ("check q(p) = q(g p) over random points and elements", [
        Option("quantity", str, "radius", "invariant quantity", sorted(foliation.QUANTITIES)),
        Option("group", str, "rotation2d", "transformation group", GROUP_CHOICES),
        Option("samples", int, 1000, "random (point, element) pairs"),
        Option("tol", float, 1e-9, "max allowed violation"),
        Option("positive_scale", _bool, False, "restrict affine elements to b > 0"),
        SEED,
    ]),
    "check-equivariance": ("equivariance sweep of the closed-form learner", [
        Option("cases", int, 100, "representable cases per group"),
        Option("nonrepresentable", int, 10, "extra cases excluded from the pass rate"),
        Option("tol", float, 1e-9, "max allowed parameter gap"),
        Option("n", int, 50, "samples per dataset"),
        Option("harmonics", int, 3, "Fourier harmonics in the model basis"),
        SEED,
    ]),
    "transfer": ("leaf-constrained transfer versus scratch and warm starts", [
        Option("preset", str, "default", "experiment preset", ["default", "pendulum"]),
        Option("task_family", str, "", "task family (preset default when empty)"),
        Option("group", str, "", "transformation group (preset default when empty)"),
        Option("K_source", int, 0, "source tasks (preset default when 0)"),
        Option("n_per_task", int, 20, "samples per task"),
        Option("target_n", int, 0, "samples for the held-out task (n_per_task when 0)"),
        Option("noise_sigma", float, 0.05, "Gaussian noise level"),
        Option("budget_iters", int, 2000, "gradient-descent iterations per strategy"),
        Option("trials", int, 0, "trials (preset default when 0)"),
        Option("strategies", _words, ",".join(harness.DEFAULT_STRATEGIES),
               "comma separated subset of " + ",".join(harness.STRATEGIES)),
        Option("step", float, 0.5, "initial gradient-descent step"),
        Option("harmonics", int, 3, "Fourier harmonics for the sinusoid model"),
        Option("jobs", int, 1, "worker processes for trials"),
        SEED,
    ]),
    "pendulum-sim": ("RK4 simulation of a damped pendulum", [
        Option("mass", float, 1.0, "mass [kg]"),
        Option("length", float, 1.0, "length [m]"),
        Option("gamma", float, 0.1, "damping [N m s]"),
        Option("gravity", float, 9.81, "gravity [m/s^2]"),
        Option("theta0", float, 0.1, "initial angle [rad]"),
        Option("omega0", float, 0.0, "initial angular velocity [rad/s]"),
        Option("dt", float, 1e-3, "time step [s]"),
        Option("steps", int, 10_000, "integration steps"),
        Option("dataset_n", int, 0, "also write dataset.csv with this many samples"),
        SEED,
    ]),
    "report": ("re-render csv and svg from an existing report.json", [
        Option("input", str, "", "path to report.json"),
        SEED,
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leaftransfer",
        description="Relatedness, foliations and leaf-constrained transfer on closed-form task families.",
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True
    for name, (summary, options) in SCHEMAS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--out", metavar="DIR", help="output directory")
        for opt in options:
            shown = ",".join(opt.default) if isinstance(opt.default, (list, tuple)) else opt.default
            help_text = f"{opt.help} (default: {shown})"
            if opt.choices:
                help_text += f"; one of {', '.join(opt.choices)}"
            p.add_argument(opt.flag, dest=opt.name, metavar=opt.name.upper(), default=None, help=help_text)
    return parser


def resolve(subcommand: str, args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then config file, then flags; values coerced per the schema."""
    options = {o.name: o for o in SCHEMAS[subcommand][1]}
    raw: dict[str, Any] = {name: o.default for name, o in options.items()}
    if args.config:
        try:
            from_file = read_config(args.config)
        except (OSError, ConfigError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key not in options:
                raise UsageError(f"unknown config key {key!r} for {subcommand}")
            raw[key] = value
    for name in options:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    resolved = {}
    for name, value in raw.items():
        opt = options[name]
        try:
            resolved[name] = opt.kind(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {name}: {value!r} ({exc})") from exc
        if opt.choices and resolved[name] not in opt.choices:
            raise UsageError(f"{name} must be one of {', '.join(opt.choices)}, got {resolved[name]!r}")
    return resolved


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v: float) -> str:
    return repr(float(f"{v:.12g}"))


# -- subcommands ------------------------------------------------------------


def cmd_orbit(cfg, out: Path) -> tuple[int, str]:
    family = get_family(cfg["task_family"])
    group = GroupFamily.parse(cfg["group"])
    f = family.point(_floats(cfg["f"]))
    params = _float_rows(cfg["params"])
    orbit = orbit_grid(f, group, params)
    grid = family.grid(cfg["grid_n"])
    related = all(
        fit_relating(orbit[0], t, group, grid).related for t in orbit[1:]
    ) if orbit else True
    _write_json(out / "report.json", {
        "task_family": family.name,
        "group": group.value,
        "f": list(f.coords),
        "params": params,
        "orbit": [list(t.coords) for t in orbit],
        "pairwise_related": related,
    })
    header = ["index"] + [f"param{i}" for i in range(group.param_dim)] + list(family.coord_names)
    rows = [[i, *map(float, p), *t.coords] for i, (p, t) in enumerate(zip(params, orbit))]
    (out / "report.csv").write_text(write_csv_rows(header, rows), encoding="utf-8")
    if family.input_dim == 1:
        plotting.plot_tasks(grid, [t(grid) for t in orbit], [repr(t) for t in orbit], out / "plot.svg")
    return (EXIT_OK if related else EXIT_FAIL), f"orbit: {len(orbit)} tasks, related={str(related).lower()}"


def cmd_relate(cfg, out: Path) -> tuple[int, str]:
    family = get_family(cfg["task_family"])
    group = GroupFamily.parse(cfg["family"])
    f, g = family.point(_floats(cfg["f"])), family.point(_floats(cfg["g"]))
    grid = family.grid(cfg["grid_n"])
    rel = fit_relating(f, g, group, grid, cfg["tol"])
    data = {
        "related": rel.related,
        "degenerate": rel.degenerate,
        "residual": rel.residual if math.isfinite(rel.residual) else None,
        "group": group.value,
        "params": list(rel.element.params) if rel.element else None,
        "tol": cfg["tol"],
    }
    _write_json(out / "report.json", data)
    (out / "report.csv").write_text(
        write_csv_rows(["related", "degenerate", "residual", "params"],
                       [[rel.related, rel.degenerate, data["residual"] if data["residual"] is not None else "",
                         " ".join(repr(p) for p in data["params"] or [])]]),
        encoding="utf-8",
    )
    if rel.element is None:
        why = "degenerate" if rel.degenerate else f"residual={rel.residual:.3g}"
        return EXIT_OK, f"not related ({why})"
    names = ("a", "b")[: group.param_dim]
    return EXIT_OK, "related: " + ", ".join(f"{k}={_fmt(v)}" for k, v in zip(names, rel.element.params))


def cmd_check_foliation(cfg, out: Path) -> tuple[int, str]:
    try:
        atlas = foliation.catalog_atlas(cfg["atlas"])
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    reports = atlas.check(cfg["samples"], cfg["step"], cfg["tol"], cfg["seed"])
    passed = all(r.passed for r in reports)
    worst = max((r.max_violation for r in reports), default=0.0)
    data = {
        "check": f"foliated-transition:{atlas.id}",
        "pass": passed,
        "max_violation": worst,
        "samples": cfg["samples"],
        "tol": cfg["tol"],
        "seed": cfg["seed"],
        "m": atlas.m,
        "n": atlas.n,
        "pairs": [r.to_dict() for r in reports],
    }
    if not reports:
        data["flag"] = "single-chart"
    _write_json(out / "report.json", data)
    rows = [[r.check, r.passed, r.max_violation, r.samples, r.tol, r.seed, r.flag or ""] for r in reports]
    (out / "report.csv").write_text(
        write_csv_rows(["check", "pass", "max_violation", "samples", "tol", "seed", "flag"], rows), encoding="utf-8"
    )
    return (EXIT_OK if passed else EXIT_FAIL), f"check-foliation {atlas.id}: pass={str(passed).lower()} max_violation={worst:.3g}"


def cmd_check_invariance(cfg, out: Path) -> tuple[int, str]:
    q = foliation.QUANTITIES[cfg["quantity"]]
    group = GroupFamily.parse(cfg["group"])
    if (q.domain is None) != (group is GroupFamily.ROTATION2D):
        raise UsageError(f"quantity {q.name} is not defined on the space {group.value} acts on")
    report = foliation.check_invariance(q, group, cfg["samples"], cfg["tol"], cfg["seed"], cfg["positive_scale"])
    _write_json(out / "report.json", report.to_dict())
    (out / "report.csv").write_text(
        write_csv_rows(["check", "pass", "max_violation", "samples", "tol", "seed"],
                       [[report.check, report.passed, report.max_violation, report.samples, report.tol, report.seed]]),
        encoding="utf-8",
    )
    status = EXIT_OK if report.passed else EXIT_FAIL
    return status, f"{report.check}: pass={str(report.passed).lower()} max_violation={report.max_violation:.3g}"


def cmd_check_equivariance(cfg, out: Path) -> tuple[int, str]:
    suite = harness.EquivarianceConfig(
        cases=cfg["cases"], tol=cfg["tol"], seed=cfg["seed"], n=cfg["n"],
        harmonics=cfg["harmonics"], nonrepresentable=cfg["nonrepresentable"],
    )
    report = harness.run_equivariance_suite(suite)
    for fmt, name in (("json", "report.json"), ("csv", "report.csv"), ("svg", "plot.svg")):
        harness.emit_report(report, fmt, out / name)
    rates = ", ".join(f"{g}={a['pass_rate']}" for g, a in report.aggregates["groups"].items())
    return (EXIT_OK if report.passed else EXIT_FAIL), f"check-equivariance: pass_rate {rates}"


def _experiment_config(cfg) -> harness.ExperimentConfig:
    overrides: dict[str, Any] = {
        "n_per_task": cfg["n_per_task"],
        "noise_sigma": cfg["noise_sigma"],
        "budget_iters": cfg["budget_iters"],
        "strategies": tuple(cfg["strategies"]),
        "step": cfg["step"],
        "harmonics": cfg["harmonics"],
        "seed": cfg["seed"],
        "jobs": cfg["jobs"],
    }
    for key in ("task_family", "group", "K_source", "trials", "target_n"):
        if cfg[key]:
            overrides[key] = cfg[key]
    if cfg["preset"] == "pendulum":
        return harness.pendulum_preset(**overrides)
    return harness.ExperimentConfig(**overrides)


def cmd_transfer(cfg, out: Path) -> tuple[int, str]:
    try:
        experiment = _experiment_config(cfg)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    report = harness.run_transfer_experiment(experiment)
    for fmt, name in (("json", "report.json"), ("csv", "report.csv"), ("svg", "plot.svg")):
        harness.emit_report(report, fmt, out / name)
    agg = report.aggregates
    win = agg.get("win_rate_leaf_vs_scratch")
    medians = " ".join(f"{k}={v['median_final_loss']:.3g}" for k, v in sorted(agg["strategies"].items()))
    return EXIT_OK, f"transfer: trials={experiment.trials} win_rate={win} median_loss {medians}"


def cmd_pendulum_sim(cfg, out: Path) -> tuple[int, str]:
    try:
        params = PendulumParams(cfg["mass"], cfg["length"], cfg["gamma"], cfg["gravity"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    traj = simulate(params, (cfg["theta0"], cfg["omega0"]), cfg["dt"], cfg["steps"])
    e = traj.energy()
    drift = float(np.max(np.abs(e - e[0])) / abs(e[0])) if e[0] != 0 else float(np.max(np.abs(e - e[0])))
    try:
        period = oscillation_period(traj)
    except ValueError:
        period = None
    _write_json(out / "report.json", {
        "params": {"mass": params.mass, "length": params.length, "gamma": params.gamma, "gravity": params.gravity},
        "init": [cfg["theta0"], cfg["omega0"]],
        "dt": cfg["dt"],
        "steps": cfg["steps"],
        "final_state": [float(v) for v in traj.states[-1]],
        "relative_energy_drift": drift,
        "period": period,
        "integrator": traj.integrator,
    })
    (out / "report.csv").write_text(traj.to_csv(), encoding="utf-8")
    plotting.plot_trajectory(traj, out / "plot.svg")
    if cfg["dataset_n"] > 0:
        dynamics_dataset(params, cfg["dataset_n"], seed=cfg["seed"]).to_csv(out / "dataset.csv")
    return EXIT_OK, f"pendulum-sim: steps={cfg['steps']} relative_energy_drift={drift:.3g}"


def cmd_report(cfg, out: Path) -> tuple[int, str]:
    if not cfg["input"]:
        raise UsageError("--input is required")
    try:
        data = json.loads(Path(cfg["input"]).read_text(encoding="utf-8"))
        report = harness.report_from_dict(data)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load report: {exc}") from exc
    for fmt, name in (("json", "report.json"), ("csv", "report.csv"), ("svg", "plot.svg")):
        harness.emit_report(report, fmt, out / name)
    return EXIT_OK, f"report: {report.kind} with {len(report.rows)} rows"


COMMANDS = {
    "orbit": cmd_orbit,
    "relate": cmd_relate,
    "check-foliation": cmd_check_foliation,
    "check-invariance": cmd_check_invariance,
    "check-equivariance": cmd_check_equivariance,
    "transfer": cmd_transfer,
    "pendulum-sim": cmd_pendulum_sim,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.subcommand, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    out = Path(args.out) if args.out else Path("out") / f"{args.subcommand}-{stamp}"
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    resolved_text = format_config(cfg)
    (out / "resolved-config.txt").write_text(resolved_text, encoding="utf-8")
    for line in resolved_text.splitlines():
        print(f"# {line}")

    try:
        status, summary = COMMANDS[args.subcommand](cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(summary)
    return status


if __name__ == "__main__":
    sys.exit(main())
