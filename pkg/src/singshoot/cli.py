"""Command-line front end: ``singshoot solve | batch | check``.

Exit codes: 0 success, 1 configuration or input error, 2 solve did not
converge, 3 a diagnostic check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .batch import GridSpec, default_workers, run_grid
from .benchmarks import DEFAULTS, REGISTRY, BenchmarkCase, get_case
from .config import read_config
from .diagnostics import check_solution, perturbation_check
from .errors import ConfigurationError, ShootingError
from .integrate import TrajectoryRecord
from .shooting import residual_map_for_case
from .solver import SolverSettings, solve

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_CHECK_FAILED = 0, 1, 2, 3

PLOT_TEMPLATE = '''"""Plot a trajectory written by ``singshoot solve``.

Usage: python {script} [{csv}]
"""
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
with open(path, newline="", encoding="utf-8") as fh:
    rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
head, data = rows[0], np.array([[float(v) for v in r[2:]] for r in rows[1:]])
col = {{name: j for j, name in enumerate(head[2:])}}
t = data[:, col["t"]]


def series(prefix):
    names = [c for c in head[2:] if c.startswith(prefix) and c[len(prefix):].isdigit()]
    return names, data[:, [col[c] for c in names]]


fig = plt.figure(figsize=(11, 7))
panels = [(fig.add_subplot(2, 2, 1), "x", "state"),
          (fig.add_subplot(2, 2, 2), "u", "control"),
          (fig.add_subplot(2, 1, 2), "Phi", "switching function")]
for ax, prefix, title in panels:
    names, values = series(prefix)
    for name, v in zip(names, values.T):
        ax.plot(t, v, label=name)
    ax.set_title(title)
    ax.set_xlabel("t")
    ax.grid(True)
    ax.legend()
panels[2][0].axhline(0.0, color="k", lw=0.5)
fig.suptitle({title!r})
fig.tight_layout()
plt.show()
'''


def _parse_vector(text, size=None):
    try:
        v = np.array([float(s) for s in text.split(",") if s.strip()])
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None
    if size is not None and v.size != size:
        raise ConfigurationError(f"expected {size} values, got {v.size}")
    return v


def load_case(target) -> BenchmarkCase:
    """A registered problem name, or the path of a problem-config file."""
    if target in REGISTRY:
        return get_case(target)
    if os.path.exists(target):
        return read_config(target)
    raise ConfigurationError(
        f"unknown problem {target!r}; give one of {', '.join(sorted(REGISTRY))} or a config file")


def _fmt(v):
    return "(" + ", ".join(f"{float(x):.15g}" for x in v) + ")"


def write_plot_script(csv_path, script_path, title=""):
    script_path = Path(script_path)
    script_path.write_text(PLOT_TEMPLATE.format(script=script_path.name, csv=str(csv_path),
                                                title=title), encoding="utf-8")


def _solve_case(case, formulation, nu0, tol):
    settings = SolverSettings(tol=case.tol if tol is None else tol)
    R = residual_map_for_case(case, formulation)
    return R, solve(R, nu0, settings)


def cmd_solve(args):
    case = load_case(args.problem)
    nu0 = (case.default_start() if args.nu0 is None
           else _parse_vector(args.nu0, len(case.unknown_names)))
    R, rep = _solve_case(case, args.formulation, nu0, args.tol)
    print(f"problem      {case.name} ({args.formulation}, {rep.method})")
    print(f"unknowns     {', '.join(case.unknown_names)}")
    print(f"nu           {_fmt(rep.nu)}")
    print(f"|S|          {rep.final_norm:.3e}")
    print(f"iterations   {rep.iterations}")
    print(f"status       {rep.message}")
    objective = None
    if rep.converged:
        objective = R.objective(rep.nu)
        print(f"objective    {objective:.12g}")
    if args.emit_svd:
        if rep.singular_values is None:
            print("sigma        unavailable (no finite Jacobian at the last iterate)")
        else:
            print("sigma        " + " ".join(f"{s:.6g}" for s in rep.singular_values))
            print(f"kappa        {rep.kappa:.6g}")

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{case.name}_{args.formulation}"
    Path(f"{stem}_report.txt").write_text(rep.to_text(), encoding="utf-8")
    if rep.converged:
        traj = R.trajectory(rep.nu, check_order=False)
        traj.meta.update(problem=case.name, params=json.dumps(case.params, sort_keys=True),
                         formulation=args.formulation,
                         nu=" ".join(repr(float(v)) for v in rep.nu),
                         objective=repr(objective))
        traj.to_csv(f"{stem}_trajectory.csv")
        write_plot_script(f"{stem}_trajectory.csv", f"{stem}_plot.py",
                          f"{case.name}, {args.formulation} shooting")
        print(f"wrote        {stem}_trajectory.csv, {stem}_report.txt, {stem}_plot.py")
        return EXIT_OK
    print(f"wrote        {stem}_report.txt")
    return EXIT_NOT_CONVERGED


def cmd_batch(args):
    case = load_case(args.problem)
    grid = GridSpec.parse(args.grid, case.unknown_names) if args.grid else None
    workers = default_workers() if args.workers is None else args.workers
    if workers < 1:
        raise ConfigurationError("--workers must be at least 1")
    forms = ("extended", "classical") if args.formulation == "both" else (args.formulation,)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for form in forms:
        report = run_grid(case, form, grid, workers=workers)
        path = out / f"{case.name}_{form}_batch.csv"
        report.to_csv(path)
        print(report.summary_line())
        print(f"  {report.grid.size} points, {report.counts()}, wall {report.wall_time:.1f} s,"
              f" workers {report.workers} -> {path}")
    return EXIT_OK


def _case_from_trajectory(traj):
    name = traj.meta.get("problem")
    if name not in DEFAULTS:
        raise ConfigurationError("trajectory file does not name a registered problem")
    try:
        params = json.loads(traj.meta.get("params", "{}"))
    except json.JSONDecodeError:
        raise ConfigurationError("trajectory file has unreadable parameters") from None
    case = get_case(name, params)
    if traj.n != case.problem.n or traj.m != case.problem.m:
        raise ConfigurationError("trajectory dimensions do not match the problem")
    return case


def cmd_check(args):
    nu = None
    if args.trajectory:
        try:
            traj = TrajectoryRecord.from_csv(args.trajectory)
        except (OSError, ValueError, UnicodeDecodeError) as exc:
            raise ConfigurationError(f"cannot read trajectory {args.trajectory}: {exc}") from None
        case = _case_from_trajectory(traj)
        structure = traj.structure
        if "nu" in traj.meta:
            nu = _parse_vector(traj.meta["nu"].replace(" ", ","))
        formulation = traj.meta.get("formulation", args.formulation)
    elif args.problem:
        case = load_case(args.problem)
        formulation = args.formulation
        R, rep = _solve_case(case, formulation, case.default_start(), None)
        if not rep.converged:
            print(f"solve did not converge: {rep.message}")
            return EXIT_NOT_CONVERGED
        nu = rep.nu
        traj = R.trajectory(nu, check_order=False)
        structure = case.structure
    else:
        raise ConfigurationError("give a problem name or --trajectory")
    report = check_solution(case.problem, structure, traj)
    print(report.to_text())
    ok = report.passed
    if args.keyvalue:
        Path(args.keyvalue).write_text(report.to_keyvalue(), encoding="utf-8")
    if args.perturb is not None:
        if "cost_scale" not in DEFAULTS[case.name]:
            raise ConfigurationError(f"{case.name} has no cost_scale parameter to perturb")
        if nu is None:
            raise ConfigurationError("the perturbation check needs the solution nu")
        pert = perturbation_check(REGISTRY[case.name], nu, mu=args.perturb,
                                  mu_cal=args.perturb / 10.0, formulation=formulation,
                                  params=case.params)
        print(pert.to_text())
        ok = ok and pert.passed
    return EXIT_OK if ok else EXIT_CHECK_FAILED


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(
        prog="singshoot", description="Extended shooting for problems with singular arcs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one problem")
    p.add_argument("problem", help="registered problem name or problem-config file")
    p.add_argument("--formulation", choices=("extended", "classical"), default="extended")
    p.add_argument("--nu0", help="comma-separated initial guess")
    p.add_argument("--tol", type=float, help="residual tolerance")
    p.add_argument("--emit-svd", action="store_true", help="print singular values and kappa")
    p.add_argument("--output-dir", default=".", help="directory for output files")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("batch", help="solve from every point of a grid")
    p.add_argument("problem", help="registered problem name or problem-config file")
    p.add_argument("--formulation", choices=("extended", "classical", "both"),
                   default="extended")
    p.add_argument("--grid", help='e.g. "p1=-10:10:21,p2=-10:10:21,t1=0:5:21"')
    p.add_argument("--workers", type=int, help="worker processes (default: $SHOOT_WORKERS or 1)")
    p.add_argument("--output-dir", default=".", help="directory for the CSV reports")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("check", help="verify optimality conditions on a solution")
    p.add_argument("problem", nargs="?", help="problem name or config (solved first)")
    p.add_argument("--trajectory", help="trajectory CSV written by solve")
    p.add_argument("--formulation", choices=("extended", "classical"), default="extended")
    p.add_argument("--perturb", type=float, metavar="MU",
                   help="also re-solve with the cost scaled by 1 + MU")
    p.add_argument("--keyvalue", help="write the report as key = value lines to this file")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ShootingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
