"""Command-line front end: run, verify and sweep scenario files.

Exit codes: 0 success, 1 parse/solver error, 2 verification failure.
Trajectories are CSV with header t,species,state,value; reports are JSON.
All randomness is seeded, so outputs are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .cornerstone import (
    ConvergenceError,
    CornerstoneProblem,
    make_time_poly_test,
    solve_cornerstone,
    solve_mollified,
    weak_residual,
)
from .fields import Field, TimeGrid
from .general import ReactionSpec, general_iterate
from .generators import dirichlet_form, estimate_lsi_constant, semigroup_apply
from .measure import entropy, integrate
from .oracle import OdeSystem, integrate_reference
from .orlicz import YoungExp, entropic_bound, gauge_norm, jensen_contraction_check
from .scenarios import Scenario, ScenarioError, load_scenario
from .two_by_two import (
    TwoByTwoProblem,
    auto_horizon,
    choose_gamma,
    constant_D,
    eta_T,
    heat_flow_start,
    iterate,
    pair_sum_flows,
    weak_residual_rdp,
)

# contract tolerances of the verification battery
TOL_CONSERVATION = 1e-9
TOL_POSITIVITY = -1e-10
TOL_MOMENT = -1e-8
TOL_ORACLE_2X2 = 1e-5
TOL_ORACLE_GENERAL = 1e-4
RATIO_HEADROOM = 1.05


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_json_safe(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _write_trajectory(path: Path, fields):
    grid = fields[0].grid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,species,state,value\n")
        for k, t in enumerate(grid.times):
            for i, fld in enumerate(fields, start=1):
                row = fld.values[k]
                for x in range(row.size):
                    fh.write(f"{t:.17g},{i},{x},{row[x]:.17g}\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


class Battery:
    """Collects named pass/fail checks with measured values."""

    def __init__(self, quiet=False):
        self.rows = []
        self.quiet = quiet

    def check(self, name, value, ok, target):
        self.rows.append(
            {"check": name, "value": _json_safe(value), "target": target, "pass": bool(ok)}
        )
        if not self.quiet:
            status = "PASS" if ok else "FAIL"
            print(f"  [{status}] {name}: {value:.6g} (target {target})")

    @property
    def ok(self) -> bool:
        return all(r["pass"] for r in self.rows)


def _resolve_two_by_two(scenario: Scenario):
    gen = scenario.build_generator()
    problem, f = scenario.build_problem(gen)
    solver = scenario.solver
    restarts = int(solver.get("lsi_restarts", 16))
    lsi_seed = int(solver.get("lsi_seed", 0))
    c_ls = estimate_lsi_constant(gen, restarts=restarts, seed=lsi_seed).constant
    gamma_cfg = solver.get("gamma", "auto")
    gamma = choose_gamma(problem, c_ls) if gamma_cfg == "auto" else float(gamma_cfg)
    if scenario.wants_auto_horizon:
        t_end = auto_horizon(problem, gamma, c_ls)
    else:
        t_end = None
    grid = scenario.build_grid(t_end)
    return gen, problem, f, c_ls, gamma, grid


def _run_two_by_two(scenario, battery, with_oracle, oracle_rtol, oracle_atol):
    gen, problem, f, c_ls, gamma, grid = _resolve_two_by_two(scenario)
    solver = scenario.solver
    u, report = iterate(
        problem,
        grid,
        gamma=gamma,
        c_ls=c_ls,
        max_n=int(solver.get("max_iter", 30)),
        tol=float(solver.get("tol", 1e-10)),
    )
    battery.check(
        "conservation_residual",
        report.conservation_residual,
        report.conservation_residual <= TOL_CONSERVATION,
        f"<= {TOL_CONSERVATION:g}",
    )
    battery.check(
        "positivity_min",
        report.positivity_min,
        report.positivity_min >= TOL_POSITIVITY,
        f">= {TOL_POSITIVITY:g}",
    )
    battery.check(
        "moment_slack",
        report.moment_slack,
        report.moment_slack >= TOL_MOMENT,
        f">= {TOL_MOMENT:g}",
    )
    ratio = report.max_measured_ratio()
    if math.isfinite(ratio):
        bound = report.eta_predicted * RATIO_HEADROOM
        battery.check("sigma_ratio", ratio, ratio <= bound, f"<= {bound:.4g}")
    oracle_gap = None
    if with_oracle:
        system = OdeSystem.from_two_by_two(problem)
        ref = integrate_reference(
            system, list(problem.f), grid, gen.space, rtol=oracle_rtol, atol=oracle_atol
        )
        oracle_gap = max(
            float(np.abs(u[i].values - ref[i].values).max()) for i in range(4)
        )
        battery.check(
            "oracle_gap", oracle_gap, oracle_gap <= TOL_ORACLE_2X2, f"<= {TOL_ORACLE_2X2:g}"
        )
    return gen, problem, u, report, grid, oracle_gap


def _run_general(scenario, battery, with_oracle, oracle_rtol, oracle_atol):
    gen = scenario.build_generator()
    spec, f = scenario.build_problem(gen)
    solver = scenario.solver
    if scenario.wants_auto_horizon:
        raise ScenarioError("auto horizon is only defined for two_by_two scenarios")
    grid = scenario.build_grid()
    u, report = general_iterate(
        spec,
        f,
        grid,
        max_n=int(solver.get("max_iter", 30)),
        tol=float(solver.get("tol", 1e-10)),
    )
    battery.check(
        "conservation_residual",
        report.conservation_residual,
        report.conservation_residual <= TOL_CONSERVATION,
        f"<= {TOL_CONSERVATION:g}",
    )
    battery.check(
        "positivity_min",
        report.positivity_min,
        report.positivity_min >= TOL_POSITIVITY,
        f">= {TOL_POSITIVITY:g}",
    )
    oracle_gap = None
    if with_oracle:
        system = OdeSystem.from_reaction_spec(spec)
        ref = integrate_reference(
            system, f, grid, gen.space, rtol=oracle_rtol, atol=oracle_atol
        )
        oracle_gap = max(
            float(np.abs(u[i].values - ref[i].values).max()) for i in range(spec.q)
        )
        battery.check(
            "oracle_gap",
            oracle_gap,
            oracle_gap <= TOL_ORACLE_GENERAL,
            f"<= {TOL_ORACLE_GENERAL:g}",
        )
    return gen, spec, u, report, grid, oracle_gap


def _report_dict(scenario, report, grid, oracle_gap):
    out = {
        "scenario": str(scenario.path),
        "seed": scenario.seed,
        "t_end": grid.t_end,
        "steps": grid.steps,
        "oracle_gap": oracle_gap,
    }
    for key, val in vars(report).items():
        out[key] = val
    return _json_safe(out)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.initial["seed"] = args.seed
    with_oracle = args.verify == "oracle" or (
        args.verify is None and scenario.verify.get("oracle", False)
    )
    rtol = float(scenario.verify.get("oracle_rtol", 1e-10))
    atol = float(scenario.verify.get("oracle_atol", 1e-12))
    battery = Battery(quiet=args.quiet)
    if scenario.kind == "two_by_two":
        gen, problem, u, report, grid, gap = _run_two_by_two(
            scenario, battery, with_oracle, rtol, atol
        )
    else:
        gen, problem, u, report, grid, gap = _run_general(
            scenario, battery, with_oracle, rtol, atol
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trajectory(out_dir / "trajectory.csv", u)
    payload = _report_dict(scenario, report, grid, gap)
    payload["checks"] = battery.rows
    payload["ok"] = battery.ok
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if not args.quiet:
        print(f"wrote {out_dir / 'trajectory.csv'} and {out_dir / 'report.json'}")
    return 0 if battery.ok else 2


def _property_battery(scenario, battery, u, gen, problem, grid):
    """Checks beyond the solver contracts: Jensen, entropic, LSI, weak residual."""
    rng = np.random.default_rng(scenario.seed + 1)
    space = gen.space
    n = space.n

    worst = 0.0
    for _ in range(2000):
        ff = rng.uniform(0.0, 2.0, n)
        gg = rng.uniform(-2.0, 2.0, n)
        gamma = rng.uniform(0.2, 3.0)
        if ff.max() == 0.0:
            continue
        lhs, rhs = entropic_bound(space, ff, gg, gamma)
        worst = max(worst, lhs - rhs)
    battery.check("entropic_violation", worst, worst <= 1e-10, "<= 1e-10")

    worst_rel = -np.inf
    phi = YoungExp(2.0)
    for _ in range(200):
        ff = rng.uniform(-1.5, 1.5, n)
        t = rng.uniform(0.0, 2.0)
        before, after = jensen_contraction_check(gen, ff, phi, t)
        worst_rel = max(worst_rel, (after - before) / (1.0 + abs(before)))
    battery.check("jensen_violation", worst_rel, worst_rel <= 1e-10, "<= 1e-10")

    est = estimate_lsi_constant(gen, restarts=8, seed=scenario.seed + 2)
    worst_lsi = -np.inf
    for _ in range(2000):
        uu = rng.standard_normal(n)
        energy = dirichlet_form(gen, uu)
        if energy <= 0.0:
            continue
        worst_lsi = max(
            worst_lsi, entropy(space, uu**2) - est.constant * energy * (1.0 + 1e-8)
        )
    battery.check("lsi_validation", worst_lsi, worst_lsi <= 0.0, "<= 0")

    psi = rng.standard_normal(n)
    if isinstance(problem, TwoByTwoProblem):
        tests, tests_dt = [], []
        for _ in range(4):
            p, dp = make_time_poly_test(grid, space, [0.4, 1.0, -0.5], rng.standard_normal(n))
            tests.append(p)
            tests_dt.append(dp)
        resid = weak_residual_rdp(u, problem, tests, tests_dt)
    else:
        # audit the first species' affine problem wired from the solution
        resid = None
    if resid is not None:
        cap = 100.0 * grid.dt**2
        battery.check("weak_residual", resid, resid <= cap, f"<= {cap:.3g}")


def _fixture_check(scenario_path: Path, battery):
    manifest = scenario_path.parent / "checksums.json"
    if not manifest.exists():
        return
    sums = json.loads(manifest.read_text(encoding="utf-8"))
    stem_csv = scenario_path.stem + ".trajectory.csv"
    if stem_csv not in sums:
        return
    golden = scenario_path.parent / stem_csv
    if not golden.exists():
        battery.check(f"fixture_present:{stem_csv}", 0.0, False, "file exists")
        return
    match = _sha256(golden) == sums[stem_csv]
    battery.check(f"fixture_checksum:{stem_csv}", float(match), match, "sha256 match")


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.initial["seed"] = args.seed
    battery = Battery(quiet=args.quiet)
    rtol = float(scenario.verify.get("oracle_rtol", 1e-10))
    atol = float(scenario.verify.get("oracle_atol", 1e-12))
    with_oracle = args.verify == "oracle" or scenario.verify.get("oracle", False)
    if scenario.kind == "two_by_two":
        gen, problem, u, report, grid, _ = _run_two_by_two(
            scenario, battery, with_oracle, rtol, atol
        )
    else:
        gen, problem, u, report, grid, _ = _run_general(
            scenario, battery, with_oracle, rtol, atol
        )
    _property_battery(scenario, battery, u, gen, problem, grid)
    _fixture_check(Path(args.scenario), battery)
    payload = {"scenario": str(scenario.path), "checks": battery.rows, "ok": battery.ok}
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "verify.json").write_text(
            json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    if not args.quiet:
        print("verification", "PASSED" if battery.ok else "FAILED")
    return 0 if battery.ok else 2


def _sweep_dt(scenario, values, quiet):
    rows = []
    gen, problem, f, c_ls, gamma, grid0 = _resolve_two_by_two(scenario)
    rng = np.random.default_rng(scenario.seed + 3)
    psis = [rng.standard_normal(gen.n) for _ in range(4)]
    for dt in values:
        steps = max(2, round(grid0.t_end / dt))
        grid = TimeGrid(grid0.t_end, steps)
        u, report = iterate(problem, grid, gamma=gamma, c_ls=c_ls)
        tests, tests_dt = [], []
        for i in range(4):
            p, dp = make_time_poly_test(grid, gen.space, [0.4, 1.0, -0.5], psis[i])
            tests.append(p)
            tests_dt.append(dp)
        resid = weak_residual_rdp(u, problem, tests, tests_dt)
        rows.append({"dt": grid.dt, "weak_residual": resid})
    for prev, cur in zip(rows, rows[1:]):
        cur["order"] = math.log(prev["weak_residual"] / cur["weak_residual"]) / math.log(
            prev["dt"] / cur["dt"]
        )
    return rows


def _sweep_eps(scenario, values, quiet):
    gen, problem, f, c_ls, gamma, grid = _resolve_two_by_two(scenario)
    lam = problem.lam
    s13, s24 = pair_sum_flows(problem, grid)
    u0 = heat_flow_start(problem, grid)
    A = Field(grid, gen.space, lam * s24.values)
    B = Field(grid, gen.space, lam * s13.values * u0[3].values)
    corner = CornerstoneProblem(gen.scaled(problem.c1), A, B, problem.f[0])
    direct = solve_cornerstone(corner)
    rows = []
    for eps in values:
        u_eps, rep = solve_mollified(corner, eps)
        gap = float(np.abs(u_eps.values - direct.values).max())
        rows.append({"eps": eps, "gap_to_direct": gap, "picard_sweeps": rep.n_iter})
    return rows


def _sweep_lambda(scenario, values, quiet):
    rows = []
    for lam in values:
        s = Scenario(
            generator=scenario.generator,
            problem={**scenario.problem, "lambda": lam},
            initial=scenario.initial,
            grid=scenario.grid,
            solver=scenario.solver,
            verify=scenario.verify,
            path=scenario.path,
        )
        try:
            gen, problem, f, c_ls, gamma, grid = _resolve_two_by_two(s)
            d = constant_D(problem, gamma)
            eta = eta_T(lam, gamma, d, c_ls, grid.t_end)
            if eta >= 1.0:
                rows.append({"lambda": lam, "eta": eta, "status": "refused"})
                continue
            u, report = iterate(problem, grid, gamma=gamma, c_ls=c_ls)
            rows.append(
                {
                    "lambda": lam,
                    "eta": eta,
                    "status": "ok",
                    "measured_ratio": report.max_measured_ratio(),
                    "n_converged": report.n_converged,
                }
            )
        except (ValueError, ConvergenceError) as exc:
            rows.append({"lambda": lam, "status": f"refused: {exc}"})
    return rows


def _sweep_gamma(scenario, values, quiet):
    gen, problem, f, c_ls, _, grid = _resolve_two_by_two(scenario)
    rows = []
    for gamma in values:
        d = constant_D(problem, gamma)
        eta = eta_T(problem.lam, gamma, d, c_ls, grid.t_end)
        kappa = min(problem.c1, problem.c2) - 2.0 * problem.lam * c_ls / gamma
        row = {"gamma": gamma, "eta": eta, "kappa": kappa}
        if eta >= 1.0 or kappa <= 0.0:
            row["status"] = "refused"
        else:
            u, report = iterate(problem, grid, gamma=gamma, c_ls=c_ls)
            row["status"] = "ok"
            row["measured_ratio"] = report.max_measured_ratio()
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.initial["seed"] = args.seed
    values = [float(v) for v in args.values.split(",")]
    runner = {
        "dt": _sweep_dt,
        "eps": _sweep_eps,
        "lambda": _sweep_lambda,
        "gamma": _sweep_gamma,
    }.get(args.param)
    if runner is None:
        print(f"unknown sweep parameter {args.param!r}", file=sys.stderr)
        return 1
    rows = runner(scenario, values, args.quiet)
    if not args.quiet:
        for row in rows:
            print("  " + ", ".join(f"{k}={v}" for k, v in row.items()))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "sweep.json").write_text(
            json.dumps(_json_safe({"param": args.param, "rows": rows}), indent=2)
            + "\n",
            encoding="utf-8",
        )
        keys = sorted({k for row in rows for k in row})
        with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(keys) + "\n")
            for row in rows:
                fh.write(",".join(str(row.get(k, "")) for k in keys) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdkinetics",
        description="Reaction-diffusion solver and verifier on finite Markov spaces",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="solve a scenario and write trajectory + report")
    run_p.add_argument("scenario")
    run_p.add_argument("--out", default="out")
    run_p.add_argument("--verify", choices=["oracle", "fast"], default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--quiet", action="store_true")
    run_p.set_defaults(func=cmd_run)

    ver_p = sub.add_parser("verify", help="run the property battery, no trajectory output")
    ver_p.add_argument("scenario")
    ver_p.add_argument("--out", default=None)
    ver_p.add_argument("--verify", choices=["oracle", "fast"], default=None)
    ver_p.add_argument("--seed", type=int, default=None)
    ver_p.add_argument("--quiet", action="store_true")
    ver_p.set_defaults(func=cmd_verify)

    sw_p = sub.add_parser("sweep", help="run a scenario across a parameter ladder")
    sw_p.add_argument("scenario")
    sw_p.add_argument("--param", required=True, choices=["dt", "eps", "lambda", "gamma"])
    sw_p.add_argument("--values", required=True, help="comma-separated ladder")
    sw_p.add_argument("--out", default=None)
    sw_p.add_argument("--seed", type=int, default=None)
    sw_p.add_argument("--quiet", action="store_true")
    sw_p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
