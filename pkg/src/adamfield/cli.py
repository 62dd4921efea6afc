"""Command line entry point ``adamfield``.

Exit codes: 0 success, 1 a validation check failed, 2 numeric failure
(non-finite states, no sign change for the root finder), 64 usage or config
error.  Every command that takes ``--config`` writes its CSV files, a JSON
sidecar per CSV (command, config hash, seed) and ``<command>.manifest.json``;
``adamfield rerun MANIFEST --out DIR`` repeats the run from the manifest.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .adam import AdamState, NumericFailure, RunConfig, run_adam_batch, run_adam_config
from .experiments import (
    FIELD_COLUMNS,
    ROOT_COLUMNS,
    ConfigError,
    ExperimentConfig,
    _root,
    field_sweep,
    root_row,
    run_ode_compare,
    run_rate_in_batch,
    resolve_m0,
    run_gap_demo,
    run_rate_in_gamma,
)
from .field import FieldError, frozen_field
from .io import config_hash, write_csv, write_dat, write_manifest
from .ode import (
    RecursionConfig,
    approx_processes,
    error_sequence,
    integrate_ode,
    p_regularity,
    prop_bounds_report,
    rho_partition,
)
from .schedule import StepSchedule, schedule_ratios

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


class _Outputs:
    """Collects written files; each CSV gets a sidecar with the config hash and seed."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig | None, dat: bool):
        self.out, self.command, self.cfg, self.dat = out, command, cfg, dat
        self.files: list[str] = []
        self.meta = {"command": command}
        if cfg is not None:
            self.meta.update(config_hash=config_hash(cfg.to_dict()), seed=cfg.seed)

    def csv(self, name: str, header, rows) -> Path:
        rows = [list(r) for r in rows]
        path = self.out / name
        write_csv(path, header, rows)
        with open(str(path) + ".json", "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)
        self.files.append(name)
        if self.dat:
            write_dat(path.with_suffix(".dat"), header, rows)
            self.files.append(path.with_suffix(".dat").name)
        return path

    def manifest(self, argv: list[str], results: dict) -> None:
        cfg = self.cfg.to_dict() if self.cfg is not None else {}
        write_manifest(self.out / f"{self.command}.manifest.json", self.command, cfg,
                       self.cfg.seed if self.cfg else 0, self.files, {"argv": argv, **results})


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError(f"{args.command}: --config is required")
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"{args.command}: config file {path} not found")
    return ExperimentConfig.load(path)


def _outdir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg, outs: _Outputs) -> tuple[int, dict]:
    m = cfg.batch_sizes[0]
    inn = cfg.innovation_for(m)
    sched = cfg.schedule_obj()
    stride = int(cfg.option("stride", max(1, cfg.horizon // 1000)))
    theta0 = cfg.option("theta0", [0.0] * inn.dim)
    init = AdamState.zeros(inn.dim, theta=theta0)
    bias = bool(cfg.option("bias_correction", True))
    inside = bool(cfg.option("epsilon_inside", False))
    export = min(int(cfg.option("export_replicas", 1)), cfg.replicas)
    failed_total = 0
    summary = []
    for s in cfg.seeds:
        for r in range(export):
            rc = RunConfig(cfg.params, sched, inn, init, cfg.horizon, s, r, stride, bias, inside)
            tr = run_adam_config(rc)
            outs.csv(f"trajectory_s{s}_r{r}.csv", tr.header(), tr.rows())
        batch = run_adam_batch(init, inn, cfg.params, sched, cfg.horizon, s, cfg.replicas, stride=stride,
                               bias_correction=bias)
        failed_total += len(batch.failed)
        th = batch.theta[:, :, 0]
        for j in range(len(batch.n)):
            summary.append([s, int(batch.n[j]), batch.t[j], th[:, j].mean(), th[:, j].std(ddof=1) if len(th) > 1 else 0.0])
    outs.csv("simulate_summary.csv", ["seed", "n", "t_n", "theta_mean", "theta_std"], summary)
    return (EXIT_NUMERIC if failed_total else EXIT_OK), {"failed_replicas": failed_total}


def _theta_grid(cfg) -> np.ndarray:
    g = cfg.option("theta_grid")
    mu = cfg.base_innovation().mean_u
    if g is None:
        return np.linspace(mu - 1.0, mu + 1.0, 5)
    if isinstance(g, dict):
        return np.linspace(float(g["lo"]), float(g["hi"]), int(g.get("num", 5)))
    return np.asarray(g, dtype=float)


def cmd_field(args, cfg, outs) -> tuple[int, dict]:
    rows = field_sweep(cfg, _theta_grid(cfg), method=str(cfg.option("ftilde_method", "factored")))
    outs.csv("field_sweep.csv", FIELD_COLUMNS, rows)
    ok = all(abs(r[1] - r[3]) <= r[5] + 3 * math.hypot(r[2], r[4]) for r in rows)
    return (EXIT_OK if ok else EXIT_VALIDATION), {"bound_holds": ok}


def cmd_root(args, cfg, outs) -> tuple[int, dict]:
    mu = cfg.base_innovation().mean_u
    rows = [root_row(m, _root(cfg, m), mu) for m in cfg.batch_sizes]
    outs.csv("roots.csv", ROOT_COLUMNS, ([r[c] for c in ROOT_COLUMNS] for r in rows))
    return EXIT_OK, {"roots": {str(r["M"]): r["theta_star"] for r in rows}}


def cmd_ode_compare(args, cfg, outs) -> tuple[int, dict]:
    res = run_ode_compare(cfg, tolerance=float(cfg.option("stability_tolerance", 0.2)))
    outs.csv("ode_compare.csv", ["seed", "sup_scaled_distance"], zip(cfg.seeds, res.sups))
    st = res.per_seed[0]
    outs.csv("ode_compare_profile.csv", ["n", "lp_distance", "scaled"], zip(st.n, st.lp_distance, st.scaled))
    info = {"theta_star": res.theta_star, "constant": res.constant, "spread": res.spread, "stable": res.stable,
            "oracle_max_se": res.oracle_se}
    return (EXIT_OK if res.stable else EXIT_VALIDATION), info


def cmd_rates_gamma(args, cfg, outs) -> tuple[int, dict]:
    res = run_rate_in_gamma(cfg)
    outs.csv("rates_gamma.csv", res.COLUMNS, res.rows())
    if res.degenerate:
        return EXIT_OK, {"degenerate": True, "theta_star": res.theta_star}
    lo, hi = cfg.option("slope_band", [0.4, 0.6])
    ok = lo <= res.fit.slope <= hi
    return (EXIT_OK if ok else EXIT_VALIDATION), {"fit": res.fit.as_dict(), "theta_star": res.theta_star,
                                                   "excluded_replicas": res.excluded, "slope_in_band": ok}


def cmd_rates_batch(args, cfg, outs) -> tuple[int, dict]:
    res = run_rate_in_batch(cfg)
    outs.csv("rates_batch.csv", ROOT_COLUMNS, ([r[c] for c in ROOT_COLUMNS] for r in res.rows))
    info = {"degenerate": res.degenerate, "predicted_sign": res.predicted_sign, "signs_match": res.signs_match,
            "failures": {str(k): v for k, v in res.failures.items()}}
    if res.degenerate:
        info["flag"] = "symmetric degenerate"
        return EXIT_OK, info
    if res.fit is None:
        return EXIT_NUMERIC, info
    if cfg.option("resolve_m0", True):
        mu = cfg.base_innovation().mean_u
        hw = float(cfg.option("m0_halfwidth", 1.0))
        m0 = resolve_m0(cfg, (mu - hw, mu + hw))
        info["M0"] = m0.m0
        info["M0_scan"] = m0.table
    lo, hi = cfg.option("slope_band", [-1.15, -0.85])
    ok = lo <= res.fit.slope <= hi and res.signs_match and not res.failures
    info.update(fit=res.fit.as_dict(), slope_in_band=lo <= res.fit.slope <= hi)
    return (EXIT_OK if ok else EXIT_VALIDATION), info


def cmd_gap_demo(args, cfg, outs) -> tuple[int, dict]:
    rep = run_gap_demo(cfg)
    d = {}
    for k, v in rep.as_dict().items():
        if isinstance(v, (tuple, list)):
            d[k + "_low"], d[k + "_high"] = v
        else:
            d[k] = v
    outs.csv("gap_demo.csv", list(d), [[d[k] for k in d]])
    ok = rep.gap_excludes_zero and rep.field_contains_zero
    return (EXIT_OK if ok else EXIT_VALIDATION), d


def cmd_validate_bounds(args, cfg, outs) -> tuple[int, dict]:
    m = cfg.batch_sizes[0]
    inn = cfg.innovation_for(m)
    if inn.dim != 1:
        raise ConfigError("validate-bounds is implemented for d = 1")
    sched = cfg.schedule_obj()
    p = float(cfg.option("p", 4.0))
    rho = float(cfg.option("rho", 1.5))
    n0 = int(cfg.option("n0", 0))
    box = tuple(cfg.option("box", [-3.0, 3.0]))
    c_p = float(cfg.option("C_p", 4.0))
    theta0 = float(cfg.option("theta0", 0.5))
    if n0 != 0:
        raise ConfigError("validate-bounds starts runs from zero moments at n0 = 0")
    part = rho_partition(sched, n0, rho, horizon=cfg.horizon)
    oracle = frozen_field(inn, cfg.params, box[0], box[1], n_nodes=int(cfg.option("oracle_nodes", 32)),
                          chains=int(cfg.option("oracle_chains", 32)), seed=cfg.seed)
    run = run_adam_batch(AdamState.zeros(1, theta=[theta0]), inn, cfg.params, sched, part.last, cfg.seed,
                         cfg.replicas, keep_inputs=True)
    paths = approx_processes(run, part, cfg.params, inn, oracle, seed_aux=cfg.seed + 1)
    reg = p_regularity(inn, box, p)
    rep = prop_bounds_report(paths, cfg.params, reg, p, box, c_p=c_p)
    rep.to_csv(outs.out / "bounds.csv")
    outs.files.append("bounds.csv")
    with open(outs.out / "bounds.csv.json", "w") as fh:
        json.dump(outs.meta, fh, indent=2, sort_keys=True)

    grid = np.linspace(box[0], box[1], 401)
    deriv = oracle.derivative(grid)
    ode = integrate_ode(oracle, [theta0], sched.times(part.last), substeps=2, oracle_kind="frozen-chebyshev")
    zeta = float(np.max(schedule_ratios(sched, part.last + 1)))
    rc = RecursionConfig(c1=float(np.min(-deriv)), L=float(np.max(np.abs(deriv))),
                         C_prime=float(np.max(np.abs(oracle(grid)))), zeta=zeta, box=box, c_p=c_p)
    rec = error_sequence(run, ode, part, p, cfg.params, reg, rc)
    rec.to_csv(outs.out / "recursion.csv")
    outs.files.append("recursion.csv")
    with open(outs.out / "recursion.csv.json", "w") as fh:
        json.dump(outs.meta, fh, indent=2, sort_keys=True)
    frac = rec.pass_fraction
    ok = rep.all_passed and frac >= 0.95
    info = {"bounds": {k: {kk: (float(vv) if kk == "min_ratio" else int(vv)) for kk, vv in v.items()}
                       for k, v in rep.summary().items()},
            "recursion_pass_fraction": frac, "recursion_feasible": rec.feasible,
            "infeasible_reasons": rec.infeasible_reasons, "kappa": rep.kappa.as_dict(),
            "regularity": {"C": reg.C, "C_tilde": reg.C_tilde, "L_tilde": reg.L_tilde},
            "windows": part.count, "c_prime": rec.c_prime, "delta2": rec.delta2}
    return (EXIT_OK if ok else EXIT_VALIDATION), info


COMMANDS = {
    "simulate": cmd_simulate,
    "field": cmd_field,
    "root": cmd_root,
    "ode-compare": cmd_ode_compare,
    "rates-gamma": cmd_rates_gamma,
    "rates-batch": cmd_rates_batch,
    "validate-bounds": cmd_validate_bounds,
    "gap-demo": cmd_gap_demo,
}


def cmd_partition(args) -> int:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        sched = cfg.schedule_obj()
    else:
        try:
            sched = StepSchedule.from_dict(args.schedule)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    try:
        part = rho_partition(sched, args.n0, args.rho, count=args.count)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(" ".join(str(int(n)) for n in part.points[1:]))
    if args.out:
        out = Path(args.out)
        outs = _Outputs(out, "partition", None, False)
        outs.csv("partition.csv", ["ell", "n_ell", "t_n_ell"],
                 ([i, int(n), t] for i, (n, t) in enumerate(zip(part.points, part.times()))))
        outs.manifest(args.argv, {})
    return EXIT_OK


_HELP = {
    "simulate": "run Adam replicas and export trajectories",
    "field": "field, first-order field and perturbation bound on a theta grid",
    "root": "equilibrium of the mini-batch field for each batch size",
    "ode-compare": "distance of the iterates to the ODE path, per seed",
    "rates-gamma": "L^p distance to the equilibrium against the step size",
    "rates-batch": "equilibrium shift against the batch size",
    "validate-bounds": "window-wise approximation bounds and the error recursion",
    "gap-demo": "equilibrium next to the objective's critical point",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adamfield", description="Adam vector field experiments")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", help="TOML experiment config")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("--dat", action="store_true", help="also write gnuplot .dat tables")
    sp = sub.add_parser("partition", help="print the points of a rho-partition")
    sp.add_argument("--schedule", default="inv_n")
    sp.add_argument("--n0", type=int, default=0)
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--count", type=int, default=4)
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp = sub.add_parser("rerun", help="repeat a run from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", required=True)
    return p


def _run_command(args, argv) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    outs = _Outputs(out, args.command, cfg, args.dat)
    cfg.save(out / f"{args.command}.config.toml")
    code, info = COMMANDS[args.command](args, cfg, outs)
    outs.manifest(argv, info)
    return code


def _rerun(args) -> int:
    try:
        with open(args.manifest) as fh:
            man = json.load(fh)
        argv = list(man["results"]["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"rerun: cannot read manifest {args.manifest}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if man["command"] != "partition":
        cfg = ExperimentConfig.from_dict(man["config"])
        path = out / f"{man['command']}.config.toml"
        cfg.save(path)
        argv = _replace_flag(argv, "--config", str(path))
    argv = _replace_flag(argv, "--out", str(out))
    return main(argv)


def _replace_flag(argv: list[str], flag: str, value: str) -> list[str]:
    out, skip = [], False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == flag:
            skip = True
            continue
        if a.startswith(flag + "="):
            continue
        out.append(a)
    return out + [flag, value]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        if args.command is None:
            raise UsageError(build_parser().format_usage())
        if args.command == "partition":
            return cmd_partition(args)
        if args.command == "rerun":
            return _rerun(args)
        return _run_command(args, argv)
    except (UsageError, ConfigError) as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, FieldError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
