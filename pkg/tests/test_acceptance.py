"""End-to-end acceptance checks, one test per criterion.

The CLI experiments run once per session at full size (several minutes on one
core); criteria 8 to 13 read their CSVs and manifests.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from adamfield.adam import AdamState, adam_step, run_adam
from adamfield.cli import main
from adamfield.experiments import fit_loglog_slope
from adamfield.field import (
    compare_first_order,
    estimate_field,
    estimate_field_derivative,
    inverse_moment_bound,
    inverse_moment_mc,
    moment_profile,
    perturbation_bound,
)
from adamfield.innovation import DiscreteLaw, UniformLaw, constant_innovation, preset, quadratic
from adamfield.io import read_csv
from adamfield.ode import partition_properties_check, rho_partition
from adamfield.schedule import StepSchedule
from adamfield.seq_space import DampingParams, g_bound, g_map, lrho_norm, rho_weights, translate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
COMMANDS = {
    "simulate": "simulate.toml",
    "field": "field.toml",
    "root": "root.toml",
    "validate-bounds": "validate_bounds.toml",
    "rates-gamma": "rates_gamma.toml",
    "rates-batch": "rates_batch.toml",
    "ode-compare": "ode_compare.toml",
    "gap-demo": "gap_demo.toml",
}


def _random_params(rng, n):
    out = []
    for _ in range(n):
        beta = rng.uniform(0.05, 0.999)
        out.append(DampingParams(rng.uniform(0, 0.999) * math.sqrt(beta), beta, 10 ** rng.uniform(-3, 1)))
    return out


def _random_histories(rng, n, depth, dim):
    """Histories of random length up to ``depth`` (zero beyond), entries spread over several decades."""
    x = rng.normal(size=(n, depth, dim)) * 10 ** rng.uniform(-3, 3, size=(n, 1, 1))
    lengths = rng.integers(1, depth + 1, size=n)
    x[np.arange(depth)[None, :] >= lengths[:, None]] = 0.0
    return x


# -- sequence space and the Adam step ----------------------------------------------


@pytest.mark.criterion(1)
def test_g_lipschitz_and_bound(criterion):
    rng = np.random.default_rng(20240)
    start = time.perf_counter()
    pairs = lip_bad = bound_bad = 0
    for p in _random_params(rng, 10):
        w = rho_weights(p, 64).values
        for dim in (1, 3):
            x = _random_histories(rng, 5000, 64, dim)
            y = _random_histories(rng, 5000, 64, dim)
            near = rng.random(5000) < 0.5  # half the pairs are small perturbations of each other
            y[near] = x[near] + 10 ** rng.uniform(-6, 0) * rng.normal(size=x[near].shape) * (x[near] != 0)
            gx, gy = g_map(x, p), g_map(y, p)
            lhs = np.linalg.norm(gx - gy, axis=1)
            rhs = np.linalg.norm(x - y, axis=2) @ w
            lip_bad += int(np.sum(lhs > rhs * (1 + 1e-12) + 1e-15))
            bound_bad += int(np.sum(np.linalg.norm(gx, axis=1) > g_bound(p, dim) * (1 + 1e-12)))
            pairs += 5000
    elapsed = time.perf_counter() - start
    ok = pairs == 100_000 and lip_bad == 0 and bound_bad == 0 and elapsed < 30
    criterion(ok, f"{pairs} pairs, Lipschitz violations {lip_bad}, bound violations {bound_bad}, {elapsed:.1f} s")


@pytest.mark.criterion(2)
def test_weight_and_translation_contraction(criterion):
    rng = np.random.default_rng(7)
    weight_bad = trans_bad = 0
    params = _random_params(rng, 50)
    for p in params:
        w = rho_weights(p, 500).values
        weight_bad += int(np.sum(w[1:] > p.sqrt_beta * w[:-1] * (1 + 1e-12)))
    for i in range(10_000):
        p = params[i % len(params)]
        x = _random_histories(rng, 1, 64, 1 + i % 3)[0]
        trans_bad += lrho_norm(translate(x), p) > p.sqrt_beta * lrho_norm(x, p) * (1 + 1e-12)
    criterion(weight_bad == 0 and trans_bad == 0,
              f"weight violations {weight_bad} over 50 parameter sets, translation violations {trans_bad} of 10000")


@pytest.mark.criterion(3)
def test_adam_step_oracle(criterion):
    s = adam_step(AdamState.zeros(1), [2.0], DampingParams(0.0, 0.75, 1.0), 1.0)
    hand = abs(s.theta[0] - 2 / 3) <= 1e-15
    p = DampingParams(0.9, 0.99, 0.1)
    tr = run_adam(AdamState.zeros(1, theta=[0.1]), preset("uniform"), p, StepSchedule.preset("inv_n_2_3"), 100,
                  seed=4, keep_inputs=True)
    x = tr.x[1:, 0]
    direct = (1 - p.alpha) * math.fsum(p.alpha ** (100 - k) * x[k - 1] for k in range(1, 101))
    rel = abs(tr.m[-1, 0] - direct) / abs(direct)
    criterion(hand and rel <= 1e-12, f"theta_1 = {float(s.theta[0])!r}, m_100 relative error {rel:.1e}")


@pytest.mark.criterion(4)
def test_partition_oracle(criterion):
    start = time.perf_counter()
    inv = StepSchedule.preset("inv_n")
    pts = [int(n) for n in rho_partition(inv, 0, 1.0, count=4).points[1:]]
    rep = partition_properties_check(rho_partition(inv, 8, 1.0, count=50), 1.0)
    elapsed = time.perf_counter() - start
    ok = pts == [1, 2, 3, 5] and rep.ok and rep.windows == 50 and elapsed < 1
    criterion(ok, f"n_1..n_4 = {pts}, {rep.windows} windows with {len(rep.violations)} violations "
                  f"(K = {rep.K:.4g}), {elapsed:.2f} s")


# -- field ----------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_field_identities(criterion):
    start = time.perf_counter()
    p = DampingParams(0.9, 0.99, 0.1)
    one = quadratic(DiscreteLaw.point(1.0))  # X = U - theta = 1 at theta = 0
    f = estimate_field(one, [0.0], p, replicas=4).mean[0]
    df = estimate_field_derivative(one, 0.0, p, replicas=4).mean[0]
    sym = estimate_field(preset("symmetric"), [0.0], p, replicas=100_000, seed=5)
    elapsed = time.perf_counter() - start
    ok = (abs(f - 0.909091) <= 1e-6 and abs(df + 0.0826446) <= 1e-6
          and abs(sym.mean[0]) <= 3 * sym.std_error[0] and elapsed < 120)
    criterion(ok, f"f = {f:.7f}, f' = {df:.7f}, symmetric f(E[U]) = {sym.mean[0]:.2e} "
                  f"+- {sym.std_error[0]:.1e}, {elapsed:.1f} s")


@pytest.mark.criterion(6)
def test_perturbation_bound_grid(criterion):
    start = time.perf_counter()
    theta = 0.5
    misses, gaps = [], []
    innovations = [("deterministic", constant_innovation(1.0), 4), ("symmetric", preset("symmetric"), 4000),
                   ("asymmetric", preset("asymmetric"), 4000)]
    for beta in (0.9, 0.99, 0.999):
        p = DampingParams(0.9, beta, 0.1)
        for name, inn, reps in innovations:
            cmp = compare_first_order(inn, [theta], p, replicas=reps, seed=1, method="paired")
            prof = moment_profile(inn, [theta], p, replicas=min(reps, 2000), seed=2)
            bound = perturbation_bound(prof, p)[0]
            bound_se = bound * prof.se["w35"][0] / prof.inverse["w35"][0]
            gap, se = abs(cmp.gap[0]), math.hypot(cmp.gap_se[0], bound_se)
            if gap > bound + 3 * se:
                misses.append((beta, name, gap, bound))
            if name == "asymmetric":
                gaps.append(gap)
    slope = fit_loglog_slope([0.1, 0.01, 0.001], gaps).slope
    elapsed = time.perf_counter() - start
    ok = not misses and abs(slope - 2) <= 0.3 and elapsed < 600
    criterion(ok, f"9 cells, {len(misses)} above bound, asymmetric gap slope {slope:.3f}, {elapsed:.1f} s")


@pytest.mark.criterion(7)
def test_inverse_moment_bound(criterion):
    beta = 0.99
    depth = DampingParams(0.0, beta, 1.0).default_depth()
    rad_ok = True
    for p in (0.5, 1.0, 2.0):
        mean, se = inverse_moment_mc(DiscreteLaw((-1.0, 1.0), (0.5, 0.5)), beta, p, depth, 100)
        bound = inverse_moment_bound(beta, 1.0, p, 0.0)
        rad_ok &= abs(mean - 1.0) <= 1e-9 and se <= 1e-9 and bound == pytest.approx((1 / (1 - beta)) ** p)
    # Z uniform on [-1, 1]: P(Z^2 < 1/4) = 1/2
    mean, se = inverse_moment_mc(UniformLaw(-1.0, 1.0), beta, 0.5, depth, 100_000, seed=3)
    bound = inverse_moment_bound(beta, 0.25, 0.5, 0.5)
    ok = rad_ok and mean - 3 * se <= bound
    criterion(ok, f"Rademacher exact: {rad_ok}; uniform E[v^-1/2] = {mean:.4f} +- {se:.1e} <= bound {bound:.4f}")


# -- CLI experiments ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    runs = {}
    for cmd, cfg in COMMANDS.items():
        out = root / "first" / cmd
        start = time.perf_counter()
        code = main([cmd, "--config", str(CONFIGS / cfg), "--out", str(out)])
        runs[cmd] = {"out": out, "code": code, "seconds": time.perf_counter() - start}
    return root, runs


def _results(run, cmd):
    return json.loads((run["out"] / f"{cmd}.manifest.json").read_text())["results"]


@pytest.mark.criterion(8)
def test_bound_suite(cli_runs, criterion):
    run = cli_runs[1]["validate-bounds"]
    header, rows = read_csv(run["out"] / "bounds.csv")
    col = {h: i for i, h in enumerate(header)}
    ids = {r[col["bound_id"]] for r in rows}
    failed = [r for r in rows if r[col["pass"]] != "1"]
    min_ratio = min(float(r[col["ratio"]]) for r in rows)
    ok = ids == {"I", "II", "III", "IV.a", "IV.b"} and not failed and min_ratio >= 1 and run["seconds"] < 900
    criterion(ok, f"{len(rows)} window checks over {sorted(ids)}, {len(failed)} failed, "
                  f"min ratio {min_ratio:.3g}, {run['seconds']:.0f} s")


@pytest.mark.criterion(9)
def test_rate_in_gamma(cli_runs, criterion):
    run = cli_runs[1]["rates-gamma"]
    fit = _results(run, "rates-gamma")["fit"]
    ok = 0.4 <= fit["slope"] <= 0.6 and run["seconds"] < 1800
    criterion(ok, f"slope {fit['slope']:.4f} +- {fit['slope_se']:.3f}, {run['seconds']:.0f} s")


@pytest.mark.criterion(10)
def test_rate_in_batch(cli_runs, criterion):
    run = cli_runs[1]["rates-batch"]
    res = _results(run, "rates-batch")
    header, rows = read_csv(run["out"] / "rates_batch.csv")
    col = {h: i for i, h in enumerate(header)}
    batches = [int(r[col["M"]]) for r in rows]
    excl = all(float(r[col["ci_low"]]) > 0 or float(r[col["ci_high"]]) < 0
               for r in rows if int(r[col["M"]]) <= 64)
    slope = res["fit"]["slope"] if res["fit"] else math.nan
    ok = batches == [8, 16, 32, 64, 128, 256] and -1.15 <= slope <= -0.85 and excl and run["seconds"] < 1800
    criterion(ok, f"slope {slope:.4f} +- {res['fit']['slope_se']:.3f}, CIs exclude 0 for M <= 64: {excl}, "
                  f"{run['seconds']:.0f} s")


@pytest.mark.criterion(11)
def test_equilibrium_is_not_critical_point(cli_runs, criterion):
    res = _results(cli_runs[1]["gap-demo"], "gap-demo")
    grad_excl = res["gradient_ci_low"] > 0 or res["gradient_ci_high"] < 0
    field_zero = res["check_ci_low"] <= 0 <= res["check_ci_high"]
    criterion(grad_excl and field_zero,
              f"M = {res['batch']}: E[U] - theta* CI [{res['gradient_ci_low']:.3e}, {res['gradient_ci_high']:.3e}], "
              f"f(theta*) CI [{res['check_ci_low']:.2e}, {res['check_ci_high']:.2e}]")


@pytest.mark.criterion(12)
def test_ode_shadowing(cli_runs, criterion):
    run = cli_runs[1]["ode-compare"]
    header, rows = read_csv(run["out"] / "ode_compare.csv")
    sups = np.array([float(r[1]) for r in rows])
    spread = float(np.max(np.abs(sups / sups.mean() - 1)))
    ok = len(sups) == 5 and spread <= 0.2 and np.all(np.isfinite(sups))
    criterion(ok, f"sup scaled distance per seed {np.round(sups, 4).tolist()}, constant {sups.max():.4f}, "
                  f"spread {spread:.1%}")


@pytest.mark.criterion(13)
def test_reruns_are_byte_identical(cli_runs, criterion):
    root, runs = cli_runs
    differ, checked = [], 0
    for cmd, run in runs.items():
        again = root / "rerun" / cmd
        code = main(["rerun", str(run["out"] / f"{cmd}.manifest.json"), "--out", str(again)])
        if code != run["code"]:
            differ.append(f"{cmd}: exit {code} != {run['code']}")
        for csv in sorted(run["out"].glob("*.csv")):
            checked += 1
            if csv.read_bytes() != (again / csv.name).read_bytes():
                differ.append(f"{cmd}/{csv.name}")
    criterion(not differ, f"{checked} CSV files over {len(runs)} commands, differing: {differ or 'none'}")
