"""Experiment configs, log-log rate fits and the headline experiments."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .adam import AdamState, NumericFailure, run_adam_batch
from .field import (
    FieldError,
    ZeroEstimate,
    chain_samples,
    compare_first_order,
    estimate_field_derivative,
    find_zero,
    frozen_field,
    moment_profile,
    perturbation_bound,
)
from .innovation import InnovationSpec, minibatch_innovation
from .ode import integrate_ode, shadow_statistic
from .schedule import StepSchedule
from .seq_space import DampingParams


class ConfigError(ValueError):
    """Unknown or malformed configuration entry."""


# ---------------------------------------------------------------------------
# configuration


_RUN_KEYS = {"batch_sizes", "replicas", "horizon", "seeds", "output_dir"}


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; ``options`` holds command-specific settings.

    The schedule and innovation are kept in their file form (see
    :meth:`StepSchedule.from_dict` and :meth:`InnovationSpec.from_dict`) so that
    a config written and read back is identical.
    """

    params: DampingParams = field(default_factory=lambda: DampingParams(0.9, 0.99, 0.1))
    schedule: dict = field(default_factory=lambda: {"preset": "inv_n_2_3"})
    innovation: dict = field(default_factory=lambda: {"preset": "asymmetric"})
    batch_sizes: list = field(default_factory=lambda: [1])
    replicas: int = 200
    horizon: int = 10_000
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "out"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.batch_sizes or any(int(m) < 1 for m in self.batch_sizes):
            raise ConfigError("batch_sizes must be a non-empty list of positive integers")
        if self.replicas < 1 or self.horizon < 1:
            raise ConfigError("replicas and horizon must be >= 1")
        if not self.seeds or any(int(s) < 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        self.batch_sizes = [int(m) for m in self.batch_sizes]
        self.seeds = [int(s) for s in self.seeds]

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def schedule_obj(self) -> StepSchedule:
        try:
            return StepSchedule.from_dict(self.schedule)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad [schedule]: {exc}") from exc

    def base_innovation(self) -> InnovationSpec:
        try:
            return InnovationSpec.from_dict(self.innovation)
        except (KeyError, ValueError, TypeError, OSError) as exc:
            raise ConfigError(f"bad [innovation]: {exc}") from exc

    def innovation_for(self, batch: int) -> InnovationSpec:
        base = self.base_innovation()
        return minibatch_innovation(base, batch) if batch != 1 else base

    def option(self, key: str, default=None):
        return self.options.get(key, default)

    def to_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "schedule": dict(self.schedule),
            "innovation": dict(self.innovation),
            "run": {
                "batch_sizes": list(self.batch_sizes),
                "replicas": self.replicas,
                "horizon": self.horizon,
                "seeds": list(self.seeds),
                "output_dir": self.output_dir,
            },
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"params", "schedule", "innovation", "run", "options"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        run = d.get("run", {})
        bad = set(run) - _RUN_KEYS
        if bad:
            raise ConfigError(f"unknown [run] keys: {sorted(bad)}")
        try:
            params = DampingParams(**d.get("params", {"alpha": 0.9, "beta": 0.99, "epsilon": 0.1}))
        except TypeError as exc:
            raise ConfigError(f"bad [params]: {exc}") from exc
        defaults = cls.__dataclass_fields__
        return cls(
            params=params,
            schedule=d.get("schedule", defaults["schedule"].default_factory()),
            innovation=d.get("innovation", defaults["innovation"].default_factory()),
            batch_sizes=run.get("batch_sizes", [1]),
            replicas=int(run.get("replicas", 200)),
            horizon=int(run.get("horizon", 10_000)),
            seeds=run.get("seeds", [0]),
            output_dir=str(run.get("output_dir", "out")),
            options=d.get("options", {}),
        )

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# rate fits


@dataclass(frozen=True)
class RateFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    residual: float
    slope_se: float
    window: tuple[float, float]

    def predict(self, x) -> np.ndarray:
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual,
                "slope_se": self.slope_se, "window": list(self.window), "points": len(self.x)}


def fit_loglog_slope(x, y, window: tuple[float, float] | None = None) -> RateFit:
    """Least squares line through ``(log x, log y)``.

    ``residual`` is the root-mean-square log residual; ``window`` restricts the
    fit to ``window[0] <= x <= window[1]``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    if window is not None:
        keep = (x >= window[0]) & (x <= window[1])
        x, y = x[keep], y[keep]
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0) or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("log-log fit needs finite positive values")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    dof = len(x) - 2
    s2 = float(res @ res) / dof if dof > 0 else 0.0
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    slope_se = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    rms = float(np.sqrt(np.mean(res**2)))
    if rms < 1e-13:
        rms = 0.0
    return RateFit(x, y, float(coef[0]), float(coef[1]), rms, slope_se, (float(x.min()), float(x.max())))


# ---------------------------------------------------------------------------
# root finding helpers


def _root(cfg: ExperimentConfig, batch: int, seed: int | None = None) -> ZeroEstimate:
    inn = cfg.innovation_for(batch)
    mu = inn.mean_u
    width = float(cfg.option("root_halfwidth", 0.5))
    return find_zero(
        inn,
        cfg.params,
        (mu - width, mu + width),
        tol_theta=float(cfg.option("tol_theta", 1e-7)),
        chains=tuple(cfg.option("chains", (16, 1024))),
        chain_length=cfg.option("chain_length"),
        seed=cfg.seed if seed is None else seed,
    )


def root_row(batch: int, z: ZeroEstimate, mean_u: float) -> dict:
    return {
        "M": batch,
        "theta_star": z.theta_star,
        "gap": z.theta_star - mean_u,
        "ci_low": z.ci_low - mean_u,
        "ci_high": z.ci_high - mean_u,
        "se": z.se,
        "f_at_root": z.f_at_root,
        "f_se": z.f_se,
        "slope": z.slope,
        "chains": z.chains,
        "converged": z.converged,
    }


ROOT_COLUMNS = ["M", "theta_star", "gap", "ci_low", "ci_high", "se", "f_at_root", "f_se", "slope", "chains", "converged"]


# ---------------------------------------------------------------------------
# rate in the step size


@dataclass
class GammaRateResult:
    theta_star: float
    n: np.ndarray
    gamma: np.ndarray
    distance: np.ndarray
    fit: RateFit | None
    p: float
    replicas: int
    excluded: list
    degenerate: bool = False

    COLUMNS = ["n", "gamma_n", "lp_distance"]

    def rows(self):
        for i in range(len(self.n)):
            yield [int(self.n[i]), self.gamma[i], self.distance[i]]


def geometric_marks(horizon: int, per_decade: int = 10) -> np.ndarray:
    k = np.unique(np.round(np.logspace(0, math.log10(horizon), per_decade * max(1, int(math.log10(horizon))) + 1)))
    return k.astype(np.int64)


def run_rate_in_gamma(cfg: ExperimentConfig, theta_star: float | None = None) -> GammaRateResult:
    """Empirical ``L^p`` distance of the iterates to the equilibrium against ``gamma_n``."""
    batch = cfg.batch_sizes[0]
    inn = cfg.innovation_for(batch)
    if inn.kind != "quadratic":
        if inn.kind == "constant":
            raise ConfigError("rate in gamma needs a noisy quadratic innovation")
        raise ConfigError("rate in gamma needs a quadratic innovation")
    p = float(cfg.option("p", 2.0))
    if theta_star is None:
        theta_star = _root(cfg, batch).theta_star
    sched = cfg.schedule_obj()
    marks = geometric_marks(cfg.horizon, int(cfg.option("marks_per_decade", 10)))
    theta0 = float(cfg.option("theta0_offset", 0.5)) + theta_star
    run = run_adam_batch(AdamState.zeros(1, theta=[theta0]), inn, cfg.params, sched, cfg.horizon, cfg.seed,
                         cfg.replicas, record_steps=marks)
    n = run.n[1:]
    dist = np.mean(np.abs(run.theta[:, 1:, 0] - theta_star) ** p, axis=0) ** (1 / p)
    gam = sched.gamma(n + 1)
    degenerate = inn.batch_law() is not None and inn.batch_law().var == 0
    fit = None
    if not degenerate:
        lo = float(cfg.option("fit_from", cfg.horizon / 100))
        keep = n >= lo
        fit = fit_loglog_slope(gam[keep], dist[keep])
    return GammaRateResult(theta_star, n, gam, dist, fit, p, cfg.replicas - len(run.failed), run.failed, degenerate)


# ---------------------------------------------------------------------------
# rate in the batch size


@dataclass
class BatchRateResult:
    rows: list
    fit: RateFit | None
    degenerate: bool
    predicted_sign: int
    signs_match: bool
    failures: dict


def first_order_sign(inn: InnovationSpec) -> int:
    """Sign of the equilibrium shift predicted by the skew term of the first-order field.

    At ``theta = E[U]`` the drift term vanishes and the skew term is a negative
    factor times ``E[X^3]``; the field is decreasing, so the zero moves in the
    direction of ``-E[X^3]``.
    """
    m3 = inn.x_moment(3, inn.mean_u)
    if m3 is None:
        raise ConfigError("third moment of the innovation is not available")
    return int(-np.sign(round(m3, 14)))


def run_rate_in_batch(cfg: ExperimentConfig) -> BatchRateResult:
    base = cfg.base_innovation()
    rows, failures = [], {}
    for m in cfg.batch_sizes:
        try:
            z = _root(cfg, m)
        except (FieldError, NumericFailure) as exc:
            failures[m] = str(exc)
            continue
        rows.append(root_row(m, z, base.mean_u))
    sign = first_order_sign(base)
    excl = [r for r in rows if r["ci_low"] > 0 or r["ci_high"] < 0]
    degenerate = sign == 0 or not excl
    fit = None
    if not degenerate and len(rows) >= 3:
        fit = fit_loglog_slope([r["M"] for r in rows], [abs(r["gap"]) for r in rows])
    match = all(int(np.sign(r["gap"])) == sign for r in excl)
    return BatchRateResult(rows, fit, degenerate, sign, match, failures)


# ---------------------------------------------------------------------------
# equilibrium versus critical point


@dataclass
class GapReport:
    batch: int
    theta_star: float
    mean_u: float
    gap: float
    gap_ci: tuple[float, float]
    gradient_proxy: float
    gradient_ci: tuple[float, float]
    field_at_root: float
    field_ci: tuple[float, float]
    check_field: float
    check_ci: tuple[float, float]
    se: float

    @property
    def gap_excludes_zero(self) -> bool:
        return self.gap_ci[0] > 0 or self.gap_ci[1] < 0

    @property
    def field_contains_zero(self) -> bool:
        return self.check_ci[0] <= 0 <= self.check_ci[1]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["gap_excludes_zero"] = self.gap_excludes_zero
        d["field_contains_zero"] = self.field_contains_zero
        return d


def run_gap_demo(cfg: ExperimentConfig, z: float = 3.0) -> GapReport:
    """Adam's equilibrium next to the objective's critical point ``E[U]``.

    For the quadratic objective ``F(theta) = E|U - theta|^2 / 2`` the negative
    gradient at the equilibrium is ``E[U] - theta*``.  The field at the
    estimated equilibrium is re-evaluated on independent chains, so its
    confidence interval is a genuine check rather than a by-product of the fit;
    the interval also carries the equilibrium's own standard error.
    """
    m = cfg.batch_sizes[0]
    inn = cfg.innovation_for(m)
    zr = _root(cfg, m)
    mu = inn.mean_u
    gap_ci = (zr.ci_low - mu, zr.ci_high - mu)
    chains = int(cfg.option("check_chains", zr.chains))
    cs = chain_samples(inn, [zr.theta_star], cfg.params, zr.depth, zr.chain_length, chains, cfg.seed + 1)
    adj = cs.adjusted("g")[:, 0]
    fm, fse = float(adj.mean()), float(adj.std(ddof=1) / math.sqrt(chains))
    # the checked point is itself uncertain: add its error propagated through f'
    fse = math.hypot(fse, zr.slope * zr.se)
    return GapReport(
        m, zr.theta_star, mu, zr.theta_star - mu, gap_ci,
        mu - zr.theta_star, (mu - zr.ci_high, mu - zr.ci_low),
        zr.f_at_root, (zr.f_at_root - z * zr.f_se, zr.f_at_root + z * zr.f_se),
        fm, (fm - z * fse, fm + z * fse), zr.se,
    )


def gap_vs_beta(cfg: ExperimentConfig, betas=(0.9, 0.99, 0.999)) -> list[dict]:
    """Equilibrium shift at fixed batch size for several second-moment factors."""
    out = []
    for b in betas:
        params = DampingParams(cfg.params.alpha, b, cfg.params.epsilon)
        sub = ExperimentConfig(params, cfg.schedule, cfg.innovation, cfg.batch_sizes, cfg.replicas, cfg.horizon,
                               cfg.seeds, cfg.output_dir, cfg.options)
        r = run_gap_demo(sub)
        out.append({"beta": b, "gap": r.gap, "ci_low": r.gap_ci[0], "ci_high": r.gap_ci[1]})
    return out


# ---------------------------------------------------------------------------
# sufficiently large batch


@dataclass
class M0Result:
    m0: int | None
    table: list


def resolve_m0(cfg: ExperimentConfig, box: tuple[float, float], candidates=(1, 2, 4, 8, 16, 32, 64),
               grid: int = 9, chains: int = 64, z: float = 3.0) -> M0Result:
    """Smallest candidate batch size whose field derivative is negative with margin on a grid over ``box``."""
    thetas = np.linspace(box[0], box[1], grid)
    table = []
    for m in candidates:
        inn = cfg.innovation_for(m)
        depth = cfg.params.default_depth(cap=20_000)
        cs = chain_samples(inn, thetas, cfg.params, depth, 5 * depth, chains, cfg.seed)
        d = cs.adjusted("deriv")
        mean = d.mean(axis=0)
        se = d.std(axis=0, ddof=1) / math.sqrt(chains)
        ok = bool(np.all(mean + z * se < 0))
        table.append({"M": m, "max_upper": float(np.max(mean + z * se)), "ok": ok})
        if ok:
            return M0Result(m, table)
    return M0Result(None, table)


# ---------------------------------------------------------------------------
# ODE comparison


@dataclass
class OdeCompareResult:
    theta_star: float
    sups: list
    constant: float
    stable: bool
    spread: float
    oracle_se: float
    per_seed: list = field(repr=False, default_factory=list)


def run_ode_compare(cfg: ExperimentConfig, theta_star: float | None = None, tolerance: float = 0.2) -> OdeCompareResult:
    """``sup_n`` of the ``L^p`` distance to the ODE path over ``sqrt(gamma_(n+1))``, for every seed.

    The runs and the ODE both start at the equilibrium (or at
    ``options.theta0_offset`` from it).  The ODE field is a frozen Chebyshev
    interpolant of common-random-number chain estimates on a box around the
    start.
    """
    m = cfg.batch_sizes[0]
    inn = cfg.innovation_for(m)
    if theta_star is None:
        theta_star = _root(cfg, m).theta_star
    sched = cfg.schedule_obj()
    theta0 = theta_star + float(cfg.option("theta0_offset", 0.0))
    half = float(cfg.option("box_halfwidth", 1.0))
    oracle = frozen_field(inn, cfg.params, theta0 - half, theta0 + half, n_nodes=int(cfg.option("oracle_nodes", 24)),
                          chains=int(cfg.option("oracle_chains", 64)), seed=cfg.seed)
    times = sched.times(cfg.horizon)
    ode = integrate_ode(oracle, [theta0], times, substeps=int(cfg.option("substeps", 2)), oracle_kind="frozen-chebyshev")
    p = float(cfg.option("p", 2.0))
    sups, per_seed = [], []
    for s in cfg.seeds:
        run = run_adam_batch(AdamState.zeros(1, theta=[theta0]), inn, cfg.params, sched, cfg.horizon, s, cfg.replicas)
        st = shadow_statistic(run, ode, sched, p)
        sups.append(st.sup)
        per_seed.append(st)
    mean = float(np.mean(sups))
    spread = float(np.max(np.abs(np.array(sups) / mean - 1)))
    return OdeCompareResult(theta_star, sups, float(np.max(sups)), spread <= tolerance, spread, oracle.max_std_error,
                            per_seed)


# ---------------------------------------------------------------------------
# field sweeps


FIELD_COLUMNS = ["theta", "f_mean", "f_stderr", "ftilde_mean", "ftilde_stderr", "bound_thm71", "N", "K"]


def field_sweep(cfg: ExperimentConfig, thetas, batch: int | None = None, method: str = "factored") -> list[list]:
    """Field, first-order field and perturbation bound on a theta grid (d = 1)."""
    inn = cfg.innovation_for(cfg.batch_sizes[0] if batch is None else batch)
    rows = []
    depth = cfg.option("depth")
    for th in thetas:
        cmp = compare_first_order(inn, [th], cfg.params, depth, cfg.replicas, cfg.seed, method)
        prof = moment_profile(inn, [th], cfg.params, depth, cfg.replicas, cfg.seed)
        bound = perturbation_bound(prof, cfg.params) if prof.feasible else np.array([math.inf])
        rows.append([float(th), cmp.field.mean[0], cmp.field.std_error[0], cmp.first_order.mean[0],
                     cmp.first_order.std_error[0], bound[0], cmp.field.replicas, cmp.field.depth])
    return rows


def derivative_row(cfg: ExperimentConfig, theta: float) -> dict:
    inn = cfg.innovation_for(cfg.batch_sizes[0])
    est = estimate_field_derivative(inn, theta, cfg.params, replicas=cfg.replicas, seed=cfg.seed)
    return {"theta": theta, "dfdtheta": float(est.mean[0]), "se": float(est.std_error[0])}
