"""The ODE companion of Adam, rho-partitions, approximation processes and bound reports.

Index conventions: a run started at step ``n0`` stores states for
``n = n0, ..., n0 + N``; increments are indexed by the step that produces
them (``k = n0 + 1, ..., n0 + N``).  A partition is stored as its points
``n_0 < n_1 < ... < n_L`` and window ``l`` is ``(n_{l-1}, n_l]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from . import _kernels
from .adam import BatchRun, NumericFailure, Trajectory
from .innovation import InnovationSpec
from .io import fmt, write_csv
from .rng import TAG_AUX, stream
from .schedule import StepSchedule, schedule_ratios
from .seq_space import DampingParams, rho_weights

PARTITION_RTOL = 1e-12


# ---------------------------------------------------------------------------
# rho-partitions


@dataclass(frozen=True)
class RhoPartition:
    schedule: StepSchedule
    n0: int
    rho: float
    points: np.ndarray

    @property
    def count(self) -> int:
        return len(self.points) - 1

    @property
    def last(self) -> int:
        return int(self.points[-1])

    def windows(self) -> list[tuple[int, int]]:
        p = self.points
        return [(int(p[i]), int(p[i + 1])) for i in range(len(p) - 1)]

    def times(self) -> np.ndarray:
        return self.schedule.times(self.last + 1)[self.points]

    def widths(self) -> np.ndarray:
        return np.diff(self.times())

    def maximality_violations(self) -> list[int]:
        """Windows ``l`` that are too long or could have been extended by one step."""
        t = self.schedule.times(self.last + 1)
        bad = []
        for ell, (a, b) in enumerate(self.windows(), start=1):
            thr = self.rho * math.sqrt(self.schedule.gamma(a + 1))
            tol = PARTITION_RTOL * max(1.0, t[a] + thr)
            if not (t[b] - t[a] <= thr + tol and t[b + 1] - t[a] > thr + tol):
                bad.append(ell)
        return bad


def rho_partition(schedule: StepSchedule, n0: int, rho: float, count: int | None = None,
                  horizon: int | None = None) -> RhoPartition:
    """First ``count`` windows (or every window ending at or before ``horizon``).

    Each ``n_l`` is the largest index with ``t_{n_l} - t_{n_{l-1}} <= rho * sqrt(gamma_{n_{l-1}+1})``;
    the comparison allows a relative rounding tolerance of ``1e-12``.
    """
    if count is None and horizon is None:
        raise ValueError("give count or horizon")
    if n0 < 0:
        raise ValueError("n0 must be >= 0")
    if rho < math.sqrt(schedule.gamma(n0 + 1)) * (1 - PARTITION_RTOL):
        raise ValueError(f"rho = {rho} is below sqrt(gamma_(n0+1)) = {math.sqrt(schedule.gamma(n0 + 1))}")
    cap = max(2 * n0 + 64, (horizon or 0) + 2)
    t = schedule.times(cap)
    pts = [n0]
    while count is None or len(pts) - 1 < count:
        a = pts[-1]
        thr = rho * math.sqrt(schedule.gamma(a + 1))
        target = t[a] + thr + PARTITION_RTOL * max(1.0, t[a] + thr)
        b = int(np.searchsorted(t, target, side="right")) - 1
        if b >= len(t) - 1:
            if horizon is not None and len(t) - 1 > horizon:
                break
            cap *= 2
            t = schedule.times(cap)
            continue
        if b <= a:
            raise ValueError(f"empty window after n = {a}: the schedule increases or rho is too small")
        if horizon is not None and b > horizon:
            break
        pts.append(b)
    return RhoPartition(schedule, n0, float(rho), np.array(pts, dtype=np.int64))


@dataclass(frozen=True)
class PartitionReport:
    zeta: float
    K: float
    windows: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def partition_properties_check(partition: RhoPartition, zeta: float) -> PartitionReport:
    """Check the window-length and step-ratio properties of a partition.

    Violations are listed as ``(l, check, lhs, rhs)``.
    """
    s, n0, rho = partition.schedule, partition.n0, partition.rho
    g1 = s.gamma(n0 + 1)
    if not zeta * rho * math.sqrt(g1) < 1:
        raise ValueError(f"need zeta * rho * sqrt(gamma_(n0+1)) < 1, got {zeta * rho * math.sqrt(g1)}")
    last = partition.last + 1
    ratios = schedule_ratios(s, last)[n0:]
    if np.any(ratios > zeta * (1 + 1e-12)):
        n_bad = int(np.argmax(ratios > zeta * (1 + 1e-12))) + n0 + 1
        raise ValueError(f"(gamma_n - gamma_(n+1)) / gamma_n^2 exceeds zeta = {zeta} at n = {n_bad}")
    K = 1.0 / (1.0 - zeta * rho * math.sqrt(g1))
    t = s.times(last)
    viol = []
    for ell, (a, b) in enumerate(partition.windows(), start=1):
        ga, gb = s.gamma(a + 1), s.gamma(b + 1)
        dt = t[b] - t[a]
        if ga < rho * rho:
            lhs, rhs = math.sqrt(ga), dt / (rho - math.sqrt(ga))
            if lhs > rhs * (1 + 1e-12):
                viol.append((ell, "window-length", lhs, rhs))
        ratio = ga / gb
        if ratio > K * (1 + 1e-12):
            viol.append((ell, "ratio<=K", ratio, K))
        if ratio > (1 + zeta * K * dt) * (1 + 1e-12):
            viol.append((ell, "ratio<=1+zeta*K*dt", ratio, 1 + zeta * K * dt))
    return PartitionReport(zeta, K, partition.count, viol)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class KappaConstants:
    k1: float
    k2: float
    k3: float
    k4: float
    k5: float
    k6: float
    p: float
    c_p: float
    dim: int

    def as_dict(self) -> dict:
        return {f"kappa{i}": getattr(self, f"k{i}") for i in range(1, 7)} | {"p": self.p, "C_p": self.c_p}


def kappa_constants(params: DampingParams, p: float, c_p: float = 4.0, dim: int = 1) -> KappaConstants:
    if p < 2 or c_p <= 0:
        raise ValueError("need p >= 2 and C_p > 0")
    b, sb = params.beta, params.sqrt_beta
    w = rho_weights(params, 1)
    rho0, ell1 = float(w.values[0]), w.ell1_total
    k1 = 2.0 / (1.0 - b**1.5)
    k2 = k1 * (rho0 / (1 - b) + ell1)
    k3 = params.cs_factor * dim * ell1
    k4 = 2.0 * ell1 / (1 - sb)
    k5 = 1.0 / (1 - sb)
    k6 = 2.0 * c_p * (math.sqrt(rho0 * ell1) / (1 - sb) + ell1)
    return KappaConstants(k1, k2, k3, k4, k5, k6, float(p), float(c_p), dim)


@dataclass(frozen=True)
class Regularity:
    """p-regularity parameters on a box: second-moment bound, centred p-th moment bound, Lipschitz constant."""

    C: float
    C_tilde: float
    L_tilde: float
    exact: bool


def p_regularity(innovation: InnovationSpec, box: tuple[float, float], p: float, samples: int = 100_000,
                 seed: int = 0, inflation: float = 1.1) -> Regularity:
    """Regularity parameters of a quadratic or constant innovation on ``[lo, hi]^d``.

    Exact law moments are used when the batch-mean law is known; otherwise the
    moments are estimated and inflated by ``inflation``.
    """
    lo, hi = box
    d = innovation.dim
    if innovation.kind == "constant":
        c = abs(float(innovation.constant)) * math.sqrt(d)
        return Regularity(c, 0.0, 0.0, True)
    if innovation.kind != "quadratic":
        raise ValueError("regularity is implemented for quadratic and constant innovations")
    law = innovation.batch_law()
    mu = innovation.mean_u
    dev2 = max((mu - lo) ** 2, (mu - hi) ** 2)
    if law is not None and d == 1:
        var = law.var
        ct = law.moment(p, center=mu, absolute=True) ** (1 / p)
        return Regularity(math.sqrt(var + dev2), ct, 1.0, True)
    u = innovation.sample_u(stream(seed, TAG_AUX, 0), samples)
    var = float(np.mean(np.sum((u - mu) ** 2, axis=1)))
    ct = float(np.mean(np.linalg.norm(u - mu, axis=1) ** p)) ** (1 / p)
    return Regularity(inflation * math.sqrt(var + d * dev2), inflation * ct, 1.0, False)


# ---------------------------------------------------------------------------
# ODE integration


@dataclass(frozen=True)
class OdePath:
    times: np.ndarray
    states: np.ndarray
    substeps: int
    oracle_kind: str = "closure"

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate_ode(field_oracle: Callable, psi0, times, substeps: int = 4, oracle_kind: str | None = None) -> OdePath:
    """Classical Runge-Kutta with ``substeps`` equal substeps per grid interval."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    times = np.asarray(times, dtype=float)
    psi = np.atleast_1d(np.asarray(psi0, dtype=float)).copy()
    out = np.empty((len(times), psi.shape[0]))
    out[0] = psi

    def f(x):
        return np.asarray(field_oracle(x), dtype=float).reshape(psi.shape)

    for j in range(len(times) - 1):
        h = (times[j + 1] - times[j]) / substeps
        for _ in range(substeps):
            k1 = f(psi)
            k2 = f(psi + 0.5 * h * k1)
            k3 = f(psi + 0.5 * h * k2)
            k4 = f(psi + h * k3)
            psi = psi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(psi)):
            raise NumericFailure(f"ODE state became non-finite on interval {j}")
        out[j + 1] = psi
    kind = oracle_kind or type(field_oracle).__name__
    return OdePath(times, out, substeps, kind)


# ---------------------------------------------------------------------------
# approximation processes


def as_batch(run: Trajectory | BatchRun) -> BatchRun:
    if isinstance(run, BatchRun):
        return run
    if not run.valid:
        raise NumericFailure("trajectory is invalid")
    inputs = None if run.inputs is None else run.inputs[None]
    return BatchRun(run.n, run.t, run.theta[None], run.m[None], run.v[None], inputs, [], [run.config])


@dataclass
class ApproxPaths:
    """Increments of Adam and its approximations on the steps ``n0+1 .. n_L``.

    All increment arrays have shape ``(R, n_L - n0, d)``.
    """

    n0: int
    gammas: np.ndarray
    theta: np.ndarray  # (R, n_L - n0 + 1, d)
    d_theta: np.ndarray
    d_Theta: np.ndarray
    d_ThetaTilde: np.ndarray
    d_ThetaTildeTilde: np.ndarray
    d_ThetaBar: np.ndarray
    field_at_start: np.ndarray  # (R, L, d): f(theta_{n_{l-1}}) per window
    partition: RhoPartition

    @staticmethod
    def _cum(d):
        z = np.zeros(d.shape[:1] + (1,) + d.shape[2:])
        return np.concatenate([z, np.cumsum(d, axis=1)], axis=1)

    @property
    def Theta(self):
        return self._cum(self.d_Theta)

    @property
    def ThetaTilde(self):
        return self._cum(self.d_ThetaTilde)

    @property
    def ThetaTildeTilde(self):
        return self._cum(self.d_ThetaTildeTilde)

    @property
    def ThetaBar(self):
        return self._cum(self.d_ThetaBar)


def _ema(x, coef, state):
    """``y_j = coef * y_{j-1} + (1 - coef) * x_j`` along axis 1 with ``y_{-1} = state``."""
    return lfilter([1.0 - coef], [1.0, -coef], x, axis=1, zi=(coef * state)[:, None, :])[0]


def approx_processes(run: Trajectory | BatchRun, partition: RhoPartition, params: DampingParams,
                     innovation: InnovationSpec, field_oracle: Callable, seed_aux: int,
                     depth: int | None = None) -> ApproxPaths:
    """Adam increments next to the frozen, stationarised and drift-only approximations.

    The run must have been recorded at every step with its inputs.  Inside each
    window the frozen approximation reuses the run's inputs at the parameter of
    the window start and continues from the run's moments; the stationarised one
    continues instead from moments of a fresh history drawn at that parameter
    (stream ``(seed_aux, TAG_AUX, l)``).
    """
    run = as_batch(run)
    if run.inputs is None:
        raise ValueError("approximation processes need the run's input history (keep_inputs=True)")
    if not innovation.compiled:
        raise ValueError("approximation processes need a quadratic or constant innovation")
    n0 = int(run.n[0])
    if n0 != partition.n0:
        raise ValueError(f"run starts at {n0}, partition at {partition.n0}")
    if len(run.n) < 2 or np.any(np.diff(run.n) != 1):
        raise ValueError("run must be recorded at every step (stride 1)")
    last = partition.last
    if last > run.n[-1]:
        raise ValueError(f"partition reaches {last}, run ends at {int(run.n[-1])}")
    steps = last - n0
    a_, b_, eps = params.alpha, params.beta, params.epsilon
    gam = partition.schedule.gammas(last)[n0:]
    theta = run.theta[:, : steps + 1]
    m, v = run.m[:, : steps + 1], run.v[:, : steps + 1]
    u = run.inputs[:, :steps]
    gcol = gam[None, :, None]
    d_theta = np.diff(theta, axis=1)
    d_Theta = gcol * m[:, 1:] / (eps + np.sqrt(v[:, 1:]))
    R, _, d = theta.shape
    d_T = np.empty_like(d_theta)
    d_TT = np.empty_like(d_theta)
    d_B = np.empty_like(d_theta)
    kl = innovation.kernel_law()
    depth = depth or params.default_depth(cap=20_000)
    f_start = np.empty((R, partition.count, d))
    quad = innovation.kind == "quadratic"
    for ell, (a, b) in enumerate(partition.windows(), start=1):
        ia, ib = a - n0, b - n0
        th_a = theta[:, ia]
        x = u[:, ia:ib] - th_a[:, None, :] if quad else np.full((R, ib - ia, d), kl.constant)
        g = gam[ia:ib][None, :, None]
        mt, vt = _ema(x, a_, m[:, ia]), _ema(x * x, b_, v[:, ia])
        d_T[:, ia:ib] = g * mt / (eps + np.sqrt(vt))
        ms, vs = _kernels.stationary_state(
            stream(seed_aux, TAG_AUX, ell), kl.code, kl.p0, kl.p1, kl.values, kl.cdf, kl.raw_batch,
            kl.map_code, kl.constant, np.ascontiguousarray(th_a), a_, b_, depth,
        )
        mtt, vtt = _ema(x, a_, ms), _ema(x * x, b_, vs)
        d_TT[:, ia:ib] = g * mtt / (eps + np.sqrt(vtt))
        fa = np.asarray(field_oracle(th_a), dtype=float).reshape(R, d)
        f_start[:, ell - 1] = fa
        d_B[:, ia:ib] = g * fa[:, None, :]
    return ApproxPaths(n0, gam, theta, d_theta, d_Theta, d_T, d_TT, d_B, f_start, partition)


# ---------------------------------------------------------------------------
# bound reports


@dataclass(frozen=True)
class BoundRow:
    bound_id: str
    window: int
    lhs: float
    rhs: float
    passed: bool

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return math.inf if self.rhs > 0 else 1.0
        return self.rhs / self.lhs


@dataclass
class BoundReport:
    rows: list[BoundRow]
    kappa: KappaConstants
    regularity: Regularity
    p: float

    HEADER = ["bound_id", "window", "lhs", "rhs", "ratio", "pass"]

    def by_bound(self) -> dict[str, list[BoundRow]]:
        out: dict[str, list[BoundRow]] = {}
        for r in self.rows:
            out.setdefault(r.bound_id, []).append(r)
        return out

    def summary(self) -> dict[str, dict]:
        return {
            k: {"windows": len(rs), "passed": sum(r.passed for r in rs), "min_ratio": min(r.ratio for r in rs)}
            for k, rs in self.by_bound().items()
        }

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self, path) -> None:
        write_csv(path, self.HEADER, ([r.bound_id, str(r.window), fmt(r.lhs), fmt(r.rhs), fmt(r.ratio),
                                       str(int(r.passed))] for r in self.rows))


def _lp(samples: np.ndarray, p: float, z: float) -> tuple[float, float]:
    """Empirical ``E[S^p]^(1/p)`` and its lower confidence value at ``z`` standard errors."""
    sp = samples**p
    mu = float(sp.mean())
    se = float(sp.std(ddof=1) / math.sqrt(len(sp))) if len(sp) > 1 else 0.0
    return mu ** (1 / p), max(mu - z * se, 0.0) ** (1 / p)


def alive_indicator(theta: np.ndarray, box: tuple[float, float]) -> np.ndarray:
    """``alive[:, j] = 1{exit index >= n0 + j}``: every state before ``n0 + j`` lies in the box."""
    inside = np.all((theta >= box[0]) & (theta <= box[1]), axis=2)
    ok = np.cumprod(inside, axis=1).astype(bool)
    return np.concatenate([np.ones((theta.shape[0], 1), bool), ok[:, :-1]], axis=1)


def prop_bounds_report(paths: ApproxPaths, params: DampingParams, regularity: Regularity, p: float,
                       box: tuple[float, float], x_norm: float = 0.0, c_p: float = 4.0,
                       z: float = 3.0) -> BoundReport:
    """Empirical left-hand sides against the explicit right-hand sides, window by window.

    A bound passes when the lower ``z``-standard-error confidence value of the
    empirical ``L^p`` norm does not exceed the right-hand side.  The
    conditional bounds are checked in unconditional ``L^p``.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    part = paths.partition
    d = paths.theta.shape[2]
    kap = kappa_constants(params, p, c_p, d)
    n0, b = paths.n0, params.beta
    C, Ct, Lt = regularity.C, regularity.C_tilde, regularity.L_tilde
    gam = paths.gammas
    t = part.schedule.times(part.last)
    alive = alive_indicator(paths.theta, box)  # alive[:, j] for n = n0 + j
    nrm = lambda arr: np.linalg.norm(arr, axis=-1)
    gap1 = nrm(paths.d_theta - paths.d_Theta) * alive[:, 1:]
    gap2 = nrm(paths.d_Theta - paths.d_ThetaTilde) * alive[:, 1:]
    gap3 = nrm(paths.d_ThetaTilde - paths.d_ThetaTildeTilde)
    drift = paths.d_ThetaTildeTilde - paths.d_ThetaBar
    tail1 = np.cumsum(gap1[:, ::-1], axis=1)[:, ::-1]
    c4b = 1.0 / (1.0 - 2.0 ** -(0.5 - 1.0 / p)) if p > 2 else math.inf
    rows = []

    def add(bid, ell, s, rhs):
        lhs, lower = _lp(s, p, z)
        rows.append(BoundRow(bid, ell, lhs, rhs, lower <= rhs))

    for ell, (a, bb) in enumerate(part.windows(), start=1):
        ia, ib = a - n0, bb - n0
        add("I", ell, tail1[:, ia], (kap.k1 * b ** (0.5 * (a + 1) - n0) * x_norm + kap.k2 * C) * gam[ia] * b ** (a + 1))
        dt = t[bb] - t[a]
        add("II", ell, gap2[:, ia:ib].sum(axis=1), kap.k3 * Lt * dt * dt)
        live = alive[:, ia + 1]
        add("III", ell, live * gap3[:, ia:ib].sum(axis=1),
            gam[ia] * (kap.k4 * C + kap.k5 * b ** ((a - n0) / 2) * x_norm))
        csum = np.cumsum(drift[:, ia:ib], axis=1)
        add("IV.a", ell, live * nrm(csum[:, -1]), kap.k6 * Ct * math.sqrt(float(np.sum(gam[ia:ib] ** 2))))
        if p > 2:
            add("IV.b", ell, live * nrm(csum).max(axis=1), c4b * kap.k6 * Ct * gam[ia] * math.sqrt(bb - a))
    return BoundReport(rows, kap, regularity, p)


# ---------------------------------------------------------------------------
# error recursion


@dataclass(frozen=True)
class RecursionConfig:
    """Constants of the windowwise error recursion.

    ``c1`` is the local monotonicity constant, ``L`` and ``C_prime`` the
    Lipschitz constant and bound of the field on the box.  ``None`` entries for
    ``delta1``, ``delta2`` and ``c_prime`` select the smallest admissible
    ``delta1 = gamma_(n0+1)``, the smallest ``delta2`` allowed by the technical
    assumptions and the largest admissible ``c_prime``.
    """

    c1: float
    L: float
    C_prime: float
    zeta: float
    box: tuple[float, float]
    x_norm: float = 0.0
    c_p: float = 4.0
    delta1: float | None = None
    delta2: float | None = None
    c_prime: float | None = None
    tube: float = math.inf
    tube_check: str = "partition"
    z: float = 3.0


@dataclass
class ErrorRecursion:
    ell: np.ndarray
    n_ell: np.ndarray
    t_n_ell: np.ndarray
    e: np.ndarray
    e_se: np.ndarray
    rhs: np.ndarray  # rhs[0] is nan
    passed: np.ndarray
    a: np.ndarray
    b: np.ndarray
    aleph: np.ndarray
    K: float
    c_prime: float
    delta1: float
    delta2: float
    feasible: bool
    infeasible_reasons: list
    stopped: np.ndarray  # per replica: first index at which the run stopped, or -1

    HEADER = ["ell", "n_ell", "t_n_ell", "e_ell", "rhs_recursion", "pass"]

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.passed[1:])) if len(self.passed) > 1 else 1.0

    def to_csv(self, path) -> None:
        write_csv(path, self.HEADER, ([str(int(self.ell[i])), str(int(self.n_ell[i])), fmt(self.t_n_ell[i]),
                                       fmt(self.e[i]), fmt(self.rhs[i]), str(int(self.passed[i]))]
                                      for i in range(len(self.ell))))


def stopping_index(theta: np.ndarray, psi: np.ndarray, n0: int, points: np.ndarray, box, tube: float,
                   tube_check: str) -> np.ndarray:
    """Per replica, the first step index at which the run leaves the box or the tube (``-1`` if never)."""
    R, n_rows, _ = theta.shape
    out_box = ~np.all((theta >= box[0]) & (theta <= box[1]), axis=2)
    dist = np.linalg.norm(theta - psi[None], axis=2)
    if tube_check == "all":
        out_tube = dist > tube
    elif tube_check == "partition":
        out_tube = np.zeros_like(out_box)
        idx = points - n0
        out_tube[:, idx] = dist[:, idx] > tube
    else:
        raise ValueError("tube_check must be 'partition' or 'all'")
    stop = out_box | out_tube
    first = np.where(stop.any(axis=1), stop.argmax(axis=1) + n0, -1)
    return first


def error_sequence(run: Trajectory | BatchRun, ode: OdePath, partition: RhoPartition, p: float,
                   params: DampingParams, regularity: Regularity, config: RecursionConfig) -> ErrorRecursion:
    """Empirical windowwise errors against the recursion's right-hand side."""
    if p < 2:
        raise ValueError("p must be >= 2")
    run = as_batch(run)
    n0 = partition.n0
    if int(run.n[0]) != n0 or np.any(np.diff(run.n) != 1):
        raise ValueError("run must start at the partition start and be recorded at every step")
    last = partition.last
    if last > run.n[-1]:
        raise ValueError("partition extends beyond the run")
    grid = partition.schedule.times(last)[n0:]
    if len(ode.times) < len(grid) or not np.allclose(ode.times[: len(grid)], grid, rtol=1e-12, atol=1e-12):
        raise ValueError("ODE path is not on the run's training-time grid")
    theta = run.theta[:, : last - n0 + 1]
    psi = ode.states[: last - n0 + 1]
    d = theta.shape[2]
    kap = kappa_constants(params, p, config.c_p, d)
    s = partition.schedule
    rho, zeta = partition.rho, config.zeta
    g1 = s.gamma(n0 + 1)
    sg1 = math.sqrt(g1)
    C, Ct, Lt = regularity.C, regularity.C_tilde, regularity.L_tilde
    xn = config.x_norm
    reasons = []
    if not zeta * rho * sg1 < 1:
        reasons.append("zeta * rho * sqrt(gamma_(n0+1)) >= 1")
        K = math.inf
    else:
        K = 1.0 / (1.0 - zeta * rho * sg1)
    ratios = schedule_ratios(s, last)[n0:]
    if np.any(ratios > zeta * (1 + 1e-12)):
        reasons.append("step-size ratio exceeds zeta")
    d1 = g1 if config.delta1 is None else config.delta1
    if not (g1 <= d1 < rho * rho):
        reasons.append("need gamma_(n0+1) <= delta1 < rho^2")
    sd1 = math.sqrt(d1)
    half_lc = 0.5 * config.L * config.C_prime
    d2_min = rho / (rho - sd1) * (kap.k3 * rho**2 * Lt + half_lc * rho**2 + (kap.k2 + kap.k4) * C
                                  + (kap.k1 + kap.k5) * xn) * sg1
    d2 = d2_min if config.delta2 is None else config.delta2
    if d2 < d2_min * (1 - 1e-12):
        reasons.append("delta2 below its admissible minimum")
    cp_max = 0.5 * (2 * config.c1 - config.L**2 * rho * sg1 - zeta * K)
    cp = cp_max if config.c_prime is None else config.c_prime
    if not cp > 0:
        reasons.append("no positive c' satisfies the monotonicity condition")
    elif cp > cp_max * (1 + 1e-12):
        reasons.append("c' exceeds its admissible maximum")

    stop = stopping_index(theta, psi, n0, partition.points, config.box, config.tube, config.tube_check)
    pts = partition.points
    t = s.times(last)
    L_count = partition.count
    e = np.empty(L_count + 1)
    e_se = np.empty(L_count + 1)
    for ell, n in enumerate(pts):
        alive = (stop < 0) | (stop >= n)
        dist = np.linalg.norm(theta[:, n - n0] - psi[n - n0], axis=1)
        vals = alive * dist**p
        mu = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        gn = s.gamma(n + 1)
        e[ell] = mu ** (2 / p) / gn
        e_se[ell] = (2 / p) * mu ** (2 / p - 1) * se / gn if mu > 0 else 0.0
    pref = (p - 1) + (0.5 * p * (p - 1)) ** (2 / p)
    rhs = np.full(L_count + 1, np.nan)
    passed = np.ones(L_count + 1, dtype=bool)
    a_arr = np.full(L_count + 1, np.nan)
    b_arr = np.full(L_count + 1, np.nan)
    aleph = np.full(L_count + 1, np.nan)
    for ell in range(1, L_count + 1):
        if not math.isfinite(K):
            passed[ell] = False  # no finite right-hand side
            continue
        na, nb = int(pts[ell - 1]), int(pts[ell])
        dt = t[nb] - t[na]
        al = kap.k3 * rho**2 * Lt + (kap.k2 + kap.k4) * C + (kap.k1 + kap.k5) * params.beta ** ((na - n0) / 2) * xn
        a_l = al / (rho - sd1) + half_lc * rho
        b_l = pref * (2 * K * kap.k6**2 * Ct**2 + 4 * K / (rho - sd1) * al**2 * math.sqrt(s.gamma(na + 1)))
        rhs[ell] = (1 - 2 * cp * dt) * e[ell - 1] + (K * (2 * math.sqrt(e[ell - 1]) + d2) * a_l + b_l) * dt
        passed[ell] = e[ell] <= rhs[ell] + config.z * e_se[ell]
        a_arr[ell], b_arr[ell], aleph[ell] = a_l, b_l, al
    return ErrorRecursion(np.arange(L_count + 1), pts.copy(), t[pts], e, e_se, rhs, passed, a_arr, b_arr, aleph,
                          K, cp, d1, d2, not reasons, reasons, stop)


# ---------------------------------------------------------------------------
# descriptive reports


@dataclass(frozen=True)
class ShadowStat:
    n: np.ndarray
    lp_distance: np.ndarray
    scaled: np.ndarray  # lp_distance / sqrt(gamma_(n+1))

    @property
    def sup(self) -> float:
        return float(np.max(self.scaled))


def shadow_statistic(run: Trajectory | BatchRun, ode: OdePath, schedule: StepSchedule, p: float = 2.0) -> ShadowStat:
    """Empirical ``E|theta_n - Psi_(t_n)|^p^(1/p)`` scaled by ``sqrt(gamma_(n+1))`` at every recorded ``n``."""
    run = as_batch(run)
    n = run.n
    t_all = schedule.times(int(n[-1]))
    psi_times = ode.times
    idx = np.searchsorted(psi_times, t_all[n] - 1e-12 * np.maximum(1.0, t_all[n]))
    if np.any(idx >= len(psi_times)) or not np.allclose(psi_times[idx], t_all[n], rtol=1e-12, atol=1e-12):
        raise ValueError("ODE path does not cover the run's recorded times")
    psi = ode.states[idx]
    dist = np.linalg.norm(run.theta - psi[None], axis=2)
    lp = np.mean(dist**p, axis=0) ** (1 / p)
    return ShadowStat(n.copy(), lp, lp / np.sqrt(schedule.gamma(n + 1)))


@dataclass(frozen=True)
class WeightedSupReport:
    empirical: float
    integral: float
    implied_eta: float
    horizon_time: float


def weighted_sup_report(run: Trajectory | BatchRun, ode: OdePath, schedule: StepSchedule, p: float,
                        box: tuple[float, float], decay: float, mv_norm: float = 0.0,
                        radius: Callable[[float], float] = lambda s: 1.0, nodes: int = 8) -> WeightedSupReport:
    """Empirical ``E[(sup_n |theta_n - Psi| / R_(t_n))^p]`` next to the integral with unit constant.

    The integral runs over the recorded horizon with the piecewise-constant
    step-size staircase; Gauss-Legendre quadrature is used on each step.  The
    ratio of the two is reported as the constant the data imply; there is no
    pass/fail gate.
    """
    run = as_batch(run)
    n0, n_last = int(run.n[0]), int(run.n[-1])
    t = schedule.times(n_last)
    stop = stopping_index(run.theta, ode.states[: len(run.n)], n0, np.array([n0]), box, math.inf, "partition")
    rn = np.array([radius(x) for x in t[run.n]])
    dist = np.linalg.norm(run.theta - ode.states[None, : len(run.n)], axis=2) / rn[None]
    mask = np.ones_like(dist, dtype=bool)
    for r, st in enumerate(stop):
        if st >= 0:
            mask[r, st - n0 + 1:] = False
    emp = float(np.mean(np.max(np.where(mask, dist, 0.0), axis=1) ** p))
    d0 = float(np.linalg.norm(run.theta[0, 0] - ode.states[0])) / math.sqrt(schedule.gamma(n0 + 1))
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    gam = schedule.gammas(n_last)
    for k in range(n0 + 1, n_last + 1):
        lo, hi = t[k - 1], t[k]
        s = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
        vals = np.array([radius(x) ** -p for x in s]) * (1 + (d0 + math.sqrt(mv_norm)) * np.exp(-decay * (s - t[n0]))) ** p
        total += 0.5 * (hi - lo) * float(wg @ vals) * gam[k - 1] ** ((p - 1) / 2)
    return WeightedSupReport(emp, total, emp / total if total > 0 else math.inf, float(t[n_last] - t[n0]))
