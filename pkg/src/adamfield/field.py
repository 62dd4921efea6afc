"""Monte Carlo estimation of the Adam vector field and related quantities.

Two estimators are available.

``iid``
    every replica draws a fresh truncated history of depth ``K`` and yields
    one sample of ``g``; standard errors are exact sample standard errors.
``chain``
    every replica runs one stationary chain of the exponential sums: after a
    burn-in of ``K`` steps the sums equal a depth-``K`` history, and each later
    step yields one (correlated) sample.  For the quadratic map the sums are
    sufficient statistics for every ``theta`` at once, so one chain evaluates
    the field on a whole grid with common random numbers.  Chain averages are
    independent across replicas, so the standard error is the standard
    deviation of chain averages over ``sqrt(R)``.  Zero-mean control variates
    (the sums' deviations from their known means) are regressed out.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .innovation import InnovationSpec
from .rng import TAG_CHAIN, TAG_FIELD, TAG_MOMENTS, stream, worker_count
from .seq_space import DampingParams

DEPTH_CAP = 20_000
CHUNK = 512


class FieldError(RuntimeError):
    """Estimation could not produce a trustworthy value."""


class NoSignChange(FieldError):
    pass


@dataclass(frozen=True)
class FieldEstimate:
    mean: np.ndarray
    std_error: np.ndarray
    replicas: int
    depth: int
    params: DampingParams
    method: str = "iid"
    chain_length: int = 1
    discarded: int = 0
    flagged: bool = False
    note: str = ""

    def ci(self, z: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
        return self.mean - z * self.std_error, self.mean + z * self.std_error

    def contains(self, value, z: float = 3.0) -> bool:
        lo, hi = self.ci(z)
        return bool(np.all((lo <= value) & (value <= hi)))


def default_depth(params: DampingParams, tol: float = 1e-10, cap: int = DEPTH_CAP) -> int:
    return params.default_depth(tol, cap)


def _weights(params: DampingParams, depth: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(depth, dtype=float)
    return params.alpha**k, params.beta**k


def _reduce(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


@dataclass
class IidSamples:
    g: np.ndarray
    deriv: np.ndarray
    first_order: np.ndarray
    stats: np.ndarray
    depth: int


def iid_samples(innovation: InnovationSpec, theta, params: DampingParams, depth: int, replicas: int,
                seed: int, derivative: bool = False, first_order: bool = False,
                dx_dtheta: float | None = None, tag: int = TAG_FIELD) -> IidSamples:
    """Raw per-replica samples from independent truncated histories.

    Replicas are processed in fixed chunks with one keyed stream each, so the
    result does not depend on the number of worker threads.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (innovation.dim,):
        raise ValueError(f"theta must have shape ({innovation.dim},)")
    if depth < 1 or replicas < 1:
        raise ValueError("depth and replicas must be >= 1")
    dxdth = innovation.derivative if dx_dtheta is None else dx_dtheta
    if derivative and dxdth is None:
        raise ValueError("derivative needs a constant dX/dtheta; pass dx_dtheta")
    apow, bpow = _weights(params, depth)
    chunks = [(c, min(CHUNK, replicas - c * CHUNK)) for c in range(-(-replicas // CHUNK))]

    if innovation.compiled:
        kl = innovation.kernel_law()

        def work(job):
            c, n = job
            rng = stream(seed, tag, c)
            return _kernels.field_iid(
                rng, kl.code, kl.p0, kl.p1, kl.values, kl.cdf, kl.raw_batch, kl.map_code, kl.constant,
                theta, params.alpha, params.beta, params.epsilon, apow, bpow, n,
                float(dxdth or 0.0), derivative, first_order,
            )
    else:

        def work(job):
            c, n = job
            rng = stream(seed, tag, c)
            return _iid_numpy(innovation, theta, params, apow, bpow, n, rng, float(dxdth or 0.0),
                              derivative, first_order)

    with ThreadPoolExecutor(worker_count(len(chunks))) as pool:
        parts = list(pool.map(work, chunks))
    g, deriv, fo, stats = (np.concatenate([p[j] for p in parts]) for j in range(4))
    fo = np.concatenate([fo, (g - fo[..., 0])[..., None]], axis=-1)
    return IidSamples(g, deriv, fo, stats, depth)


def _iid_numpy(inn, theta, params, apow, bpow, n, rng, dxdth, want_deriv, want_fo):
    """Vectorised reference path (also serves custom innovations)."""
    a, b, eps = params.alpha, params.beta, params.epsilon
    k = len(apow)
    d = inn.dim
    x = np.empty((n, k, d))
    for r in range(n):
        x[r] = inn.x_of(inn.sample_u(rng, k), theta)
    mom_a = (1 - a) * np.einsum("k,rkd->rd", apow, x)
    mom_b = (1 - b) * np.einsum("k,rkd->rd", bpow, x)
    wv = (1 - b) * bpow[None, :, None] * x * x
    v = wv.sum(axis=1)
    sv = np.sqrt(v)
    den = eps + sv
    g = mom_a / den
    with np.errstate(divide="ignore", invalid="ignore"):
        stats = np.stack([1 / den, 1 / (den**2 * 2 * sv), 1 / (den**3 * 2 * v) + 1 / (den**2 * 4 * v * sv),
                          1 / (den**2 * v * sv), 1 / sv, x[:, 0, :]], axis=-1)
        deriv = np.zeros((n, d))
        if want_deriv:
            deriv = dxdth * ((1 - apow[-1] * a) / den - np.where(v > 0, mom_a * mom_b / (den**2 * sv), 0.0))
        fo = np.zeros((n, d, 3))
        if want_fo:
            vk = np.maximum(v[:, None, :] - wv, 0.0)
            svk = np.sqrt(vk)
            dk = eps + svk
            hk = 1 / dk
            hpk = -1 / (dk**2 * 2 * svk)
            paired = np.einsum("k,rkd->rd", apow, x * hk + (1 - b) * bpow[None, :, None] * hpk * x**3)
            fo[..., 0] = (1 - a) * paired
            fo[..., 1] = (1 - a) * np.einsum("k,rkd->rd", apow, hk)
            fo[..., 2] = (1 - a) * (1 - b) * np.einsum("k,rkd->rd", apow * bpow, hpk)
    return g, deriv, fo, stats


def _finite_rows(arr: np.ndarray) -> np.ndarray:
    return np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)


def _check_discards(n_bad: int, n_total: int, what: str) -> None:
    if n_bad > 0.01 * n_total:
        raise FieldError(f"{n_bad} of {n_total} {what} samples were non-finite (more than 1%)")


# ---------------------------------------------------------------------------
# chain estimator


@dataclass
class ChainSamples:
    thetas: np.ndarray
    g: np.ndarray  # (R, J) chain averages
    deriv: np.ndarray  # (R, J)
    controls: np.ndarray  # (R, 4)
    burn: int
    length: int

    def adjusted(self, which: str = "g", use_controls: bool = True) -> np.ndarray:
        """Chain averages with the control variates regressed out."""
        y = getattr(self, which)
        c = self.controls
        if not use_controls or y.shape[0] < 8 or not np.any(c.std(axis=0) > 0):
            return y
        keep = c.std(axis=0) > 0
        cc = c[:, keep]
        coef, *_ = np.linalg.lstsq(cc - cc.mean(axis=0), y - y.mean(axis=0), rcond=None)
        return y - cc @ coef


def chain_samples(innovation: InnovationSpec, thetas, params: DampingParams, burn: int, length: int,
                  chains: int, seed: int, component: int = 0, first_chain: int = 0,
                  dx_dtheta: float | None = None) -> ChainSamples:
    """Stationary chains for one scalar component at every value in ``thetas``."""
    if not innovation.compiled:
        raise ValueError("the chain estimator needs a quadratic or constant innovation")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    kl = innovation.kernel_law()
    dxdth = innovation.derivative if dx_dtheta is None else dx_dtheta
    p = params

    def work(r):
        rng = stream(seed, TAG_CHAIN, component, r)
        return _kernels.field_chain(
            rng, kl.code, kl.p0, kl.p1, kl.values, kl.cdf, kl.raw_batch, kl.map_code, kl.constant,
            thetas, p.alpha, p.beta, p.epsilon, burn, length, float(dxdth or 0.0), kl.mean, kl.second_moment,
        )

    ids = range(first_chain, first_chain + chains)
    with ThreadPoolExecutor(worker_count(chains)) as pool:
        parts = list(pool.map(work, ids))
    g = np.stack([q[0] for q in parts])
    dv = np.stack([q[1] for q in parts])
    ctl = np.stack([q[2] for q in parts])
    return ChainSamples(thetas, g, dv, ctl, burn, length)


def merge_chains(a: ChainSamples, b: ChainSamples) -> ChainSamples:
    return ChainSamples(a.thetas, np.concatenate([a.g, b.g]), np.concatenate([a.deriv, b.deriv]),
                        np.concatenate([a.controls, b.controls]), a.burn, a.length)


# ---------------------------------------------------------------------------
# public estimators


def estimate_field(innovation: InnovationSpec, theta, params: DampingParams, depth: int | None = None,
                   replicas: int = 10_000, seed: int = 0, method: str = "iid",
                   chain_length: int | None = None, control_variates: bool = True) -> FieldEstimate:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    depth = default_depth(params) if depth is None else depth
    if method == "iid":
        s = iid_samples(innovation, theta, params, depth, replicas, seed)
        ok = _finite_rows(s.g)
        _check_discards(int((~ok).sum()), replicas, "field")
        mean, se = _reduce(s.g[ok])
        return FieldEstimate(mean, se, int(ok.sum()), depth, params, "iid", 1, int((~ok).sum()))
    if method == "chain":
        length = chain_length or 20 * depth
        means, ses = [], []
        for i in range(innovation.dim):
            cs = chain_samples(innovation, [theta[i]], params, depth, length, replicas, seed, component=i)
            m, s = _reduce(cs.adjusted("g", control_variates)[:, 0])
            means.append(m)
            ses.append(s)
        return FieldEstimate(np.array(means), np.array(ses), replicas, depth, params, "chain", length)
    raise ValueError(f"unknown method {method!r}")


def estimate_field_derivative(innovation: InnovationSpec, theta: float, params: DampingParams,
                              depth: int | None = None, replicas: int = 10_000, seed: int = 0,
                              dx_dtheta: float | None = None, method: str = "iid",
                              chain_length: int | None = None) -> FieldEstimate:
    """``d f / d theta`` for a scalar field via the differentiated integrand."""
    if innovation.dim != 1:
        raise ValueError("the field derivative is implemented for d = 1")
    depth = default_depth(params) if depth is None else depth
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if method == "chain":
        length = chain_length or 20 * depth
        cs = chain_samples(innovation, theta, params, depth, length, replicas, seed, dx_dtheta=dx_dtheta)
        mean, se = _reduce(cs.adjusted("deriv")[:, :1])
        return FieldEstimate(mean, se, replicas, depth, params, "chain", length)
    s = iid_samples(innovation, theta, params, depth, replicas, seed, derivative=True, dx_dtheta=dx_dtheta)
    ok = _finite_rows(s.deriv)
    _check_discards(int((~ok).sum()), replicas, "derivative")
    mean, se = _reduce(s.deriv[ok])
    return FieldEstimate(mean, se, int(ok.sum()), depth, params, "iid", 1, int((~ok).sum()))


@dataclass(frozen=True)
class FirstOrderComparison:
    """Field, first-order field and their difference from one set of histories."""

    field: FieldEstimate
    first_order: FieldEstimate
    gap: np.ndarray
    gap_se: np.ndarray


def first_order_field(innovation: InnovationSpec, theta, params: DampingParams, depth: int | None = None,
                      replicas: int = 10_000, seed: int = 0, method: str = "paired") -> FieldEstimate:
    """The two-term expansion of the field in the skew of the innovation.

    ``factored`` multiplies separately estimated expectations (exact moments of
    ``X`` are used when the law provides them).  ``paired`` averages a per-sample
    quantity with the same expectation; it is the difference ``g - D`` where
    ``D`` is the second-order Taylor remainder, which makes the paired estimate
    strongly correlated with the field estimate.
    """
    return compare_first_order(innovation, theta, params, depth, replicas, seed, method).first_order


def compare_first_order(innovation: InnovationSpec, theta, params: DampingParams, depth: int | None = None,
                        replicas: int = 10_000, seed: int = 0, method: str = "paired") -> FirstOrderComparison:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    depth = default_depth(params) if depth is None else depth
    s = iid_samples(innovation, theta, params, depth, replicas, seed, first_order=True)
    ok = _finite_rows(s.first_order) & _finite_rows(s.g)
    n_bad = int((~ok).sum())
    flagged = n_bad > 0
    if n_bad == replicas:
        raise FieldError("first-order field is infeasible: inverse moments diverge on every sample")
    g = s.g[ok]
    fo = s.first_order[ok]
    f_mean, f_se = _reduce(g)
    fest = FieldEstimate(f_mean, f_se, int(ok.sum()), depth, params, "iid", 1, n_bad)
    if method == "paired":
        ft_mean, ft_se = _reduce(fo[..., 0])
        gap_mean, gap_se = _reduce(fo[..., 3])
    elif method == "factored":
        ex1, ex3, exact = [], [], True
        for i in range(innovation.dim):
            m1 = innovation.x_moment(1, theta[i])
            m3 = innovation.x_moment(3, theta[i])
            if m1 is None or m3 is None:
                exact = False
                break
            ex1.append(m1)
            ex3.append(m3)
        if exact:
            z = fo[..., 1] * np.array(ex1) + fo[..., 2] * np.array(ex3)
            ft_mean, ft_se = _reduce(z)
        else:
            # moments of X from an independent stream, so the product of means is unbiased
            xm = iid_samples(innovation, theta, params, 1, replicas, seed, tag=TAG_MOMENTS).stats[..., 5]
            m1, s1 = _reduce(xm)
            m3, s3 = _reduce(xm**3)
            a1, as1 = _reduce(fo[..., 1])
            a3, as3 = _reduce(fo[..., 2])
            ft_mean = a1 * m1 + a3 * m3
            ft_se = np.sqrt((a1 * s1) ** 2 + (m1 * as1) ** 2 + (a3 * s3) ** 2 + (m3 * as3) ** 2)
        gap_mean = f_mean - ft_mean
        gap_se = np.sqrt(f_se**2 + ft_se**2)
    else:
        raise ValueError(f"unknown method {method!r}")
    ftest = FieldEstimate(ft_mean, ft_se, int(ok.sum()), depth, params, method, 1, n_bad, flagged,
                          "non-finite inverse moments on some samples" if flagged else "")
    return FirstOrderComparison(fest, ftest, gap_mean, gap_se)


# ---------------------------------------------------------------------------
# moment profiles and explicit bounds


@dataclass(frozen=True)
class MomentProfile:
    """Moments of ``X`` and inverse moments of the second-moment sum ``V``.

    ``phi`` holds ``E|X|^q`` of the innovation itself and ``base_phi`` of its
    batch-size-one version.  Every estimate has a matching ``*_se`` entry (zero
    when computed exactly).
    """

    theta: np.ndarray
    batch: int
    phi: dict
    base_phi: dict
    ex1: np.ndarray
    ex3: np.ndarray
    inverse: dict
    se: dict
    feasible: bool
    replicas: int
    depth: int


_INVERSE_KEYS = ("h", "abs_hprime", "hsecond", "w35", "inv_sqrt_v")


def moment_profile(innovation: InnovationSpec, theta, params: DampingParams, depth: int | None = None,
                   replicas: int = 10_000, seed: int = 0) -> MomentProfile:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    depth = default_depth(params) if depth is None else depth
    s = iid_samples(innovation, theta, params, depth, replicas, seed)
    stats = s.stats
    inverse, se = {}, {}
    feasible = True
    for j, key in enumerate(_INVERSE_KEYS):
        col = stats[..., j]
        if not np.all(np.isfinite(col)):
            feasible = False
            inverse[key] = np.full(innovation.dim, np.inf)
            se[key] = np.full(innovation.dim, np.inf)
        else:
            inverse[key], se[key] = _reduce(col)
    base = replace(innovation, batch=1)
    xs = stats[..., 5]
    xb = iid_samples(base, theta, params, 1, replicas, seed, tag=TAG_MOMENTS).stats[..., 5]

    def moments(inn, samples):
        out, out_se = {}, {}
        for q in (1, 2, 3, 5):
            exact = [inn.x_moment(q, theta[i], absolute=True) for i in range(inn.dim)]
            if all(e is not None for e in exact):
                out[q], out_se[q] = np.array(exact), np.zeros(inn.dim)
            else:
                out[q], out_se[q] = _reduce(np.abs(samples) ** q)
        return out, out_se

    phi, phi_se = moments(innovation, xs)
    base_phi, base_se = moments(base, xb)
    signed = {}
    for q in (1, 3):
        exact = [innovation.x_moment(q, theta[i]) for i in range(innovation.dim)]
        if all(e is not None for e in exact):
            signed[q], se[f"ex{q}"] = np.array(exact), np.zeros(innovation.dim)
        else:
            signed[q], se[f"ex{q}"] = _reduce(xs**q)
    se.update({f"phi{q}": phi_se[q] for q in phi_se})
    se.update({f"base_phi{q}": base_se[q] for q in base_se})
    return MomentProfile(theta, innovation.batch, phi, base_phi, signed[1], signed[3], inverse, se,
                         feasible, replicas, depth)


def perturbation_bound(profile: MomentProfile, params: DampingParams) -> np.ndarray:
    """Bound on ``|f - ftilde|`` per component."""
    if not profile.feasible:
        raise FieldError("profile is infeasible: inverse moments of V are not finite")
    a, b = params.alpha, params.beta
    factor = 0.375 * (1 - a) * (1 - b) ** 2 / (b**2.5 * (1 - a * b * b))
    return factor * profile.inverse["w35"] * profile.phi[5]


def minibatch_field_bound(profile: MomentProfile, params: DampingParams, batch: int, c3: float = 4.0,
                          mean_tol: float = 1e-9) -> np.ndarray:
    """Bound on ``|f_M|`` at a point where the base innovation has mean zero.

    Linear in ``c3``; callers wanting the bound per unit of ``c3`` can combine
    two evaluations.
    """
    if profile.batch != batch:
        raise ValueError(f"profile was computed for batch {profile.batch}, not {batch}")
    if np.any(np.abs(profile.ex1) > mean_tol + 3 * profile.se.get("ex1", 0.0)):
        raise FieldError("the bound needs E[X] = 0 at the evaluated point")
    if not np.all(np.isfinite(profile.inverse["abs_hprime"])):
        raise FieldError("E|h'(V_M)| is not finite")
    a, b = params.alpha, params.beta
    ph2, ph3, ph5 = profile.base_phi[2], profile.base_phi[3], profile.base_phi[5]
    m = float(batch)
    first = b**-1.5 * (1 - a) * (1 - b) / (1 - a * b) * ph3 * profile.inverse["abs_hprime"] / m**2
    second = b**-2.5 * (1 - a) * (1 - b) ** 2 / (1 - a * b * b) * profile.inverse["hsecond"] * (
        2 * c3 * ph2 * ph3 * m**-2.5 + 5 * ph2 * ph3 * m**-3 + ph5 * m**-4
    )
    return first + second


def inverse_moment_bound(beta: float, delta: float, p: float, q: float) -> float:
    """Bound on ``E[v(Z)^-p]`` when ``P(Z_k^2 < delta) <= q`` for every entry."""
    if not (0 < beta < 1 and delta > 0 and p > 0 and q >= 0):
        raise ValueError("need 0 < beta < 1, delta > 0, p > 0, q >= 0")
    if not q < beta**p:
        raise ValueError(f"hypothesis violated: q = {q} must be below beta^p = {beta ** p}")
    return (beta / (1 - beta)) ** p * (1 - q) / (beta**p - q) * delta**-p


def inverse_moment_mc(law, beta: float, p: float, depth: int, samples: int, seed: int = 0):
    """Monte Carlo ``E[v(Z)^-p]`` for i.i.d. entries drawn from ``law``; returns ``(mean, se)``."""
    from .innovation import quadratic

    params = DampingParams(0.0, beta, 1.0)
    s = iid_samples(quadratic(law), [0.0], params, depth, samples, seed)
    inv_sqrt_v = s.stats[..., 4][:, 0]
    vals = inv_sqrt_v ** (2 * p)
    return _reduce(vals)


# ---------------------------------------------------------------------------
# root finding


@dataclass(frozen=True)
class ZeroEstimate:
    theta_star: float
    se: float
    ci_low: float
    ci_high: float
    f_at_root: float
    f_se: float
    slope: float
    slope_se: float
    bracket: tuple[float, float]
    chains: int
    chain_length: int
    depth: int
    evaluations: int
    converged: bool
    note: str = ""

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low


@dataclass
class _Bank:
    """Common-random-number evaluator: chain ``r`` always uses the same stream."""

    innovation: InnovationSpec
    params: DampingParams
    burn: int
    length: int
    seed: int
    evaluations: int = 0
    cache: dict = field(default_factory=dict)

    def eval(self, thetas, chains: int) -> ChainSamples:
        self.evaluations += 1
        return chain_samples(self.innovation, thetas, self.params, self.burn, self.length, chains, self.seed)


def find_zero(innovation: InnovationSpec, params: DampingParams, interval: tuple[float, float],
              tol_theta: float = 1e-6, chains: tuple[int, int] = (16, 512), chain_length: int | None = None,
              seed: int = 0, depth: int | None = None, z: float = 3.0) -> ZeroEstimate:
    """Stochastic bisection for the zero of a decreasing scalar field.

    All evaluations share one bank of chains (common random numbers).  When the
    confidence interval at the midpoint straddles zero the number of chains is
    doubled, up to ``chains[1]``.  The final estimate fits a quadratic through
    the bracket ends and midpoint chain by chain and reports a delta-method
    interval based on the pathwise derivative at the midpoint.
    """
    if innovation.dim != 1:
        raise ValueError("root finding is implemented for d = 1")
    lo, hi = map(float, interval)
    if not lo < hi:
        raise ValueError("interval must satisfy lo < hi")
    depth = default_depth(params) if depth is None else depth
    length = chain_length or 20 * depth
    bank = _Bank(innovation, params, depth, length, seed)
    n, n_max = chains

    def estimate(ths, nch):
        cs = bank.eval(ths, nch)
        adj = cs.adjusted("g")
        return adj.mean(axis=0), adj.std(axis=0, ddof=1) / math.sqrt(nch), cs

    while True:
        mean, se, _ = estimate([lo, hi], n)
        if mean[0] > z * se[0] and mean[1] < -z * se[1]:
            break
        if n >= n_max:
            raise NoSignChange(
                f"no confident sign change on [{lo}, {hi}]: f(lo) = {mean[0]:.3g} +- {se[0]:.2g}, "
                f"f(hi) = {mean[1]:.3g} +- {se[1]:.2g}"
            )
        n = min(2 * n, n_max)
    resolved = True
    half = None
    while hi - lo > tol_theta:
        mid = 0.5 * (lo + hi)
        mean, se, cs = estimate([mid], n)
        if abs(mean[0]) <= z * se[0]:
            if n < n_max:
                n = min(2 * n, n_max)
                continue
            # resolution limit: fit locally around mid on the scale of the noise
            resolved = False
            slope_mid = abs(cs.adjusted("deriv").mean())
            half = min(0.5 * (hi - lo), 2 * z * se[0] / slope_mid) if slope_mid > 0 else 0.5 * (hi - lo)
            break
        if mean[0] > 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if half is None:
        half = 0.5 * (hi - lo)
    half = max(half, 0.5 * tol_theta)
    nodes = np.array([mid - half, mid, mid + half])
    cs = bank.eval(nodes, n)
    adj = cs.adjusted("g")
    dadj = cs.adjusted("deriv")
    coef = np.polyfit(nodes - mid, adj.mean(axis=0), 2)
    roots = [r.real for r in np.roots(coef) if abs(r.imag) < 1e-14 and abs(r.real) <= 4 * half]
    if roots:
        root = mid + min(roots, key=abs)
    else:
        root = mid - coef[2] / coef[1]
    per_chain = np.array([np.polyval(np.polyfit(nodes - mid, adj[r], 2), root - mid) for r in range(n)])
    slope_chain = dadj[:, 1]
    # the pathwise derivative is far less noisy than the slope of a fit over a short bracket
    slope = float(slope_chain.mean())
    slope_se = float(slope_chain.std(ddof=1) / math.sqrt(n))
    f_se = float(per_chain.std(ddof=1) / math.sqrt(n))
    se_theta = f_se / abs(slope) if slope != 0 else math.inf
    ci_lo, ci_hi = root - z * se_theta, root + z * se_theta
    converged = resolved or (ci_hi - ci_lo) <= tol_theta
    note = "" if resolved else "chain budget exhausted before the bracket reached tol_theta"
    return ZeroEstimate(float(root), float(se_theta), float(ci_lo), float(ci_hi), float(per_chain.mean()), f_se,
                        slope, slope_se, (lo, hi), n, length, depth, bank.evaluations, bool(converged), note)


# ---------------------------------------------------------------------------
# frozen field oracle for ODE integration


@dataclass
class FrozenField:
    """Deterministic smooth stand-in for ``f`` on a box, per component.

    The field is estimated once on Chebyshev nodes with common random numbers
    and interpolated; the interpolant is then an exact, reproducible function.
    Outside the box the boundary values are held constant.
    """

    lo: float
    hi: float
    nodes: np.ndarray
    values: np.ndarray
    std_error: np.ndarray
    interpolant: np.polynomial.Chebyshev
    dim: int = 1

    def __call__(self, theta) -> np.ndarray:
        th = np.clip(np.asarray(theta, dtype=float), self.lo, self.hi)
        return self.interpolant(th)

    def derivative(self, theta) -> np.ndarray:
        th = np.clip(np.asarray(theta, dtype=float), self.lo, self.hi)
        return self.interpolant.deriv()(th)

    @property
    def max_std_error(self) -> float:
        return float(self.std_error.max())


def frozen_field(innovation: InnovationSpec, params: DampingParams, lo: float, hi: float, n_nodes: int = 24,
                 chains: int = 64, chain_length: int | None = None, seed: int = 0,
                 depth: int | None = None) -> FrozenField:
    depth = default_depth(params) if depth is None else depth
    length = chain_length or 20 * depth
    k = np.arange(n_nodes)
    nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (k + 0.5) / n_nodes)[::-1]
    cs = chain_samples(innovation, nodes, params, depth, length, chains, seed)
    adj = cs.adjusted("g")
    values = adj.mean(axis=0)
    se = adj.std(axis=0, ddof=1) / math.sqrt(chains)
    interp = np.polynomial.Chebyshev.fit(nodes, values, n_nodes - 1, domain=[lo, hi])
    return FrozenField(lo, hi, nodes, values, se, interp, innovation.dim)
