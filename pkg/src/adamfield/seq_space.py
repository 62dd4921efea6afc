"""Weighted sequence space of past innovations and the normalised-momentum map.

Sequences are stored most-recent-first as an array of shape ``(K, d)``:
row 0 is ``x_0``, row ``j`` is ``x_{-j}``.  Everything beyond depth ``K`` is an
implicit zero tail, so a finite array is an exact element of the space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class ParamError(ValueError):
    """Damping parameters violate ``0 <= alpha < sqrt(beta) < 1, epsilon > 0``."""


def validate_params(alpha: float, beta: float, epsilon: float) -> str | None:
    """Return ``None`` if admissible, else the name of the violated inequality."""
    if not (math.isfinite(alpha) and math.isfinite(beta) and math.isfinite(epsilon)):
        return "finite parameters"
    if alpha < 0:
        return "0 <= alpha"
    if not beta < 1:
        return "sqrt(beta) < 1"
    if beta < 0:
        return "0 <= beta"
    if not alpha < math.sqrt(beta):
        return "alpha < sqrt(beta)"
    if not epsilon > 0:
        return "epsilon > 0"
    return None


@dataclass(frozen=True)
class DampingParams:
    alpha: float
    beta: float
    epsilon: float

    def __post_init__(self):
        problem = validate_params(self.alpha, self.beta, self.epsilon)
        if problem is not None:
            raise ParamError(
                f"invalid damping parameters (alpha={self.alpha}, beta={self.beta}, "
                f"epsilon={self.epsilon}): violates {problem}"
            )

    @property
    def sqrt_beta(self) -> float:
        return math.sqrt(self.beta)

    @property
    def cs_factor(self) -> float:
        """Cauchy-Schwarz factor ``(1-alpha) / (sqrt(1-beta) sqrt(1-alpha^2/beta))``.

        ``|m| <= cs_factor * sqrt(v)`` for every history, hence ``|g| <= cs_factor``
        per component.
        """
        a, b = self.alpha, self.beta
        return (1 - a) / math.sqrt(1 - b) / math.sqrt(1 - a * a / b)

    def default_depth(self, tol: float = 1e-10, cap: int | None = None) -> int:
        """Smallest ``K`` with ``max(alpha, sqrt(beta))**K <= tol``."""
        base = max(self.alpha, self.sqrt_beta)
        if base == 0.0:
            return 1
        k = max(1, math.ceil(math.log(tol) / math.log(base)))
        return min(k, cap) if cap is not None else k

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "epsilon": self.epsilon}


@dataclass(frozen=True)
class RhoWeights:
    params: DampingParams
    values: np.ndarray = field(repr=False)
    ell1_total: float

    @property
    def depth(self) -> int:
        return len(self.values)


def rho_ell1(params: DampingParams) -> float:
    """Closed-form ``sum_k rho_k`` over the full (infinite) index set."""
    a, sb, eps = params.alpha, params.sqrt_beta, params.epsilon
    return (1 + (1 - a) / ((1 - sb) * math.sqrt(1 - a * a / params.beta))) / eps


def rho_weights(params: DampingParams, depth: int) -> RhoWeights:
    """First ``depth`` weights ``rho_0, rho_{-1}, ...`` and the exact l1 total."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    a, b, eps = params.alpha, params.beta, params.epsilon
    j = np.arange(depth, dtype=float)
    # 0**0 == 1 in numpy, so alpha == 0 keeps rho_0's alpha term
    vals = (1 - a) / eps * (a**j + b ** (j / 2) / math.sqrt(1 - a * a / b))
    # subnormal weights have lost their relative precision; they are zero to every use here
    vals[vals < np.finfo(float).tiny] = 0.0
    return RhoWeights(params, vals, rho_ell1(params))


def as_seq(x) -> np.ndarray:
    """Coerce to a ``(K, d)`` float array (a 1-d input is read as ``d = 1``)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"sequence must have shape (K, d), got {arr.shape}")
    return arr


def lrho_norm(x, w: RhoWeights | DampingParams) -> float:
    """``sum_k rho_k |x_k|`` with the Euclidean norm on each entry."""
    x = as_seq(x)
    if isinstance(w, DampingParams):
        w = rho_weights(w, max(len(x), 1))
    if len(x) > w.depth:
        raise ValueError(f"weights of depth {w.depth} cannot cover a sequence of depth {len(x)}")
    if len(x) == 0:
        return 0.0
    return float(w.values[: len(x)] @ np.linalg.norm(x, axis=1))


def momentum_sums(x, params: DampingParams) -> tuple[np.ndarray, np.ndarray]:
    """``m = (1-a) sum a^j x_j`` and ``v = (1-b) sum b^j x_j^2`` componentwise.

    Accepts ``(K, d)`` or a stacked batch ``(..., K, d)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    k = x.shape[-2]
    j = np.arange(k, dtype=float)
    wa = (1 - params.alpha) * params.alpha**j
    wb = (1 - params.beta) * params.beta**j
    m = np.einsum("k,...kd->...d", wa, x)
    v = np.einsum("k,...kd->...d", wb, x * x)
    return m, v


def g_map(x, params: DampingParams) -> np.ndarray:
    """Componentwise ``m / (epsilon + sqrt(v))`` of a history (or a batch of them)."""
    m, v = momentum_sums(x, params)
    with np.errstate(invalid="ignore"):
        out = m / (params.epsilon + np.sqrt(v))
    # an infinite denominator series is mapped to zero
    return np.where(np.isinf(v), 0.0, out)


def g_bound(params: DampingParams, dim: int) -> float:
    """Uniform bound ``sqrt(d) * cs_factor`` on ``|g(x)|``."""
    return math.sqrt(dim) * params.cs_factor


def translate(x) -> np.ndarray:
    """Shift the whole history one step into the past and put a zero at lag 0.

    Entry ``x_0`` moves to lag 1, so the weights it meets shrink by at least
    ``sqrt(beta)``.
    """
    x = as_seq(x)
    return np.vstack([np.zeros((1, x.shape[1])), x])


def tail_bound(params: DampingParams, depth: int, sup_entry: float, dim: int = 1) -> float:
    """Bound on how much zeroing entries beyond ``depth`` can move ``g``.

    The 1-Lipschitz property gives ``|g(x) - g(x_trunc)| <= sum_{j>=K} rho_j |x_j|``,
    summed in closed form for entries bounded by ``sup_entry``.
    """
    a, b, eps = params.alpha, params.beta, params.epsilon
    sb = params.sqrt_beta
    tail_a = a**depth / (1 - a) if a > 0 else 0.0
    tail_b = sb**depth / (1 - sb) / math.sqrt(1 - a * a / b)
    return (1 - a) / eps * (tail_a + tail_b) * sup_entry * math.sqrt(dim)


def mv_seminorm_upper(
    m,
    v,
    params: DampingParams,
    budget: int = 2,
    history=None,
) -> float:
    """Certified upper bound on the infimum norm over histories representing ``(m, v)``.

    Each component is treated separately (the norm is superadditive only up to the
    Euclidean coupling, so summing per-component bounds is still an upper bound):
    one-atom and, if ``budget >= 2``, two-atom representations are searched.  A
    caller-supplied ``history`` that represents ``(m, v)`` is also admissible.
    Returns ``inf`` when no representation was found.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if m.shape != v.shape:
        raise ValueError("m and v must have the same shape")
    if np.any(v < 0):
        raise ValueError("v must be componentwise >= 0")
    best = math.inf
    total = 0.0
    for mi, vi in zip(m, v):
        total += _component_bound(mi, vi, params, budget)
    best = total
    if history is not None:
        hist = as_seq(history)
        hm, hv = momentum_sums(hist, params)
        if np.allclose(hm, m, rtol=1e-9, atol=1e-12) and np.allclose(hv, v, rtol=1e-9, atol=1e-12):
            best = min(best, lrho_norm(hist, rho_weights(params, max(len(hist), 1))))
    return best


def _component_bound(m: float, v: float, params: DampingParams, budget: int) -> float:
    a, b = params.alpha, params.beta
    if m == 0.0 and v == 0.0:
        return 0.0
    if abs(m) > params.cs_factor * math.sqrt(v) * (1 + 1e-12):
        return math.inf
    w = rho_weights(params, 64)
    best = math.inf
    # one atom x at lag j: m = (1-a) a^j x, v = (1-b) b^j x^2
    for j in range(64):
        if v == 0.0:
            break
        x = math.copysign(math.sqrt(v / ((1 - b) * b**j)), m if m != 0 else 1.0)
        mj = (1 - a) * a**j * x
        if math.isclose(mj, m, rel_tol=1e-9, abs_tol=1e-15):
            best = min(best, w.values[j] * abs(x))
    if budget < 2 or v == 0.0:
        return best
    # two atoms (x0 at lag 0, x1 at lag j): solve m exactly for x1, v by a scale
    for j in range(1, 64):
        cand = _two_atom(m, v, j, params, w.values)
        best = min(best, cand)
    return best


def _two_atom(m: float, v: float, j: int, params: DampingParams, rho: np.ndarray) -> float:
    a, b = params.alpha, params.beta
    ca, cb = (1 - a) * a**j, (1 - b) * b**j
    # parametrise by angle: x0 = r cos(phi) / sqrt(1-b), x1 = r sin(phi) / sqrt(cb)
    r = math.sqrt(v)

    def m_of(phi):
        return (1 - a) * r * math.cos(phi) / math.sqrt(1 - b) + ca * r * math.sin(phi) / math.sqrt(cb)

    def cost(phi):
        x0 = r * math.cos(phi) / math.sqrt(1 - b)
        x1 = r * math.sin(phi) / math.sqrt(cb)
        return rho[0] * abs(x0) + rho[j] * abs(x1)

    # m_of is A cos + B sin = R cos(phi - phi0); solve for the two roots
    A = (1 - a) * r / math.sqrt(1 - b)
    B = ca * r / math.sqrt(cb)
    R = math.hypot(A, B)
    if R == 0 or abs(m) > R:
        return math.inf
    phi0 = math.atan2(B, A)
    delta = math.acos(max(-1.0, min(1.0, m / R)))
    best = math.inf
    for phi in (phi0 + delta, phi0 - delta):
        if math.isclose(m_of(phi), m, rel_tol=1e-9, abs_tol=1e-12):
            best = min(best, cost(phi))
    return best


def seq_to_json(x) -> str:
    return json.dumps(as_seq(x).tolist())


def seq_from_json(text: str) -> np.ndarray:
    return as_seq(json.loads(text))
