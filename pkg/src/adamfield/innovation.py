"""Innovations ``(X, U)``: a sampleable input law and an update map ``X(u, theta)``.

Built-in maps are

* ``quadratic``: ``X(u, theta) = u - theta`` (the negative gradient of
  ``|theta - u|^2 / 2``), with ``dX/dtheta = -1``;
* ``constant``: ``X = c`` whatever ``u`` and ``theta`` are.

Components of ``U`` are i.i.d. copies of a scalar law.  A mini-batch of size
``M`` averages ``X`` over ``M`` independent inputs; for the quadratic map this
is the quadratic map applied to the batch mean, which is sampled exactly
whenever the law allows it (lattice laws by repeated convolution, normal laws
by rescaling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np

# law codes understood by the compiled kernels
LAW_DISCRETE = 0
LAW_UNIFORM = 1
LAW_NORMAL = 2

MAP_QUADRATIC = 0
MAP_CONSTANT = 1


@dataclass(frozen=True)
class DiscreteLaw:
    """Finitely supported law, sampled by inverse CDF."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.ndim != 1 or v.shape != p.shape or v.size == 0:
            raise ValueError("values and probs must be equal-length 1-d sequences")
        if np.any(p < 0) or not math.isclose(p.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("probs must be non-negative and sum to 1")
        order = np.argsort(v, kind="stable")
        object.__setattr__(self, "values", tuple(float(x) for x in v[order]))
        object.__setattr__(self, "probs", tuple(float(x) for x in p[order] / p.sum()))

    @classmethod
    def point(cls, c: float) -> "DiscreteLaw":
        return cls((float(c),), (1.0,))

    @classmethod
    def empirical(cls, samples) -> "DiscreteLaw":
        vals, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        return cls(tuple(vals), tuple(counts / counts.sum()))

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def moment(self, q: float, center: float = 0.0, absolute: bool = False) -> float:
        x = np.asarray(self.values) - center
        if absolute:
            x = np.abs(x)
        return float(np.dot(x**q, self.probs))

    @property
    def var(self) -> float:
        return self.moment(2, self.mean)

    def kernel_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.asarray(self.values, dtype=float), cdf

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        vals, cdf = self.kernel_arrays()
        return vals[np.searchsorted(cdf, rng.random(size), side="right")]

    def lattice(self) -> tuple[float, float, np.ndarray] | None:
        """``(origin, spacing, integer offsets)`` if the support is a sub-lattice."""
        v = np.asarray(self.values)
        if v.size == 1:
            return float(v[0]), 1.0, np.zeros(1, dtype=np.int64)
        diffs = v[1:] - v[0]
        base = diffs.min()
        ratios = [Fraction(float(d / base)).limit_denominator(64) for d in diffs]
        if any(abs(float(r) - d / base) > 1e-9 * max(1.0, d / base) for r, d in zip(ratios, diffs)):
            return None
        den = math.lcm(*(r.denominator for r in ratios))
        h = base / den
        offs = np.concatenate([[0], [int(r * den) for r in ratios]])
        return float(v[0]), float(h), offs.astype(np.int64)

    def batch_mean(self, m: int, max_support: int = 200_000) -> "DiscreteLaw | None":
        """Exact law of the mean of ``m`` i.i.d. copies, or ``None`` if not a lattice."""
        if m == 1:
            return self
        lat = self.lattice()
        if lat is None:
            return None
        origin, h, offs = lat
        if offs[-1] * m + 1 > max_support:
            return None
        pmf = np.zeros(offs[-1] + 1)
        np.add.at(pmf, offs, self.probs)
        out = np.array([1.0])
        base, k = pmf, m
        while k:
            if k & 1:
                out = np.convolve(out, base)
            k >>= 1
            if k:
                base = np.convolve(base, base)
        keep = out > 1e-300
        idx = np.nonzero(keep)[0]
        vals = origin + h * idx / m
        probs = out[keep]
        return DiscreteLaw(tuple(vals), tuple(probs / probs.sum()))

    def to_dict(self) -> dict:
        return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class UniformLaw:
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("uniform law needs lo < hi")

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def var(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    def moment(self, q: float, center: float = 0.0, absolute: bool = False) -> float:
        a, b = self.lo - center, self.hi - center
        if absolute:
            if a >= 0 or b <= 0:
                lo, hi = sorted((abs(a), abs(b)))
                return (hi ** (q + 1) - lo ** (q + 1)) / ((q + 1) * (b - a))
            return ((-a) ** (q + 1) + b ** (q + 1)) / ((q + 1) * (b - a))
        if float(q).is_integer():
            return (b ** (q + 1) - a ** (q + 1)) / ((q + 1) * (b - a))
        raise ValueError("signed non-integer moments are undefined for sign-changing laws")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random(size)

    def batch_mean(self, m: int) -> "UniformLaw | None":
        return self if m == 1 else None

    def to_dict(self) -> dict:
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class NormalLaw:
    mu: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("normal law needs sd > 0")

    @property
    def mean(self) -> float:
        return self.mu

    @property
    def var(self) -> float:
        return self.sd**2

    def moment(self, q: float, center: float = 0.0, absolute: bool = False) -> float:
        shift = self.mu - center
        if absolute and shift == 0.0:
            return self.sd**q * 2 ** (q / 2) * math.gamma((q + 1) / 2) / math.sqrt(math.pi)
        if not absolute and float(q).is_integer():
            # binomial expansion with central normal moments
            total = 0.0
            for j in range(int(q) + 1):
                cm = 0.0 if j % 2 else self.sd**j * math.prod(range(j - 1, 0, -2))
                total += math.comb(int(q), j) * shift ** (int(q) - j) * cm
            return total
        x, w = np.polynomial.hermite_e.hermegauss(80)
        vals = np.abs(shift + self.sd * x) ** q if absolute else (shift + self.sd * x) ** q
        return float(np.dot(w, vals) / math.sqrt(2 * math.pi))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.mu + self.sd * rng.standard_normal(size)

    def batch_mean(self, m: int) -> "NormalLaw":
        return NormalLaw(self.mu, self.sd / math.sqrt(m))

    def to_dict(self) -> dict:
        return {"kind": "normal", "mu": self.mu, "sd": self.sd}


Law = DiscreteLaw | UniformLaw | NormalLaw


def law_from_dict(d: dict) -> Law:
    kind = d.get("kind", "discrete")
    if kind == "discrete":
        return DiscreteLaw(tuple(d["values"]), tuple(d["probs"]))
    if kind == "point":
        return DiscreteLaw.point(d["value"])
    if kind == "uniform":
        return UniformLaw(float(d.get("lo", -1.0)), float(d.get("hi", 1.0)))
    if kind == "normal":
        return NormalLaw(float(d.get("mu", 0.0)), float(d.get("sd", 1.0)))
    if kind == "samples":
        if "path" in d:
            return DiscreteLaw.empirical(np.loadtxt(d["path"], ndmin=1))
        return DiscreteLaw.empirical(d["values"])
    raise ValueError(f"unknown law kind {kind!r}")


@dataclass(frozen=True)
class KernelLaw:
    """Flat description of the sampled input for the compiled kernels."""

    code: int
    p0: float
    p1: float
    values: np.ndarray
    cdf: np.ndarray
    raw_batch: int
    map_code: int
    constant: float
    mean: float
    second_moment: float


@dataclass(frozen=True)
class InnovationSpec:
    """An innovation of dimension ``dim`` built from a scalar input law.

    ``x_map`` (custom innovations only) takes ``u`` of shape ``(n, dim)`` and
    ``theta`` of shape ``(dim,)`` and returns ``X`` of shape ``(n, dim)``.
    """

    kind: str
    law: Law
    dim: int = 1
    batch: int = 1
    constant: float = 0.0
    x_map: Callable | None = field(default=None, compare=False)
    dx_dtheta: float | None = None
    name: str = ""
    x_bound: float | None = None
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "constant", "custom"):
            raise ValueError(f"unknown innovation kind {self.kind!r}")
        if self.dim < 1 or self.batch < 1:
            raise ValueError("dim and batch must be >= 1")
        if self.kind == "custom" and self.x_map is None:
            raise ValueError("custom innovations need an x_map")

    @property
    def compiled(self) -> bool:
        return self.kind in ("quadratic", "constant")

    @property
    def derivative(self) -> float | None:
        """``dX/dtheta`` when it is a known constant."""
        if self.dx_dtheta is not None:
            return self.dx_dtheta
        return {"quadratic": -1.0, "constant": 0.0}.get(self.kind)

    def batch_law(self) -> Law | None:
        """Exact law of the batch-mean input, when it has one."""
        return self.law.batch_mean(self.batch)

    @property
    def mean_u(self) -> float:
        return self.law.mean

    def kernel_law(self) -> KernelLaw:
        if not self.compiled:
            raise ValueError("custom innovations have no compiled sampler")
        exact = self.batch_law() if self.kind == "quadratic" else self.law.batch_mean(1)
        law = exact if exact is not None else self.law
        raw = 1 if exact is not None else self.batch
        empty = np.zeros(1)
        if isinstance(law, DiscreteLaw):
            vals, cdf = law.kernel_arrays()
            code, p0, p1 = LAW_DISCRETE, 0.0, 0.0
        elif isinstance(law, UniformLaw):
            vals, cdf = empty, empty
            code, p0, p1 = LAW_UNIFORM, law.lo, law.hi
        else:
            vals, cdf = empty, empty
            code, p0, p1 = LAW_NORMAL, law.mu, law.sd
        mean = self.law.mean
        second = self.law.var / self.batch + mean * mean
        return KernelLaw(
            code,
            p0,
            p1,
            vals,
            cdf,
            raw,
            MAP_QUADRATIC if self.kind == "quadratic" else MAP_CONSTANT,
            float(self.constant),
            mean,
            second,
        )

    def sample_u(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Input block for ``n`` steps.

        Quadratic and constant innovations return batch means of shape
        ``(n, dim)``; custom innovations return raw inputs ``(n, batch, dim)``.
        Draw order matches the compiled kernels: step, then component, then batch.
        """
        if self.kind == "custom":
            return self.law.sample(rng, (n, self.dim, self.batch)).transpose(0, 2, 1)
        kl = self.kernel_law()
        if kl.raw_batch == 1:
            exact = self.batch_law() if self.kind == "quadratic" else self.law
            return exact.sample(rng, (n, self.dim))
        return self.law.sample(rng, (n, self.dim, kl.raw_batch)).mean(axis=2)

    def x_of(self, u: np.ndarray, theta) -> np.ndarray:
        """``X`` for an input block from :meth:`sample_u`."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "quadratic":
            return u - theta
        if self.kind == "constant":
            return np.full(u.shape[:1] + (self.dim,), float(self.constant))
        n, m, d = u.shape
        x = np.asarray(self.x_map(u.reshape(n * m, d), theta), dtype=float)
        return x.reshape(n, m, d).mean(axis=1)

    def x_moment(self, q: float, theta: float = 0.0, absolute: bool = False) -> float | None:
        """Exact ``E[X^q]`` (or ``E|X|^q``) per component when available."""
        if self.kind == "constant":
            c = float(self.constant)
            return abs(c) ** q if absolute else c**q
        if self.kind != "quadratic":
            return None
        law = self.batch_law()
        if law is None:
            return None
        try:
            return law.moment(q, center=float(theta), absolute=absolute)
        except ValueError:
            return None

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom innovations are not serialisable")
        d = {"kind": self.kind, "law": self.law.to_dict(), "dim": self.dim, "batch": self.batch}
        if self.kind == "constant":
            d["constant"] = self.constant
        if self.dx_dtheta is not None:
            d["dx_dtheta"] = self.dx_dtheta
        if self.name:
            d["name"] = self.name
        for key in ("x_bound", "lipschitz"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InnovationSpec":
        if "preset" in d:
            base = preset(d["preset"], dim=int(d.get("dim", 1)))
            return minibatch_innovation(base, int(d.get("batch", 1))) if d.get("batch", 1) != 1 else base
        law = law_from_dict(d.get("law", {"kind": "point", "value": d.get("constant", 0.0)}))
        return cls(
            kind=d.get("kind", "quadratic"),
            law=law,
            dim=int(d.get("dim", 1)),
            batch=int(d.get("batch", 1)),
            constant=float(d.get("constant", 0.0)),
            dx_dtheta=d.get("dx_dtheta"),
            name=d.get("name", ""),
            x_bound=d.get("x_bound"),
            lipschitz=d.get("lipschitz"),
        )


def quadratic(law: Law, dim: int = 1, name: str = "") -> InnovationSpec:
    """``X(u, theta) = u - theta``."""
    return InnovationSpec("quadratic", law, dim=dim, name=name, lipschitz=1.0)


def constant_innovation(c: float, dim: int = 1) -> InnovationSpec:
    """``X = c`` identically."""
    return InnovationSpec(
        "constant", DiscreteLaw.point(0.0), dim=dim, constant=float(c), name=f"constant({c})",
        x_bound=abs(float(c)) * math.sqrt(dim), lipschitz=0.0,
    )


def custom_innovation(law: Law, x_map: Callable, dim: int = 1, dx_dtheta: float | None = None,
                      name: str = "custom") -> InnovationSpec:
    return InnovationSpec("custom", law, dim=dim, x_map=x_map, dx_dtheta=dx_dtheta, name=name)


def minibatch_innovation(base: InnovationSpec, m: int) -> InnovationSpec:
    """Average ``X`` over ``m`` independent inputs."""
    if m < 1:
        raise ValueError("batch size must be >= 1")
    return replace(base, batch=base.batch * m)


SYMMETRIC_LAW = DiscreteLaw((-1.0, 1.0), (0.5, 0.5))
ASYMMETRIC_LAW = DiscreteLaw((-4.0, 1.0), (0.2, 0.8))


def preset(name: str, dim: int = 1) -> InnovationSpec:
    """Named quadratic innovations used by the experiments.

    ``symmetric``: ``U = +-1`` with equal probability.  ``asymmetric``: ``U = 1``
    with probability 0.8 and ``-4`` otherwise (mean 0, third moment -12).
    ``uniform``: ``U`` uniform on ``[-1, 1]``.
    """
    laws = {"symmetric": SYMMETRIC_LAW, "asymmetric": ASYMMETRIC_LAW, "uniform": UniformLaw(-1.0, 1.0)}
    if name not in laws:
        raise ValueError(f"unknown innovation preset {name!r}; choose from {sorted(laws)}")
    return quadratic(laws[name], dim=dim, name=name)
