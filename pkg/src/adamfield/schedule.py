"""Step-size schedules, training times and the step-size staircase."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StepSchedule:
    """``gamma_n = a / (b + n)**q`` (kind ``"power"``) or an explicit table.

    A table is read as ``gamma_1, gamma_2, ...``; indices past its end repeat
    the last entry, so a one-element table is a constant schedule.
    """

    kind: str = "power"
    a: float = 1.0
    b: float = 0.0
    q: float = 1.0
    table: tuple[float, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.kind == "power":
            if not (self.a > 0 and self.b >= 0 and 0 < self.q <= 1):
                raise ValueError(f"power schedule needs a > 0, b >= 0, 0 < q <= 1 (got {self})")
        elif self.kind == "table":
            t = np.asarray(self.table, dtype=float)
            if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) > 0):
                raise ValueError("table schedule must be non-empty, positive and non-increasing")
            object.__setattr__(self, "table", tuple(float(x) for x in t))
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def power(cls, a: float = 1.0, b: float = 0.0, q: float = 1.0) -> "StepSchedule":
        return cls("power", a, b, q)

    @classmethod
    def constant(cls, gamma: float) -> "StepSchedule":
        return cls("table", table=(gamma,))

    @classmethod
    def preset(cls, name: str) -> "StepSchedule":
        presets = {
            "inv_n": cls.power(1.0, 0.0, 1.0),
            "inv_n_2_3": cls.power(1.0, 0.0, 2.0 / 3.0),
            "inv_sqrt_n": cls.power(1.0, 0.0, 0.5),
        }
        if name not in presets:
            raise ValueError(f"unknown schedule preset {name!r}; choose from {sorted(presets)}")
        return presets[name]

    @property
    def is_zero_sequence(self) -> bool:
        return self.kind == "power"

    def gamma(self, n):
        """``gamma_n`` for ``n >= 1`` (scalar or array)."""
        n_arr = np.asarray(n)
        if np.any(n_arr < 1):
            raise ValueError("step sizes are indexed from n = 1")
        if self.kind == "power":
            out = self.a / (self.b + n_arr.astype(float)) ** self.q
        else:
            t = np.asarray(self.table)
            out = t[np.minimum(n_arr, len(t)) - 1]
        return float(out) if np.ndim(out) == 0 else out

    def gammas(self, n: int) -> np.ndarray:
        """Array ``[gamma_1, ..., gamma_n]``."""
        return np.asarray(self.gamma(np.arange(1, n + 1)), dtype=float)

    def times(self, n: int) -> np.ndarray:
        """Array ``[t_0, t_1, ..., t_n]`` of training times (cached)."""
        cached = self._cache.get("times")
        if cached is None or len(cached) < n + 1:
            size = max(n + 1, 2 * (len(cached) if cached is not None else 0))
            cached = np.concatenate([[0.0], np.cumsum(self.gammas(size - 1))])
            self._cache["times"] = cached
        return cached[: n + 1]

    def staircase(self, t):
        """``Gamma_t = gamma_n`` for ``t`` in ``(t_{n-1}, t_n]``; ``Gamma_0 = gamma_1``."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise ValueError("training time must be >= 0")
        n_max = 16
        while self.times(n_max)[-1] < np.max(t_arr, initial=0.0):
            n_max *= 2
            if n_max > 1 << 30:
                raise ValueError("training time beyond reachable horizon")
        n = np.searchsorted(self.times(n_max), t_arr, side="left")
        out = self.gamma(np.maximum(n, 1))
        return out

    def to_dict(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "a": self.a, "b": self.b, "q": self.q}
        return {"kind": "table", "table": list(self.table)}

    @classmethod
    def from_dict(cls, d: dict | str) -> "StepSchedule":
        if isinstance(d, str):
            return cls.preset(d)
        if "preset" in d:
            return cls.preset(d["preset"])
        kind = d.get("kind", "power")
        if kind == "power":
            return cls.power(float(d.get("a", 1.0)), float(d.get("b", 0.0)), float(d.get("q", 1.0)))
        if kind == "constant":
            return cls.constant(float(d["gamma"]))
        return cls("table", table=tuple(d["table"]))


def training_times(schedule: StepSchedule, n: int) -> float:
    """``t_n = gamma_1 + ... + gamma_n`` with ``t_0 = 0``, summed exactly."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return math.fsum(schedule.gammas(n)) if n else 0.0


@dataclass(frozen=True)
class ScheduleReport:
    sup_ratio: float
    argmax: int
    ratio_at_horizon: float
    is_zero_sequence: bool


def schedule_ratios(schedule: StepSchedule, horizon: int) -> np.ndarray:
    """``(gamma_n - gamma_{n+1}) / gamma_n**2`` for ``n = 1..horizon``."""
    g = schedule.gammas(horizon + 1)
    return (g[:-1] - g[1:]) / g[:-1] ** 2


def schedule_condition_check(schedule: StepSchedule, horizon: int) -> ScheduleReport:
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    r = schedule_ratios(schedule, horizon)
    i = int(np.argmax(r))
    return ScheduleReport(float(r[i]), i + 1, float(r[-1]), schedule.is_zero_sequence)
