"""The Adam recursion with bias correction, seeded runs and trajectory records."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .innovation import InnovationSpec
from .io import fmt, write_csv
from .rng import TAG_ADAM, stream, worker_count
from .schedule import StepSchedule
from .seq_space import DampingParams


class NumericFailure(RuntimeError):
    """A run produced a non-finite state."""


@dataclass(frozen=True)
class AdamState:
    n: int
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    sigma: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("theta", "m", "v"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (self.theta.shape == self.m.shape == self.v.shape) or self.theta.ndim != 1:
            raise ValueError("theta, m and v must be vectors of the same length")
        if np.any(self.v < 0):
            raise ValueError("v must be componentwise >= 0")
        if self.n < 0:
            raise ValueError("step index must be >= 0")

    @classmethod
    def zeros(cls, dim: int = 1, theta=None, n: int = 0) -> "AdamState":
        th = np.zeros(dim) if theta is None else np.atleast_1d(np.asarray(theta, dtype=float))
        return cls(n, th, np.zeros(th.shape), np.zeros(th.shape))

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def to_dict(self) -> dict:
        return {"n": self.n, "theta": self.theta.tolist(), "m": self.m.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        th = np.atleast_1d(np.asarray(d.get("theta", [0.0]), dtype=float))
        return cls(
            int(d.get("n", 0)),
            th,
            np.asarray(d.get("m", np.zeros(th.shape)), dtype=float),
            np.asarray(d.get("v", np.zeros(th.shape)), dtype=float),
        )


def adam_step(state: AdamState, x, params: DampingParams, gamma_next: float,
              bias_correction: bool = True, epsilon_inside: bool = False) -> AdamState:
    """One step; note that the update adds ``gamma * sigma * m``."""
    if not gamma_next > 0:
        raise ValueError("step size must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != state.theta.shape:
        raise ValueError(f"innovation has shape {x.shape}, state has {state.theta.shape}")
    a, b, eps = params.alpha, params.beta, params.epsilon
    m = a * state.m + (1 - a) * x
    v = b * state.v + (1 - b) * x * x
    vhat = v / (1 - b ** (state.n + 1)) if bias_correction else v
    sigma = 1.0 / np.sqrt(vhat + eps) if epsilon_inside else 1.0 / (np.sqrt(vhat) + eps)
    theta = state.theta + gamma_next * sigma * m
    return AdamState(state.n + 1, theta, m, v, sigma)


def step_bound(params: DampingParams, n: int, gamma: float) -> float:
    """Componentwise bound on ``|theta_n - theta_{n-1}|`` for runs started from zero moments."""
    return gamma * params.cs_factor / math.sqrt(1 - params.beta**n)


@dataclass(frozen=True)
class RunConfig:
    params: DampingParams
    schedule: StepSchedule
    innovation: InnovationSpec
    init: AdamState
    n_steps: int
    seed: int
    replica: int = 0
    stride: int = 1
    bias_correction: bool = True
    epsilon_inside: bool = False
    record_steps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        marks = tuple(sorted(set(int(k) for k in self.record_steps)))
        if marks and (marks[0] < 1 or marks[-1] > self.n_steps):
            raise ValueError("record_steps must lie in 1..n_steps")
        object.__setattr__(self, "record_steps", marks)

    def to_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "schedule": self.schedule.to_dict(),
            "innovation": self.innovation.to_dict(),
            "init": self.init.to_dict(),
            "n_steps": self.n_steps,
            "seed": self.seed,
            "replica": self.replica,
            "stride": self.stride,
            "bias_correction": self.bias_correction,
            "epsilon_inside": self.epsilon_inside,
            "record_steps": list(self.record_steps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            DampingParams(**d["params"]),
            StepSchedule.from_dict(d["schedule"]),
            InnovationSpec.from_dict(d["innovation"]),
            AdamState.from_dict(d["init"]),
            int(d["n_steps"]),
            int(d["seed"]),
            int(d.get("replica", 0)),
            int(d.get("stride", 1)),
            bool(d.get("bias_correction", True)),
            bool(d.get("epsilon_inside", False)),
            tuple(d.get("record_steps", ())),
        )


@dataclass
class Trajectory:
    """Recorded states of one run (every ``stride`` steps, plus the start)."""

    config: RunConfig
    n: np.ndarray
    t: np.ndarray
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    x: np.ndarray
    inputs: np.ndarray | None = None
    failed_step: int | None = None

    @property
    def valid(self) -> bool:
        return self.failed_step is None

    @property
    def final(self) -> AdamState:
        return AdamState(int(self.n[-1]), self.theta[-1], self.m[-1], self.v[-1])

    def rows(self):
        d = self.theta.shape[1]
        for j in range(len(self.n)):
            yield [str(int(self.n[j])), fmt(self.t[j])] + [
                fmt(arr[j, i]) for arr in (self.theta, self.m, self.v, self.sigma) for i in range(d)
            ]

    def header(self) -> list[str]:
        d = self.theta.shape[1]
        return ["n", "t_n"] + [f"{name}[{i}]" for name in ("theta", "m", "v", "sigma") for i in range(d)]

    def to_csv(self, path) -> None:
        write_csv(path, self.header(), self.rows())
        sidecar = {"config": self.config.to_dict(), "valid": self.valid, "failed_step": self.failed_step}
        with open(str(path) + ".json", "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)

    def replay(self) -> "Trajectory":
        return run_adam_config(self.config, keep_inputs=self.inputs is not None)


def run_adam_config(cfg: RunConfig, keep_inputs: bool = False, raise_on_failure: bool = False) -> Trajectory:
    inn = cfg.innovation
    if cfg.init.dim != inn.dim:
        raise ValueError("initial state and innovation dimensions differ")
    if cfg.n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    n0 = cfg.init.n
    gammas = cfg.schedule.gammas(n0 + cfg.n_steps)[n0:]
    rng = stream(cfg.seed, TAG_ADAM, cfg.replica)
    p = cfg.params
    if inn.compiled:
        kl = inn.kernel_law()
        rec_n, th, m, v, sg, x, inputs, bad = _kernels.adam_path(
            rng, kl.code, kl.p0, kl.p1, kl.values, kl.cdf, kl.raw_batch, kl.map_code, kl.constant,
            p.alpha, p.beta, p.epsilon, gammas, n0, cfg.init.theta, cfg.init.m, cfg.init.v,
            cfg.bias_correction, cfg.epsilon_inside, cfg.stride,
            np.asarray(cfg.record_steps, dtype=np.int64), keep_inputs,
        )
        inputs = inputs if keep_inputs else None
        failed = None if bad < 0 else int(n0 + bad + 1)
    else:
        rec_n, th, m, v, sg, x, inputs, failed = _run_python(cfg, gammas, rng, keep_inputs)
    times = cfg.schedule.times(int(rec_n[-1]))[rec_n]
    traj = Trajectory(cfg, rec_n, times, th, m, v, sg, x, inputs, failed)
    if failed is not None and raise_on_failure:
        raise NumericFailure(f"non-finite state at step {failed}")
    return traj


def _run_python(cfg: RunConfig, gammas, rng, keep_inputs):
    """Reference loop built on :func:`adam_step`; used for custom innovations."""
    inn, d = cfg.innovation, cfg.init.dim
    state = cfg.init
    rows = [(state.n, state.theta, state.m, state.v, np.full(d, np.nan), np.full(d, np.nan))]
    kept = []
    failed = None
    marks = set(cfg.record_steps)
    for s, gamma in enumerate(gammas):
        u = inn.sample_u(rng, 1)
        if keep_inputs:
            kept.append(u[0])
        x = inn.x_of(u, state.theta)[0]
        state = adam_step(state, x, cfg.params, gamma, cfg.bias_correction, cfg.epsilon_inside)
        finite = all(np.all(np.isfinite(a)) for a in (state.theta, state.m, state.v))
        hit = (s + 1) in marks if marks else (s + 1) % cfg.stride == 0
        if not finite or hit:
            rows.append((state.n, state.theta, state.m, state.v, state.sigma, x))
        if not finite:
            failed = state.n
            break
    cols = list(zip(*rows))
    inputs = np.array(kept) if keep_inputs else None
    return (np.array(cols[0], dtype=np.int64), *(np.array(c) for c in cols[1:]), inputs, failed)


def run_adam(init: AdamState, innovation: InnovationSpec, params: DampingParams, schedule: StepSchedule,
             n_steps: int, seed: int, batch: int = 1, replica: int = 0, stride: int = 1,
             bias_correction: bool = True, epsilon_inside: bool = False,
             keep_inputs: bool = False) -> Trajectory:
    """Run one replica; ``batch > 1`` wraps the innovation in a mini-batch."""
    from .innovation import minibatch_innovation

    inn = minibatch_innovation(innovation, batch) if batch != 1 else innovation
    cfg = RunConfig(params, schedule, inn, init, n_steps, seed, replica, stride, bias_correction, epsilon_inside)
    return run_adam_config(cfg, keep_inputs=keep_inputs)


@dataclass
class BatchRun:
    """Replica-stacked records: arrays have shape ``(replicas, rows, d)``."""

    n: np.ndarray
    t: np.ndarray
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    inputs: np.ndarray | None
    failed: list[int]
    configs: list[RunConfig] = field(repr=False, default_factory=list)


def run_adam_batch(init: AdamState, innovation: InnovationSpec, params: DampingParams,
                   schedule: StepSchedule, n_steps: int, seed: int, replicas: int,
                   stride: int = 1, keep_inputs: bool = False, first_replica: int = 0,
                   bias_correction: bool = True, record_steps=()) -> BatchRun:
    """Independent replicas ``first_replica, ...``; replica ``r`` equals ``run_adam(..., replica=r)``."""
    base = RunConfig(params, schedule, innovation, init, n_steps, seed, 0, stride, bias_correction,
                     record_steps=tuple(record_steps))
    cfgs = [replace(base, replica=first_replica + r) for r in range(replicas)]
    with ThreadPoolExecutor(worker_count(replicas)) as pool:
        trajs = list(pool.map(lambda c: run_adam_config(c, keep_inputs=keep_inputs), cfgs))
    failed = [c.replica for c, tr in zip(cfgs, trajs) if not tr.valid]
    good = [tr for tr in trajs if tr.valid]
    if not good:
        raise NumericFailure("every replica produced a non-finite state")
    rows = len(good[0].n)
    stack = lambda name: np.stack([getattr(tr, name) for tr in good])
    inputs = np.stack([tr.inputs for tr in good]) if keep_inputs else None
    assert all(len(tr.n) == rows for tr in good)
    return BatchRun(good[0].n, good[0].t, stack("theta"), stack("m"), stack("v"), inputs, failed,
                    [c for c, tr in zip(cfgs, trajs) if tr.valid])
