"""PID-controlled Langevin updates and the annealed driver.

One step at global index ``t`` with score ``s_t`` does::

    I_t     = (I_{t-1} * t + s_t) / (t + 1)          # running mean of scores
    u_t     = k_p s_t + k_i(t) I_t + k_d (s_t - s_{t-1})
    x_{t+1} = x_t + eps * u_t + sqrt(2 eps) * xi_t
    k_i(t+1) = gamma * k_i(t)

``s_{-1}`` is the score of the starting point, so the derivative term is zero
on the very first step. The integral, previous score, step counter and the
decayed gain all carry across noise levels.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ._backend import kernels
from .errors import ConfigError, DivergenceError, InvalidInputError

log = logging.getLogger(__name__)

#: positions beyond this magnitude are treated as a divergence
OVERFLOW_LIMIT = 1e12


@dataclass(frozen=True)
class PIDGains:
    k_p: float = 1.0
    k_i: float = 0.0
    k_d: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("k_p", "k_i", "k_d"):
            if not getattr(self, name) >= 0:
                raise ConfigError("must be >= 0", f"gains.{name}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"must lie in (0, 1], got {self.gamma}", "gains.gamma")


@dataclass
class PIDState:
    """Per-particle controller memory plus the shared step counter and gain."""

    integral: np.ndarray
    prev_score: np.ndarray
    step_count: int
    current_ki: float

    @classmethod
    def initial(cls, score0: np.ndarray, k_i: float) -> "PIDState":
        score0 = np.array(score0, dtype=np.float64, order="C")
        return cls(np.zeros_like(score0), score0, 0, float(k_i))

    def copy(self) -> "PIDState":
        return PIDState(self.integral.copy(), self.prev_score.copy(), self.step_count, self.current_ki)


class StepRule(str, enum.Enum):
    CONSTANT = "constant"
    NCSN_QUADRATIC = "ncsn_quadratic"


@dataclass(frozen=True)
class NoiseSchedule:
    sigmas: tuple[float, ...]
    steps_per_level: int
    base_step: float
    step_rule: StepRule = StepRule.NCSN_QUADRATIC

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        if len(sig) < 1 or any(not s > 0 for s in sig):
            raise ConfigError("noise levels must be positive", "schedule.sigmas")
        if any(b >= a for a, b in zip(sig, sig[1:])):
            raise ConfigError("noise levels must be strictly decreasing", "schedule.sigmas")
        if int(self.steps_per_level) < 1:
            raise ConfigError("must be >= 1", "schedule.steps_per_level")
        if not self.base_step > 0:
            raise ConfigError("must be positive", "schedule.base_step")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "steps_per_level", int(self.steps_per_level))
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))

    @property
    def levels(self) -> int:
        return len(self.sigmas)

    @property
    def total_steps(self) -> int:
        return self.levels * self.steps_per_level

    def step_size(self, level: int) -> float:
        if self.step_rule is StepRule.CONSTANT:
            return self.base_step
        return self.base_step * self.sigmas[level] ** 2 / self.sigmas[-1] ** 2


def geometric_schedule(sigma_first: float, sigma_last: float, L: int, T: int, eps: float,
                       rule: StepRule | str = StepRule.NCSN_QUADRATIC) -> NoiseSchedule:
    if not sigma_first > sigma_last > 0:
        raise ConfigError("need sigma_first > sigma_last > 0", "schedule")
    if L < 2:
        raise ConfigError("need at least 2 levels", "schedule.levels")
    ratio = sigma_last / sigma_first
    sigmas = [sigma_first * ratio ** (i / (L - 1)) for i in range(L)]
    sigmas[0], sigmas[-1] = float(sigma_first), float(sigma_last)
    return NoiseSchedule(tuple(sigmas), T, eps, StepRule(rule))


@dataclass
class Ensemble:
    positions: np.ndarray
    master_seed: int
    particle_ids: np.ndarray = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=np.float64, order="C")
        if self.positions.ndim != 2 or min(self.positions.shape) < 1:
            raise InvalidInputError("positions must be an (N, d) array with N, d >= 1")
        if self.particle_ids is None:
            self.particle_ids = np.arange(len(self.positions), dtype=np.uint64)
        self.particle_ids = np.ascontiguousarray(self.particle_ids, dtype=np.uint64)
        if self.particle_ids.shape != (len(self.positions),):
            raise InvalidInputError("one stream id per particle is required")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def with_positions(self, positions: np.ndarray) -> "Ensemble":
        return Ensemble(positions, self.master_seed, self.particle_ids)


@dataclass(frozen=True)
class RunConfig:
    gains: PIDGains
    schedule: NoiseSchedule
    ensemble_size: int = 1280
    init_low: tuple[float, ...] = (-8.0, -8.0)
    init_high: tuple[float, ...] = (8.0, 8.0)
    master_seed: int = 0
    record_every: int = 5
    final_denoise: bool = False
    threads: int = 1

    def __post_init__(self):
        lo = tuple(float(v) for v in self.init_low)
        hi = tuple(float(v) for v in self.init_high)
        if len(lo) != len(hi) or not lo:
            raise ConfigError("low and high must have the same nonzero dimension", "ensemble.init_box")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ConfigError("low must be < high in every coordinate", "ensemble.init_box")
        if int(self.ensemble_size) < 1:
            raise ConfigError("must be >= 1", "ensemble.size")
        if int(self.record_every) < 1:
            raise ConfigError("must be >= 1", "run.record_every")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "run.master_seed")
        object.__setattr__(self, "init_low", lo)
        object.__setattr__(self, "init_high", hi)

    @property
    def dim(self) -> int:
        return len(self.init_low)

    def with_gains(self, **changes) -> "RunConfig":
        return replace(self, gains=replace(self.gains, **changes))


@dataclass
class RunResult:
    ensemble: Ensemble
    snapshots: np.ndarray
    snapshot_steps: np.ndarray
    state: PIDState
    score_evals: int
    config: RunConfig | None = field(default=None, repr=False)


def init_uniform(config: RunConfig) -> Ensemble:
    ids = np.arange(config.ensemble_size, dtype=np.uint64)
    u = kernels.uniforms(int(config.master_seed), ids, 0, config.dim)
    lo = np.asarray(config.init_low)
    hi = np.asarray(config.init_high)
    return Ensemble(lo + (hi - lo) * u, int(config.master_seed), ids)


def _check_finite(x: np.ndarray, step: int, what: str) -> None:
    with np.errstate(invalid="ignore"):
        bad = ~np.all(np.isfinite(x) & (np.abs(x) <= OVERFLOW_LIMIT), axis=1)
    if bad.any():
        raise DivergenceError(step, int(np.flatnonzero(bad)[0]), f"non-finite or overflowing {what}")


def pid_step(ensemble: Ensemble, state: PIDState, score: Callable[[np.ndarray], np.ndarray],
             gains: PIDGains, eps: float, *, stochastic: bool = True) -> tuple[Ensemble, PIDState]:
    """One PIDLD update; ``score`` maps an (N, d) batch to scores at the current level."""
    if not eps > 0:
        raise InvalidInputError("step size must be positive")
    t = state.step_count
    x = ensemble.positions
    s = np.asarray(score(x), dtype=np.float64)
    _check_finite(s, t, "score")
    tf = float(t)
    ii = (state.integral * tf + s) / (tf + 1.0)
    drift = eps * (gains.k_p * s + state.current_ki * ii + gains.k_d * (s - state.prev_score))
    if stochastic:
        z = kernels.normals(int(ensemble.master_seed), ensemble.particle_ids, t + 1, 1, ensemble.dim)[0]
        new_x = x + drift + np.sqrt(2.0 * eps) * z
    else:
        new_x = x + drift
    _check_finite(new_x, t, "position")
    new_state = PIDState(ii, s, t + 1, state.current_ki * gains.gamma)
    return ensemble.with_positions(new_x), new_state


def _ki_schedule(k0: float, gamma: float, T: int) -> np.ndarray:
    out = np.empty(T)
    k = k0
    for j in range(T):
        out[j] = k
        k = k * gamma
    return out


def run_level(ensemble: Ensemble, state: PIDState, model, sigma: float, eps_i: float, T: int,
              gains: PIDGains, *, record_every: int = 0, threads: int = 1,
              snapshots: np.ndarray | None = None):
    """``T`` PIDLD steps at a fixed noise level.

    Returns ``(ensemble, state, snapshots)``: a snapshot is taken after every
    step whose global count is a multiple of ``record_every``; pass a
    preallocated ``snapshots`` buffer to have them written in place.
    """
    if T < 1:
        raise InvalidInputError("steps per level must be >= 1")
    t0 = state.step_count
    n_rec = (t0 + T) // record_every - t0 // record_every if record_every > 0 else 0
    if snapshots is None:
        snapshots = np.empty((n_rec, ensemble.n, ensemble.dim))
    elif snapshots.shape[0] != n_rec:
        raise InvalidInputError("snapshot buffer has the wrong length")
    ki_sched = _ki_schedule(state.current_ki, gains.gamma, T)
    params = model.kernel_params(sigma) if hasattr(model, "kernel_params") else None

    if params is not None:
        logw, means, var, bias_frac, bias_dir = params
        x = ensemble.positions.copy()
        integral = np.array(state.integral, dtype=np.float64, order="C", copy=True)
        prev = np.array(state.prev_score, dtype=np.float64, order="C", copy=True)
        bad = kernels.pid_level_gmm(
            x, integral, prev, logw, means, var, float(eps_i), gains.k_p, gains.k_d, ki_sched,
            t0, int(ensemble.master_seed), ensemble.particle_ids, float(bias_frac),
            None if bias_dir is None else np.ascontiguousarray(bias_dir, dtype=np.float64),
            snapshots, int(record_every), OVERFLOW_LIMIT, int(threads),
        )
        if (bad >= 0).any():
            steps = np.where(bad >= 0, bad, np.iinfo(np.int64).max)
            p = int(np.argmin(steps))
            raise DivergenceError(int(steps[p]), p)
        new_state = PIDState(integral, prev, t0 + T, ki_sched[-1] * gains.gamma)
        return ensemble.with_positions(x), new_state, snapshots

    k = 0
    for j in range(T):
        ensemble, state = pid_step(ensemble, state, lambda y: model.score(y, sigma), gains, eps_i)
        if record_every > 0 and state.step_count % record_every == 0:
            snapshots[k] = ensemble.positions
            k += 1
    return ensemble, state, snapshots


def run_annealed(config: RunConfig, model, *, ensemble: Ensemble | None = None) -> RunResult:
    """Annealed PIDLD over every level of ``config.schedule`` with state carry-over."""
    sched = config.schedule
    ens = init_uniform(config) if ensemble is None else ensemble
    if ens.dim != getattr(model, "dim", ens.dim):
        raise InvalidInputError("model and ensemble dimensions differ")
    state = PIDState.initial(model.score(ens.positions, sched.sigmas[0]), config.gains.k_i)
    _check_finite(state.prev_score, 0, "score")
    evals = 1
    re = int(config.record_every)
    snaps = np.empty((sched.total_steps // re, ens.n, ens.dim))
    for i, sigma in enumerate(sched.sigmas):
        t0 = state.step_count
        lo, hi = t0 // re, (t0 + sched.steps_per_level) // re
        ens, state, _ = run_level(
            ens, state, model, sigma, sched.step_size(i), sched.steps_per_level, config.gains,
            record_every=re, threads=config.threads, snapshots=snaps[lo:hi],
        )
        evals += sched.steps_per_level
        log.debug("level %d sigma=%.4g eps=%.4g done", i, sigma, sched.step_size(i))
    if config.final_denoise:
        sl = sched.sigmas[-1]
        x = ens.positions + sl**2 * model.score(ens.positions, sl)
        evals += 1
        _check_finite(x, state.step_count, "position")
        ens = ens.with_positions(x)
    steps = re * np.arange(1, snaps.shape[0] + 1)
    return RunResult(ens, snaps, steps, state, evals, config)


def vanilla_config(config: RunConfig, k_p: float = 1.0) -> RunConfig:
    return replace(config, gains=PIDGains(k_p, 0.0, 0.0, 1.0))


def toy_config(gains: PIDGains | None = None, *, seed: int = 0, **overrides) -> RunConfig:
    """Two-mode toy setup: 8 geometric levels 20 -> 0.01, 150 steps each, eps 8e-6, 1280 particles."""
    sched = geometric_schedule(20.0, 0.01, 8, 150, 8e-6, StepRule.NCSN_QUADRATIC)
    cfg = RunConfig(gains or PIDGains(), sched, 1280, (-8.0, -8.0), (8.0, 8.0), seed, 5, False)
    return replace(cfg, **overrides) if overrides else cfg

