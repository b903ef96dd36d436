"""PID-controlled Langevin dynamics (PIDLD) on analytic score models."""
from ._backend import NAME as BACKEND
from .rng import RngStream, derive_stream
from .score_models import BiasedScore, GaussianMixture, QuadraticPotential, toy_mixture
from .sampler import (
    Ensemble,
    NoiseSchedule,
    PIDGains,
    PIDState,
    RunConfig,
    RunResult,
    geometric_schedule,
    init_uniform,
    pid_step,
    run_annealed,
    run_level,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BiasedScore",
    "Ensemble",
    "GaussianMixture",
    "NoiseSchedule",
    "PIDGains",
    "PIDState",
    "QuadraticPotential",
    "RngStream",
    "RunConfig",
    "RunResult",
    "derive_stream",
    "geometric_schedule",
    "init_uniform",
    "pid_step",
    "run_annealed",
    "run_level",
    "toy_mixture",
]
