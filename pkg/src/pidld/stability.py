"""Linear stability of Langevin dynamics with a derivative term.

Near a minimizer of an m-strongly concave log-density, one coordinate of

    x_{t+1} = x_t + eps * (s_t + k_d (s_t - s_{t-1})) + sqrt(2 eps) xi_t,   s = -m (x - x*)

is the linear recursion ``v_{t+1} = J v_t + w_t`` on ``v_t = (x_t - x*, x_{t-1} - x*)``
with

    J = [[1 - eps (1 + k_d) m, eps k_d m],
         [1,                   0        ]],     Q = Cov(w) = [[2 eps, 0], [0, 0]].

Its characteristic polynomial is ``l^2 - (1 - eps (1 + k_d) m) l - eps k_d m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DivergentSystemError, InvalidInputError
from .rng import RngStream

#: parameters this close to a stability boundary are reported as marginal
BOUNDARY_BAND = 1e-9


@dataclass(frozen=True)
class LinearizedSystem:
    J: np.ndarray
    Q: np.ndarray
    eps: float
    k_d: float
    m: float

    @property
    def char_poly(self) -> tuple[float, float]:
        """``(b, c)`` of the monic polynomial ``l^2 - b l + c``."""
        return float(self.J[0, 0] + self.J[1, 1]), -self.eps * self.k_d * self.m


def build_system(eps: float, k_d: float, m: float) -> LinearizedSystem:
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    if not m > 0:
        raise InvalidInputError("m must be positive")
    if not k_d >= 0:
        raise InvalidInputError("k_d must be >= 0")
    J = np.array([[1.0 - eps * (1.0 + k_d) * m, eps * k_d * m], [1.0, 0.0]])
    Q = np.array([[2.0 * eps, 0.0], [0.0, 0.0]])
    J.setflags(write=False)
    Q.setflags(write=False)
    return LinearizedSystem(J, Q, float(eps), float(k_d), float(m))


def quadratic_root_radius(b: float, c: float) -> float:
    """Largest root modulus of ``l^2 - b l + c``."""
    disc = b * b - 4.0 * c
    if disc < 0:
        # conjugate pair: |l|^2 = l * conj(l) = c
        return math.sqrt(c)
    r = math.sqrt(disc)
    # stable form avoiding cancellation
    q = 0.5 * (b + math.copysign(r, b)) if b != 0 else 0.5 * r
    if q == 0.0:
        return math.sqrt(abs(c))
    return max(abs(q), abs(c / q))


def spectral_radius(sys: LinearizedSystem) -> float:
    b, c = sys.char_poly
    return quadratic_root_radius(b, c)


@dataclass(frozen=True)
class JuryResult:
    conditions: tuple[bool, bool, bool]
    passed: bool
    marginal: bool
    bound_statement: float
    bound_proof: float


def jury_check(sys: LinearizedSystem) -> JuryResult:
    """Jury test for ``P(l) = l^2 + a1 l + a0``: ``|a0| < 1``, ``P(1) > 0``, ``P(-1) > 0``.

    For this system the three read ``|eps k_d m| < 1``, ``eps m > 0`` and
    ``2 - eps (1 + 2 k_d) m > 0``.
    """
    b, c = sys.char_poly
    a1, a0 = -b, c
    margins = (1.0 - abs(a0), 1.0 + a1 + a0, 1.0 - a1 + a0)
    conds = tuple(bool(mg > 0) for mg in margins)
    marginal = any(abs(mg) <= BOUNDARY_BAND for mg in margins)
    denom = (1.0 + 2.0 * sys.k_d) * sys.m
    return JuryResult(conds, all(conds), marginal, 1.0 / denom, 2.0 / denom)


def step_bounds(k_d: float, m: float) -> tuple[float, float]:
    """``(1 / ((1 + 2 k_d) m), 2 / ((1 + 2 k_d) m))``: the stated and the derived step bound."""
    denom = (1.0 + 2.0 * k_d) * m
    return 1.0 / denom, 2.0 / denom


def stationary_covariance(sys: LinearizedSystem, tol: float = 1e-12, max_iter: int = 10_000_000) -> np.ndarray:
    """Fixed point of ``S = J S J^T + Q`` by iteration from ``S = Q``."""
    rho = spectral_radius(sys)
    if not rho < 1.0:
        raise DivergentSystemError(f"spectral radius {rho:.6g} >= 1; no stationary covariance")
    (j00, j01), (j10, j11) = sys.J.tolist()
    q00, q01, q11 = sys.Q[0, 0], sys.Q[0, 1], sys.Q[1, 1]
    s00, s01, s11 = q00, q01, q11
    for _ in range(max_iter):
        # J S J^T for symmetric S, written out for the 2x2 case
        a00 = j00 * s00 + j01 * s01
        a01 = j00 * s01 + j01 * s11
        a10 = j10 * s00 + j11 * s01
        a11 = j10 * s01 + j11 * s11
        n00 = a00 * j00 + a01 * j01 + q00
        n01 = a00 * j10 + a01 * j11 + q01
        n11 = a10 * j10 + a11 * j11 + q11
        diff = max(abs(n00 - s00), abs(n01 - s01), abs(n11 - s11))
        s00, s01, s11 = n00, n01, n11
        if diff < tol:
            break
    else:
        raise DivergentSystemError("fixed-point iteration did not settle")
    return np.array([[s00, s01], [s01, s11]])


def series_covariance(sys: LinearizedSystem, terms: int) -> np.ndarray:
    """Truncated sum ``sum_{k < terms} J^k Q (J^k)^T`` using explicit matrix powers."""
    out = np.zeros((2, 2))
    Jk = np.eye(2)
    for _ in range(terms):
        out += Jk @ sys.Q @ Jk.T
        Jk = Jk @ sys.J
    return out


def lyapunov_residual(sys: LinearizedSystem, S: np.ndarray) -> float:
    return float(np.max(np.abs(S - sys.J @ S @ sys.J.T - sys.Q)))


@dataclass
class StabilityReport:
    eps: float
    k_d: float
    m: float
    spectral_radius: float
    jury_pass: bool
    jury_conditions: tuple[bool, bool, bool]
    marginal: bool
    eps_bound_statement: float
    eps_bound_proof: float
    stationary_cov: np.ndarray | None  # None when divergent


def analyze(eps: float, k_d: float, m: float, tol: float = 1e-12) -> StabilityReport:
    sys = build_system(eps, k_d, m)
    jr = jury_check(sys)
    rho = spectral_radius(sys)
    cov = stationary_covariance(sys, tol) if rho < 1.0 else None
    return StabilityReport(eps, k_d, m, rho, jr.passed, jr.conditions, jr.marginal,
                           jr.bound_statement, jr.bound_proof, cov)


@dataclass
class DeterministicRun:
    trajectory: np.ndarray
    converged: bool
    diverged: bool


def simulate_deterministic(eps: float, k_d: float, m: float, x0: float, x_prev0: float,
                           steps: int, x_star: float = 0.0, *, keep_trajectory: bool = True) -> DeterministicRun:
    """Noise-free recursion on the quadratic potential; converged means ``|x_T - x*| < 1e-8``."""
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    x, xp = float(x0), float(x_prev0)
    traj = [x]
    for _ in range(steps):
        s = -m * (x - x_star)
        sp = -m * (xp - x_star)
        x, xp = x + eps * (s + k_d * (s - sp)), x
        if keep_trajectory:
            traj.append(x)
        else:
            traj[0] = x
        if not abs(x - x_star) <= 1e12:
            return DeterministicRun(np.array(traj), False, True)
    return DeterministicRun(np.array(traj), abs(x - x_star) < 1e-8, False)


def simulate_deterministic_grid(eps: np.ndarray, k_d: np.ndarray, m: np.ndarray, steps: int,
                                x0: float = 1.0, x_prev0: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`simulate_deterministic` over broadcast parameter arrays.

    Returns ``(converged, diverged)`` boolean arrays.
    """
    eps, k_d, m = np.broadcast_arrays(np.asarray(eps, float), np.asarray(k_d, float), np.asarray(m, float))
    x = np.full(eps.shape, float(x0))
    xp = np.full(eps.shape, float(x_prev0))
    diverged = np.zeros(eps.shape, dtype=bool)
    for _ in range(steps):
        s = -m * x
        sp = -m * xp
        x, xp = x + eps * (s + k_d * (s - sp)), x
        big = ~(np.abs(x) <= 1e12)
        if big.any():
            diverged |= big
            x[big] = 0.0
            xp[big] = 0.0
    converged = (np.abs(x) < 1e-8) & ~diverged
    return converged, diverged


def linear_recursion(b: float, c: float, w: np.ndarray, x0: float = 0.0, x_prev0: float = 0.0) -> np.ndarray:
    """``y_{t+1} = b y_t + c y_{t-1} + w_t`` driven by ``w``; returns ``y_1 .. y_n``."""
    return kernels.ar2_filter(float(b), float(c), np.ascontiguousarray(w, dtype=np.float64),
                              float(x0), float(x_prev0))


def empirical_stationary_covariance(eps: float, k_d: float, m: float, burn_in: int, samples: int,
                                    rng: RngStream) -> np.ndarray:
    """Covariance of ``(x_t, x_{t-1})`` from a long noisy run of the linear recursion."""
    sys = build_system(eps, k_d, m)
    if not jury_check(sys).passed:
        raise DivergentSystemError("parameters are outside the stable region")
    w = math.sqrt(2.0 * eps) * rng.normal(burn_in + samples + 1)
    y = linear_recursion(float(sys.J[0, 0]), float(sys.J[0, 1]), w)
    if not np.all(np.abs(y) <= 1e12):
        raise DivergentSystemError("simulated values exceeded 1e12")
    pairs = np.stack([y[burn_in + 1:], y[burn_in:-1]])
    return np.cov(pairs)
