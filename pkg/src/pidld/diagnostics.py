"""Sample-quality metrics: grid KL, two-cluster center tracking, bias and
oscillation summaries."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._backend import kernels
from .errors import DegenerateClusterError, EstimationError, InvalidInputError
from .rng import derive_stream
from .score_models import GaussianMixture

TOY_CENTERS = np.array([[5.0, 5.0], [-5.0, -5.0]])


@dataclass(frozen=True)
class GridKLEstimator:
    """Histogram KL(samples || truth) on a regular grid over ``[low, high]``.

    ``q`` is the smoothed histogram of the in-box samples, ``p`` the truth
    density at cell midpoints renormalized over the box.
    """

    low: tuple[float, ...] = (-8.0, -8.0)
    high: tuple[float, ...] = (8.0, 8.0)
    bins_per_axis: int = 64
    pseudo_count: float = 0.01

    def __post_init__(self):
        if len(self.low) != len(self.high) or any(not a < b for a, b in zip(self.low, self.high)):
            raise InvalidInputError("estimator box needs low < high in every coordinate")
        if self.bins_per_axis < 1:
            raise InvalidInputError("bins_per_axis must be >= 1")
        if not self.pseudo_count > 0:
            raise InvalidInputError("pseudo_count must be positive")
        object.__setattr__(self, "low", tuple(float(v) for v in self.low))
        object.__setattr__(self, "high", tuple(float(v) for v in self.high))

    @property
    def cells(self) -> int:
        return self.bins_per_axis ** len(self.low)

    def midpoints(self) -> np.ndarray:
        axes = [lo + (hi - lo) / self.bins_per_axis * (np.arange(self.bins_per_axis) + 0.5)
                for lo, hi in zip(self.low, self.high)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def counts(self, samples: np.ndarray) -> tuple[np.ndarray, int]:
        x = np.asarray(samples, dtype=np.float64)
        lo = np.asarray(self.low)
        hi = np.asarray(self.high)
        b = self.bins_per_axis
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        idx = np.floor((x[inside] - lo) / (hi - lo) * b).astype(np.int64)
        np.minimum(idx, b - 1, out=idx)
        flat = np.ravel_multi_index(tuple(idx.T), (b,) * len(lo))
        return np.bincount(flat, minlength=self.cells).astype(np.float64), int(inside.sum())


@lru_cache(maxsize=32)
def _log_cell_mass(est: GridKLEstimator, weights: bytes, means: bytes, dim: int, var: float) -> np.ndarray:
    model = GaussianMixture(np.frombuffer(weights), np.frombuffer(means).reshape(-1, dim), var)
    lp = model.log_density(est.midpoints())
    mx = lp.max()
    out = lp - (mx + np.log(np.exp(lp - mx).sum()))
    out.setflags(write=False)
    return out


def log_cell_mass(truth: GaussianMixture, est: GridKLEstimator) -> np.ndarray:
    return _log_cell_mass(est, truth.weights.tobytes(), truth.means.tobytes(), truth.dim, truth.base_variance)


def kl_divergence(samples: np.ndarray, truth: GaussianMixture, est: GridKLEstimator = GridKLEstimator()) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) == 0:
        raise InvalidInputError("need a nonempty (N, d) sample array")
    if samples.shape[1] != len(est.low):
        raise InvalidInputError("sample dimension does not match the estimator box")
    counts, n_in = est.counts(samples)
    if n_in == 0:
        raise EstimationError("no samples fall inside the estimator box")
    q = (counts + est.pseudo_count) / (n_in + est.pseudo_count * est.cells)
    return float(np.sum(q * (np.log(q) - log_cell_mass(truth, est))))


def kl_curve(snapshots: np.ndarray, truth: GaussianMixture, est: GridKLEstimator = GridKLEstimator()) -> np.ndarray:
    """KL per snapshot; NaN where no sample falls inside the box (early, wide levels with small N)."""
    out = np.empty(len(snapshots))
    for k, s in enumerate(snapshots):
        try:
            out[k] = kl_divergence(s, truth, est)
        except EstimationError:
            out[k] = np.nan
    return out


def self_kl_floor(truth: GaussianMixture, est: GridKLEstimator = GridKLEstimator(),
                  n: int = 100_000, seed: int = 0) -> float:
    """KL of ``n`` exact draws from ``truth``: the estimator's own noise floor."""
    return kl_divergence(truth.sample(n, derive_stream(seed, 0)), truth, est)


def rebound(curve: np.ndarray, floor: float) -> bool:
    """True when the curve's minimum comes before its end and the end sits
    more than ``floor`` above it. NaN entries are skipped."""
    curve = np.asarray(curve, dtype=np.float64)
    if not np.isfinite(curve).any() or not np.isfinite(curve[-1]):
        return False
    k = int(np.nanargmin(curve))
    return k < len(curve) - 1 and curve[-1] - curve[k] > floor


def fit_centers(samples: np.ndarray, init_means=TOY_CENTERS, *, variance: float = 1.0,
                tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """Two-component isotropic EM (fixed variance, free weights).

    Row 0 is always the component initialized at ``init_means[0]``.
    """
    x = np.ascontiguousarray(samples, dtype=np.float64)
    init = np.ascontiguousarray(init_means, dtype=np.float64)
    if len(x) < 2:
        raise InvalidInputError("need at least two samples")
    if init.shape != (2, x.shape[1]) or np.array_equal(init[0], init[1]):
        raise InvalidInputError("need two distinct initial means of the sample dimension")
    means, _, _, status = kernels.em_two(x, init, float(variance), float(tol), int(max_iter))
    if status:
        raise DegenerateClusterError("a mixture component lost all responsibility")
    return np.asarray(means)


@dataclass
class CenterTrajectory:
    recorded_steps: np.ndarray
    centers: np.ndarray  # (n_recorded, 2, d)

    @property
    def cluster_count(self) -> int:
        return self.centers.shape[1]


def track_centers(snapshots: np.ndarray, steps: np.ndarray, init_means=TOY_CENTERS, **kw) -> CenterTrajectory:
    centers = np.stack([fit_centers(s, init_means, **kw) for s in snapshots])
    return CenterTrajectory(np.asarray(steps), centers)


@dataclass
class BiasReport:
    d1: float
    d2: float


def bias_metrics(final_samples: np.ndarray, truth_centers=TOY_CENTERS) -> BiasReport:
    truth_centers = np.asarray(truth_centers, dtype=np.float64)
    c = fit_centers(final_samples, truth_centers)
    d = np.linalg.norm(c - truth_centers, axis=1)
    return BiasReport(float(d[0]), float(d[1]))


@dataclass
class OscillationReport:
    d_sum: np.ndarray
    d_max: np.ndarray
    settling_time: list = field(default_factory=list)  # 1-based recorded index, or None


def oscillation_metrics(traj: CenterTrajectory, window_start_index: int = 41,
                        settle_radius: float = 0.1) -> OscillationReport:
    """Distances of each cluster center to its final position over the window.

    ``window_start_index`` is 1-based, so the default 41 over 240 recorded
    steps covers the last 200.
    """
    c = np.asarray(traj.centers)
    n = c.shape[0]
    if window_start_index < 1 or window_start_index > n:
        raise InvalidInputError(f"window start {window_start_index} outside 1..{n}")
    dist = np.linalg.norm(c[window_start_index - 1:] - c[-1][None], axis=-1)  # (window, clusters)
    settle = []
    for j in range(c.shape[1]):
        outside = np.flatnonzero(dist[:, j] >= settle_radius)
        if len(outside) == 0:
            settle.append(window_start_index)
        elif outside[-1] == len(dist) - 1:
            settle.append(None)
        else:
            settle.append(window_start_index + int(outside[-1]) + 1)
    return OscillationReport(dist.sum(axis=0), dist.max(axis=0), settle)
