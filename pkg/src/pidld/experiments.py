"""Named, reproducible toy experiments.

An :class:`ExperimentSpec` is a base run configuration, a list of sweep axes
and a list of master seeds. The run matrix is the cross product of the axis
values times the seeds. Every setting reuses the same seeds, so each setting
sees the same initial ensembles and noise streams (paired design).

Output rows follow :data:`pidld.io.METRIC_SCHEMA`: the experiment id, the
seed, the full gain vector, a metric name, a cluster id (0 when the metric
is not per-cluster) and the value.
"""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import diagnostics as dg
from . import io as pio
from . import stability as st
from .errors import ConfigError, DivergenceError, EstimationError
from .rng import derive_stream
from .sampler import PIDGains, RunConfig, run_annealed, toy_config
from .score_models import BiasedScore, GaussianMixture, toy_mixture

log = logging.getLogger(__name__)

METRICS = ("kl_curve", "terminal_kl", "rebound", "bias", "oscillation")
GAIN_FIELDS = ("k_p", "k_i", "k_d", "gamma")
BIAS_DIRECTION = (-1.0, 1.0)
BIAS_FRACTION = 0.05

SUMMARY_SCHEMA = (
    ("experiment_id", str), ("k_p", float), ("k_i", float), ("k_d", float), ("gamma", float),
    ("metric_name", str), ("cluster_id", int), ("n", int), ("mean", float), ("std", float),
)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    base_config: RunConfig
    sweep: tuple[tuple[str, tuple], ...]
    seeds: tuple[int, ...]
    metrics: tuple[str, ...]
    model: Any = field(default_factory=toy_mixture)
    truth: GaussianMixture = field(default_factory=toy_mixture)
    estimator: dg.GridKLEstimator = dg.GridKLEstimator()
    floor_samples: int = 100_000

    def __post_init__(self):
        if not self.name or not self.name.replace("_", "").replace("-", "").isalnum():
            raise ConfigError("must be a nonempty identifier", "experiment.name")
        if not self.seeds:
            raise ConfigError("need at least one seed", "experiment.seeds")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; choose from {list(METRICS)}", "experiment.metrics")
        for path, values in self.sweep:
            if path != "gains" and path.removeprefix("gains.") not in GAIN_FIELDS:
                raise ConfigError(f"unsupported sweep path {path!r}", "experiment.sweep")
            if not values:
                raise ConfigError(f"axis {path!r} has no values", "experiment.sweep")
            if path == "gains":
                for v in values:
                    if not isinstance(v, dict) or not set(v) <= set(GAIN_FIELDS):
                        raise ConfigError(f"gain overrides must use keys from {list(GAIN_FIELDS)}",
                                          "experiment.sweep")
            elif any(isinstance(v, dict) for v in values):
                raise ConfigError(f"axis {path!r} takes scalar values", "experiment.sweep")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "sweep", tuple((p, tuple(v)) for p, v in self.sweep))
        object.__setattr__(self, "metrics", tuple(self.metrics))

    def settings(self) -> list[PIDGains]:
        """Gain vectors of the sweep cross product, in axis order."""
        out = []
        for combo in itertools.product(*(values for _, values in self.sweep)):
            g = self.base_config.gains
            for (path, _), value in zip(self.sweep, combo):
                if path == "gains":
                    g = replace(g, **{k: float(v) for k, v in dict(value).items()})
                else:
                    g = replace(g, **{path.removeprefix("gains."): float(value)})
            out.append(g)
        return out

    def runs(self) -> list[tuple[PIDGains, int]]:
        return [(g, s) for g in self.settings() for s in self.seeds]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[tuple]
    floor: float | None

    def values(self, metric: str, cluster: int = 0, **gains) -> np.ndarray:
        """Per-seed values of ``metric`` for the setting matching ``gains`` (NaN where missing)."""
        want = {k: float(v) for k, v in gains.items()}
        by_seed = {}
        for r in self.rows:
            if r[6] != metric or r[7] != cluster:
                continue
            g = dict(zip(GAIN_FIELDS, r[2:6]))
            if all(abs(g[k] - v) < 1e-12 for k, v in want.items()):
                by_seed.setdefault(r[1], []).append(r[8])
        return np.array([v for s in self.spec.seeds for v in by_seed.get(s, [np.nan])])

    def mean(self, metric: str, cluster: int = 0, **gains) -> float:
        v = self.values(metric, cluster, **gains)
        return float(np.nanmean(v)) if np.isfinite(v).any() else float("nan")

    def curve(self, gains: PIDGains, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """KL curve of one seed, or the seed-mean curve when ``seed`` is None."""
        steps, vals = [], []
        key = tuple(getattr(gains, f) for f in GAIN_FIELDS)
        for r in self.rows:
            if r[6].startswith("kl@") and tuple(r[2:6]) == key and (seed is None or r[1] == seed):
                steps.append(int(r[6][3:]))
                vals.append(r[8])
        steps = np.array(steps)
        vals = np.array(vals)
        order = np.unique(steps)
        return order, np.array([vals[steps == k].mean() for k in order])

    def summary(self) -> list[tuple]:
        return summarize(self.rows)


def summarize(rows: Iterable[tuple]) -> list[tuple]:
    """Mean and sample standard deviation over seeds, NaNs excluded."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r[0],) + tuple(r[2:8]), []).append(float(r[8]))
    out = []
    for key, vals in groups.items():
        v = np.array(vals)
        v = v[np.isfinite(v)]
        mean = float(v.mean()) if v.size else float("nan")
        std = float(v.std(ddof=1)) if v.size > 1 else (0.0 if v.size else float("nan"))
        out.append(key + (int(v.size), mean, std))
    return out


def _gain_row(name: str, seed: int, g: PIDGains) -> tuple:
    return (name, seed, g.k_p, g.k_i, g.k_d, g.gamma)


def run_one(spec: ExperimentSpec, gains: PIDGains, seed: int, floor: float | None,
            threads: int = 1) -> list[tuple]:
    """Rows for one (setting, seed) cell of the run matrix."""
    cfg = replace(spec.base_config, gains=gains, master_seed=seed, threads=threads)
    head = _gain_row(spec.name, seed, gains)
    try:
        res = run_annealed(cfg, spec.model)
    except DivergenceError as e:
        log.info("%s seed=%d %s diverged at step %d", spec.name, seed, gains, e.step)
        return [head + ("diverged", 0, 1.0), head + ("divergence_step", 0, float(e.step))]
    rows = [head + ("diverged", 0, 0.0)]
    want = set(spec.metrics)
    if want & {"kl_curve", "terminal_kl", "rebound"}:
        curve = dg.kl_curve(res.snapshots, spec.truth, spec.estimator)
        if "kl_curve" in want:
            rows += [head + (f"kl@{int(s)}", 0, float(v)) for s, v in zip(res.snapshot_steps, curve)]
        if "terminal_kl" in want:
            rows.append(head + ("terminal_kl", 0, float(curve[-1])))
        if "rebound" in want:
            rows.append(head + ("rebound", 0, float(dg.rebound(curve, floor))))
    if "bias" in want:
        try:
            b = dg.bias_metrics(res.ensemble.positions)
            rows += [head + ("d", 1, b.d1), head + ("d", 2, b.d2)]
        except EstimationError:
            rows += [head + ("d", 1, float("nan")), head + ("d", 2, float("nan"))]
    if "oscillation" in want:
        try:
            rep = dg.oscillation_metrics(dg.track_centers(res.snapshots, res.snapshot_steps))
            for j in range(2):
                t = rep.settling_time[j]
                rows += [head + ("d_sum", j + 1, float(rep.d_sum[j])),
                         head + ("d_max", j + 1, float(rep.d_max[j])),
                         head + ("settling_time", j + 1, float("nan") if t is None else float(t))]
        except EstimationError:
            for j in range(2):
                rows += [head + (m, j + 1, float("nan")) for m in ("d_sum", "d_max", "settling_time")]
    return rows


def run_experiment(spec: ExperimentSpec, *, workers: int = 1) -> ExperimentResult:
    """Execute the run matrix; ``workers`` runs execute concurrently.

    Row order follows the matrix order whatever the worker count.
    """
    floor = None
    if {"rebound"} & set(spec.metrics):
        floor = dg.self_kl_floor(spec.truth, spec.estimator, spec.floor_samples)
    cells = spec.runs()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda c: run_one(spec, c[0], c[1], floor), cells))
    else:
        chunks = [run_one(spec, g, s, floor) for g, s in cells]
    return ExperimentResult(spec, [r for ch in chunks for r in ch], floor)


# Spec factories for the toy experiments.

def _seeds(seeds, default: int) -> tuple[int, ...]:
    return tuple(range(default)) if seeds is None else tuple(seeds)


def kl_ablation_spec(seeds=None, base: RunConfig | None = None) -> ExperimentSpec:
    gains = ({"k_p": 1, "k_i": 0, "k_d": 0}, {"k_p": 1, "k_i": 0.1, "k_d": 0},
             {"k_p": 1, "k_i": 0, "k_d": 6}, {"k_p": 1, "k_i": 0.1, "k_d": 6})
    return ExperimentSpec("kl_ablation", base or toy_config(), (("gains", gains),), _seeds(seeds, 10),
                          ("kl_curve", "terminal_kl", "rebound"))


def ki_sweep_spec(seeds=None, base: RunConfig | None = None) -> ExperimentSpec:
    base = (base or toy_config()).with_gains(k_p=1.0, k_d=0.0, gamma=1.0)
    return ExperimentSpec("ki_sweep", base, (("gains.k_i", (0.0, 0.1, 0.2, 0.3)),), _seeds(seeds, 10),
                          ("kl_curve", "terminal_kl", "rebound"))


def decay_spec(seeds=None, base: RunConfig | None = None) -> ExperimentSpec:
    base = (base or toy_config()).with_gains(k_p=1.0, k_i=0.3, k_d=0.0)
    return ExperimentSpec("decay", base, (("gains.gamma", (1.0, 0.9)),), _seeds(seeds, 10),
                          ("kl_curve", "terminal_kl", "rebound"))


def kd_sweep_spec(seeds=None, base: RunConfig | None = None) -> ExperimentSpec:
    base = (base or toy_config()).with_gains(k_p=1.0, k_i=0.0, gamma=1.0)
    return ExperimentSpec("kd_sweep", base, (("gains.k_d", (0.0, 2.0, 4.0, 6.0)),), _seeds(seeds, 10),
                          ("kl_curve", "terminal_kl", "rebound"))


def _grid(stop: float, step: float) -> tuple[float, ...]:
    return tuple(round(step * j, 10) for j in range(int(round(stop / step)) + 1))


def bias_spec(seeds=None, scale_fraction: float = BIAS_FRACTION, base: RunConfig | None = None,
              name: str | None = None) -> ExperimentSpec:
    """k_i sweep at k_d = 0 and k_d sweep at k_i = 0 under a fixed score perturbation."""
    values = tuple({"k_i": v, "k_d": 0.0} for v in _grid(0.35, 0.05))
    values += tuple({"k_i": 0.0, "k_d": v} for v in _grid(14.0, 2.0)[1:])
    model = BiasedScore.toward(toy_mixture(), BIAS_DIRECTION, scale_fraction)
    base = (base or toy_config()).with_gains(k_p=1.0, gamma=1.0)
    return ExperimentSpec(name or ("bias" if scale_fraction else "bias_null"), base, (("gains", values),),
                          _seeds(seeds, 100), ("bias",), model=model)


def oscillation_spec(seeds=None, base: RunConfig | None = None) -> ExperimentSpec:
    values = tuple({"k_i": 0.0, "k_d": v} for v in _grid(12.0, 2.0))
    values += tuple({"k_i": v, "k_d": 0.0} for v in _grid(0.4, 0.05)[1:])
    base = (base or toy_config()).with_gains(k_p=1.5, gamma=1.0)
    return ExperimentSpec("oscillation", base, (("gains", values),), _seeds(seeds, 100), ("oscillation",))


DECAY_GRID_KI = (0.1, 0.2, 0.3, 0.4, 0.5)
DECAY_GRID_GAMMA = (1.0, 0.9999, 0.999, 0.998, 0.995, 0.99)


def decay_grid_spec(seeds=None, base: RunConfig | None = None) -> ExperimentSpec:
    base = (base or toy_config()).with_gains(k_p=1.0, k_d=0.0)
    return ExperimentSpec("decay_grid", base, (("gains.k_i", DECAY_GRID_KI), ("gains.gamma", DECAY_GRID_GAMMA)),
                          _seeds(seeds, 10), ("terminal_kl",))


SPEC_FACTORIES = {
    "kl_ablation": kl_ablation_spec,
    "ki_sweep": ki_sweep_spec,
    "decay": decay_spec,
    "kd_sweep": kd_sweep_spec,
    "bias": bias_spec,
    "oscillation": oscillation_spec,
    "decay_grid": decay_grid_spec,
}

CURVE_EXPERIMENTS = ("kl_ablation", "ki_sweep", "decay", "kd_sweep")


def decay_grid_trend(result: ExperimentResult) -> tuple[dict[float, float], float]:
    """Best decay factor per k_i and the rank correlation of ``1 - gamma*`` with k_i.

    A positive correlation means larger integral gains prefer stronger decay.
    """
    best = {}
    for ki in sorted({g.k_i for g in result.spec.settings()}):
        gammas = sorted({g.gamma for g in result.spec.settings() if g.k_i == ki})
        means = [result.mean("terminal_kl", k_i=ki, gamma=gm) for gm in gammas]
        best[ki] = gammas[int(np.nanargmin(means))]
    kis = np.array(list(best))
    strength = 1.0 - np.array([best[k] for k in kis])
    if np.ptp(strength) == 0:
        return best, 0.0
    rk = np.argsort(np.argsort(kis)).astype(float)
    rs = np.argsort(np.argsort(strength, kind="stable"), kind="stable").astype(float)
    return best, float(np.corrcoef(rk, rs)[0, 1])


# Writers

def metadata_for(spec: ExperimentSpec, floor: float | None, config_echo: dict | None = None) -> dict:
    meta = {"experiment": spec.name, "seeds": list(spec.seeds),
            "sweep": [[p, list(v)] for p, v in spec.sweep], "metrics": list(spec.metrics)}
    if floor is not None:
        meta["self_kl_floor"] = pio.format_value(floor)
    if config_echo is not None:
        meta["config"] = config_echo
    return meta


def write_result(result: ExperimentResult, out_dir: str | Path, *, svg: bool = True, log_y: bool = False,
                 config_echo: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    spec = result.spec
    meta = metadata_for(spec, result.floor, config_echo)
    paths = [pio.write_csv(result.rows, pio.METRIC_SCHEMA, out_dir / f"{spec.name}.csv", meta),
             pio.write_csv(result.summary(), SUMMARY_SCHEMA, out_dir / f"{spec.name}_summary.csv", meta)]
    if svg and "kl_curve" in spec.metrics:
        series = []
        for g in spec.settings():
            steps, mean = result.curve(g)
            if len(steps):
                series.append((f"kp={g.k_p:g} ki={g.k_i:g} kd={g.k_d:g} g={g.gamma:g}", steps, mean))
        if series:
            style = pio.PlotStyle(f"{spec.name}: seed-mean KL", "step", "KL", log_y=log_y)
            paths.append(pio.render_svg(series, style, out_dir / f"{spec.name}.svg"))
    if svg and spec.name == "decay_grid":
        kis = sorted({g.k_i for g in spec.settings()})
        gms = sorted({g.gamma for g in spec.settings()})
        grid = np.array([[result.mean("terminal_kl", k_i=k, gamma=gm) for gm in gms] for k in kis])
        style = pio.PlotStyle("terminal KL over (k_i, gamma index)", "k_i", "gamma index")
        text = pio.heatmap_svg(kis, np.arange(len(gms)), grid, style, value_label="mean KL")
        paths.append(pio.write_text(text, out_dir / f"{spec.name}.svg"))
    return paths


def exp_kl_ablation(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or kl_ablation_spec(), **kw)


def exp_ki_sweep(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or ki_sweep_spec(), **kw)


def exp_decay(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or decay_spec(), **kw)


def exp_kd_sweep(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or kd_sweep_spec(), **kw)


def exp_bias(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or bias_spec(), **kw)


def exp_oscillation(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or oscillation_spec(), **kw)


def exp_decay_grid(spec: ExperimentSpec | None = None, **kw) -> ExperimentResult:
    return run_experiment(spec or decay_grid_spec(), **kw)


# Stability grid

STABILITY_SCHEMA = (
    ("eps", float), ("k_d", float), ("m", float), ("spectral_radius", float), ("jury_pass", int),
    ("bound_statement", float), ("bound_proof", float), ("cov_00", float), ("cov_01", float),
    ("cov_11", float), ("marginal", int), ("sim_converged", int), ("sim_diverged", int),
    ("emp_cov_rel_err", float),
)


@dataclass(frozen=True)
class StabilityGridSpec:
    eps_values: tuple[float, ...]
    kd_values: tuple[float, ...]
    m: float = 1.0
    sim_steps: int = 100_000
    cov_samples: int = 0
    cov_burn_in: int = 10_000
    master_seed: int = 0

    @classmethod
    def default(cls, **kw) -> "StabilityGridSpec":
        return cls(tuple(np.linspace(0.02, 2.5, 50)), tuple(np.linspace(0.0, 5.0, 50)), **kw)


@dataclass
class StabilityGridResult:
    spec: StabilityGridSpec
    rows: list[tuple]
    jury_mismatches: int      # outside the marginal band
    sim_mismatches: int       # simulation vs eigenvalue test, outside the band
    boundary_cell_error: float  # worst |proof bound - empirical boundary| in eps cells
    max_cov_rel_err: float    # NaN when the covariance check was skipped

    def column(self, name: str) -> np.ndarray:
        j = [n for n, _ in STABILITY_SCHEMA].index(name)
        return np.array([r[j] for r in self.rows], dtype=float).reshape(len(self.spec.eps_values),
                                                                         len(self.spec.kd_values))


def boundary_cell_error(eps_values: Sequence[float], converged: Sequence[bool], bound: float) -> float:
    """Distance, in grid cells, from ``bound`` to the observed stable/unstable switch.

    The switch is the midpoint between the last converged and the first
    non-converged value of the increasing ``eps_values``. A column with no
    switch inside the grid counts as agreeing when the bound also lies
    beyond that end of the grid.
    """
    e = np.asarray(eps_values, float)
    c = np.asarray(converged, bool)
    cell = (e[-1] - e[0]) / max(len(e) - 1, 1)
    if c.all():
        return max(0.0, (e[-1] - bound) / cell)
    if not c.any():
        return max(0.0, (bound - e[0]) / cell)
    k = int(np.argmin(c))  # first non-converged
    switch = 0.5 * (e[k - 1] + e[k]) if k > 0 else e[0]
    return abs(bound - switch) / cell


def relative_cov_error(emp: np.ndarray, ref: np.ndarray) -> float:
    """Frobenius-norm relative error."""
    return float(np.linalg.norm(emp - ref) / np.linalg.norm(ref))


def exp_stability_grid(spec: StabilityGridSpec | None = None) -> StabilityGridResult:
    spec = spec or StabilityGridSpec.default()
    E, K = np.meshgrid(np.asarray(spec.eps_values, float), np.asarray(spec.kd_values, float), indexing="ij")
    conv, div = st.simulate_deterministic_grid(E, K, spec.m, spec.sim_steps)
    rows = []
    jury_bad = sim_bad = 0
    errs = []
    idx = 0
    for i, eps in enumerate(spec.eps_values):
        for j, kd in enumerate(spec.kd_values):
            rep = st.analyze(float(eps), float(kd), spec.m)
            stable = rep.spectral_radius < 1.0
            if not rep.marginal:
                jury_bad += rep.jury_pass != stable
                sim_bad += bool(conv[i, j]) != stable
            cov = rep.stationary_cov if rep.stationary_cov is not None else np.full((2, 2), np.nan)
            err = float("nan")
            if spec.cov_samples and stable and not rep.marginal:
                emp = st.empirical_stationary_covariance(float(eps), float(kd), spec.m, spec.cov_burn_in,
                                                         spec.cov_samples, derive_stream(spec.master_seed, idx))
                err = relative_cov_error(emp, cov)
                errs.append(err)
            rows.append((float(eps), float(kd), spec.m, rep.spectral_radius, int(rep.jury_pass),
                         rep.eps_bound_statement, rep.eps_bound_proof, cov[0, 0], cov[0, 1], cov[1, 1],
                         int(rep.marginal), int(conv[i, j]), int(div[i, j]), err))
            idx += 1
    cell_err = max(boundary_cell_error(spec.eps_values, conv[:, j], st.step_bounds(kd, spec.m)[1])
                   for j, kd in enumerate(spec.kd_values))
    return StabilityGridResult(spec, rows, int(jury_bad), int(sim_bad), float(cell_err),
                               float(max(errs)) if errs else float("nan"))


def write_stability(result: StabilityGridResult, out_dir: str | Path, *, svg: bool = True,
                    name: str = "stability_grid", config_echo: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    s = result.spec
    meta = {"experiment": name, "m": s.m, "sim_steps": s.sim_steps, "cov_samples": s.cov_samples,
            "jury_mismatches": result.jury_mismatches, "sim_mismatches": result.sim_mismatches,
            "boundary_cell_error": pio.format_value(result.boundary_cell_error)}
    if config_echo is not None:
        meta["config"] = config_echo
    paths = [pio.write_csv(result.rows, STABILITY_SCHEMA, out_dir / f"{name}.csv", meta)]
    if svg:
        rho = np.minimum(result.column("spectral_radius"), 1.5)
        kd = np.asarray(s.kd_values, float)
        fine = np.linspace(kd[0], kd[-1], 200)
        proof = [("eps = 2/((1+2k_d)m)", [st.step_bounds(k, s.m)[1] for k in fine], fine),
                 ("eps = 1/((1+2k_d)m)", [st.step_bounds(k, s.m)[0] for k in fine], fine)]
        style = pio.PlotStyle(f"spectral radius (clipped at 1.5), m = {s.m:g}", "eps", "k_d")
        text = pio.heatmap_svg(s.eps_values, s.kd_values, rho, style, overlays=proof, value_label="rho(J)")
        paths.append(pio.write_text(text, out_dir / f"{name}.svg"))
    return paths
