"""YAML run configuration: parsing, validation and conversion to domain objects.

Top-level blocks, all optional::

    target:      components (weight, mean), base_variance, optional bias
    gains:       k_p, k_i, k_d, gamma
    schedule:    sigma_first, sigma_last, levels (or an explicit sigmas list),
                 steps_per_level, base_step, step_rule
    ensemble:    size, init_low, init_high
    run:         master_seed, record_every, final_denoise, threads
    diagnostics: KL grid box, bins_per_axis, pseudo_count
    experiment:  kind, name, seeds, sweep, metrics   (sweep documents only)
    stability:   grid ranges and sample counts       (grid documents only)
    output:      dir, svg, log_y

Unknown keys are rejected. Errors carry the dotted key path.
"""
from __future__ import annotations

import importlib.resources
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .diagnostics import GridKLEstimator
from .errors import ConfigError, InvalidInputError
from .sampler import NoiseSchedule, PIDGains, RunConfig, StepRule, geometric_schedule
from .score_models import BiasedScore, GaussianMixture


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ComponentDoc(_Strict):
    weight: float
    mean: list[float]


class BiasDoc(_Strict):
    direction: list[float]
    scale_fraction: float = 0.05

    @field_validator("scale_fraction")
    @classmethod
    def _frac(cls, v):
        if not v >= 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("direction")
    @classmethod
    def _dir(cls, v):
        if not np.linalg.norm(v) > 0:
            raise ValueError("must be a nonzero vector")
        return v


class TargetDoc(_Strict):
    components: list[ComponentDoc]
    base_variance: float = 1.0
    bias: Optional[BiasDoc] = None

    @field_validator("components")
    @classmethod
    def _mixture(cls, comps):
        if not comps:
            raise ValueError("mixture needs at least one component")
        if any(not c.weight > 0 for c in comps):
            raise ValueError("weights must be strictly positive")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total:.12g}")
        if len({len(c.mean) for c in comps}) != 1 or len(comps[0].mean) < 1:
            raise ValueError("all means need the same nonzero dimension")
        return comps

    @field_validator("base_variance")
    @classmethod
    def _var(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v


class GainsDoc(_Strict):
    k_p: float = 1.0
    k_i: float = 0.0
    k_d: float = 0.0
    gamma: float = 1.0

    @field_validator("k_p", "k_i", "k_d")
    @classmethod
    def _nonneg(cls, v):
        if not v >= 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not 0 < v <= 1:
            raise ValueError(f"must lie in (0, 1], got {v}")
        return v


class ScheduleDoc(_Strict):
    sigma_first: Optional[float] = 20.0
    sigma_last: Optional[float] = 0.01
    levels: Optional[int] = 8
    sigmas: Optional[list[float]] = None
    steps_per_level: int = 150
    base_step: float = 8e-6
    step_rule: Literal["constant", "ncsn_quadratic"] = "ncsn_quadratic"

    @field_validator("steps_per_level")
    @classmethod
    def _T(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("base_step")
    @classmethod
    def _eps(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("levels")
    @classmethod
    def _L(cls, v):
        if v is not None and v < 2:
            raise ValueError("must be >= 2")
        return v

    @model_validator(mode="after")
    def _ladder(self):
        if self.sigmas is None:
            if not (self.sigma_first is not None and self.sigma_last is not None
                    and self.sigma_first > self.sigma_last > 0):
                raise ValueError("need sigma_first > sigma_last > 0")
        else:
            s = self.sigmas
            if not s or any(not v > 0 for v in s) or any(b >= a for a, b in zip(s, s[1:])):
                raise ValueError("sigmas must be positive and strictly decreasing")
        return self


class EnsembleDoc(_Strict):
    size: int = 1280
    init_low: list[float] = [-8.0, -8.0]
    init_high: list[float] = [8.0, 8.0]

    @field_validator("size")
    @classmethod
    def _n(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def _box(self):
        if len(self.init_low) != len(self.init_high) or not self.init_low:
            raise ValueError("init_low and init_high need the same nonzero dimension")
        if any(not a < b for a, b in zip(self.init_low, self.init_high)):
            raise ValueError("init_low must be < init_high in every coordinate")
        return self


class RunDoc(_Strict):
    master_seed: int = 0
    record_every: int = 5
    final_denoise: bool = False
    threads: int = 1
    save_trajectory: bool = False

    @field_validator("master_seed")
    @classmethod
    def _seed(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("must be an unsigned 64-bit integer")
        return v

    @field_validator("record_every")
    @classmethod
    def _re(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("threads")
    @classmethod
    def _threads(cls, v):
        if v < 0:
            raise ValueError("must be >= 0 (0 = auto)")
        return v


class DiagnosticsDoc(_Strict):
    box_low: list[float] = [-8.0, -8.0]
    box_high: list[float] = [8.0, 8.0]
    bins_per_axis: int = 64
    pseudo_count: float = 0.01
    floor_samples: int = 100_000

    @field_validator("bins_per_axis", "floor_samples")
    @classmethod
    def _pos(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("pseudo_count")
    @classmethod
    def _pc(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v


class SweepAxisDoc(_Strict):
    path: str
    values: list[Union[float, dict[str, float]]]

    @field_validator("values")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("needs at least one value")
        return v


class ExperimentDoc(_Strict):
    kind: Literal["kl_ablation", "ki_sweep", "decay", "kd_sweep", "bias", "oscillation", "decay_grid"]
    name: Optional[str] = None
    seeds: Optional[list[int]] = None
    seed_count: Optional[int] = None
    sweep: Optional[list[SweepAxisDoc]] = None
    metrics: Optional[list[str]] = None

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if v is not None and (not v or any(not 0 <= s < 2**64 for s in v)):
            raise ValueError("seeds must be a nonempty list of unsigned 64-bit integers")
        return v

    @field_validator("seed_count")
    @classmethod
    def _count(cls, v):
        if v is not None and v < 1:
            raise ValueError("must be >= 1")
        return v


class RangeDoc(_Strict):
    start: float
    stop: float
    num: int

    @model_validator(mode="after")
    def _range(self):
        if self.num < 1:
            raise ValueError("num must be >= 1")
        if not self.stop >= self.start:
            raise ValueError("stop must be >= start")
        return self

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.num)


class StabilityDoc(_Strict):
    m: float = 1.0
    eps: RangeDoc = RangeDoc(start=0.02, stop=2.5, num=50)
    k_d: RangeDoc = RangeDoc(start=0.0, stop=5.0, num=50)
    sim_steps: int = 100_000
    cov_samples: int = 0
    cov_burn_in: int = 10_000
    master_seed: int = 0

    @field_validator("m")
    @classmethod
    def _m(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("sim_steps")
    @classmethod
    def _steps(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("cov_samples", "cov_burn_in")
    @classmethod
    def _nonneg(cls, v):
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @model_validator(mode="after")
    def _positive_eps(self):
        if not self.eps.start > 0:
            raise ValueError("eps range must be positive")
        if self.k_d.start < 0:
            raise ValueError("k_d range must be >= 0")
        return self


class OutputDoc(_Strict):
    dir: str = "out"
    svg: bool = True
    log_y: bool = False


class ConfigDocument(_Strict):
    target: Optional[TargetDoc] = None
    gains: GainsDoc = GainsDoc()
    schedule: ScheduleDoc = ScheduleDoc()
    ensemble: EnsembleDoc = EnsembleDoc()
    run: RunDoc = RunDoc()
    diagnostics: DiagnosticsDoc = DiagnosticsDoc()
    experiment: Optional[ExperimentDoc] = None
    stability: Optional[StabilityDoc] = None
    output: OutputDoc = OutputDoc()

    @model_validator(mode="after")
    def _dims(self):
        if self.target is not None:
            d = len(self.target.components[0].mean)
            if len(self.ensemble.init_low) != d:
                raise ValueError(f"ensemble box dimension {len(self.ensemble.init_low)} != target dimension {d}")
            if self.target.bias is not None and len(self.target.bias.direction) != d:
                raise ValueError("bias direction dimension does not match the target")
        return self


DEFAULT_TARGET = TargetDoc(components=[ComponentDoc(weight=0.2, mean=[-5.0, -5.0]),
                                       ComponentDoc(weight=0.8, mean=[5.0, 5.0])])


@dataclass
class LoadedConfig:
    """A validated document plus the domain objects built from it."""

    document: ConfigDocument
    run: RunConfig
    model: Any
    truth: GaussianMixture
    estimator: GridKLEstimator
    source: str | None = None
    extra: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Resolved configuration (defaults filled) as plain data.

        The thread count is left out: it never changes results, and keeping it
        would make outputs differ byte-wise between worker counts.
        """
        out = self.document.model_dump(mode="json")
        out["run"].pop("threads", None)
        return out


def _loc(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"])


def _format_validation(e: ValidationError) -> ConfigError:
    errs = e.errors()
    first = errs[0]
    path = _loc(first) or "<root>"
    msg = first["msg"].removeprefix("Value error, ")
    if first["type"] == "extra_forbidden":
        msg = "unknown key"
    more = f" (and {len(errs) - 1} more)" if len(errs) > 1 else ""
    return ConfigError(msg + more, path)


def parse_document(text: str, source: str = "<string>") -> ConfigDocument:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"parse error at {where}: {e.problem or e}", source) from e
    except yaml.YAMLError as e:
        raise ConfigError(f"parse error: {e}", source) from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", source)
    try:
        return ConfigDocument.model_validate(raw)
    except ValidationError as e:
        raise _format_validation(e) from e


def build(doc: ConfigDocument, source: str | None = None) -> LoadedConfig:
    tgt = doc.target or DEFAULT_TARGET
    if doc.target is None:
        doc = doc.model_copy(update={"target": tgt})
    try:
        truth = GaussianMixture(np.array([c.weight for c in tgt.components]),
                                np.array([c.mean for c in tgt.components]), tgt.base_variance)
    except InvalidInputError as e:
        raise ConfigError(str(e), "target.components") from e
    model = truth
    if tgt.bias is not None:
        model = BiasedScore.toward(truth, tgt.bias.direction, tgt.bias.scale_fraction)

    s = doc.schedule
    if s.sigmas is not None:
        sched = NoiseSchedule(tuple(s.sigmas), s.steps_per_level, s.base_step, StepRule(s.step_rule))
    else:
        sched = geometric_schedule(s.sigma_first, s.sigma_last, s.levels, s.steps_per_level,
                                   s.base_step, s.step_rule)
    g = doc.gains
    run = RunConfig(PIDGains(g.k_p, g.k_i, g.k_d, g.gamma), sched, doc.ensemble.size,
                    tuple(doc.ensemble.init_low), tuple(doc.ensemble.init_high), doc.run.master_seed,
                    doc.run.record_every, doc.run.final_denoise, resolve_threads(doc.run.threads))
    dg = doc.diagnostics
    try:
        est = GridKLEstimator(tuple(dg.box_low), tuple(dg.box_high), dg.bins_per_axis, dg.pseudo_count)
    except InvalidInputError as e:
        raise ConfigError(str(e), "diagnostics") from e
    return LoadedConfig(doc, run, model, truth, est, source)


def resolve_threads(n: int) -> int:
    if n == 0:
        return max(1, os.cpu_count() or 1)
    return n


def builtin_names() -> list[str]:
    folder = importlib.resources.files("pidld") / "configs"
    return sorted(f.name[:-5] for f in folder.iterdir() if f.name.endswith(".yaml"))


def builtin_path(name: str) -> Path:
    ref = importlib.resources.files("pidld") / "configs" / f"{name}.yaml"
    return Path(str(ref))


def load_config(path: str | Path) -> LoadedConfig:
    """Load and validate a YAML configuration.

    ``path`` may also be the name of a shipped configuration (``toy_fig2``).
    """
    p = Path(path)
    if not p.exists() and p.suffix == "" and builtin_path(str(path)).is_file():
        p = builtin_path(str(path))
    try:
        text = p.read_text()
    except FileNotFoundError as e:
        raise ConfigError("file not found", str(path)) from e
    except OSError as e:
        raise ConfigError(f"cannot read: {e.strerror}", str(path)) from e
    return build(parse_document(text, str(p)), str(p))


def override_seed(cfg: LoadedConfig, seed: int) -> LoadedConfig:
    if not 0 <= seed < 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", "--seed")
    doc = cfg.document.model_copy(update={"run": cfg.document.run.model_copy(update={"master_seed": seed})})
    return build(doc, cfg.source)


def override_threads(cfg: LoadedConfig, threads: int) -> LoadedConfig:
    if threads < 0:
        raise ConfigError("must be >= 0 (0 = auto)", "--threads")
    doc = cfg.document.model_copy(update={"run": cfg.document.run.model_copy(update={"threads": threads})})
    return build(doc, cfg.source)


def echo_json(cfg: LoadedConfig) -> str:
    return json.dumps(cfg.echo(), sort_keys=True, separators=(",", ":"))
