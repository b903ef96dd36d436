"""Command-line entry point.

    pidld run <config>             one annealed run: KL curve, bias, CSV (+ SVG)
    pidld sweep <spec>             a named experiment from a config's experiment block
    pidld stability <grid-spec>    stability grid over (eps, k_d)
    pidld plot <csv> --out <svg>   chart a CSV written by the commands above

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import diagnostics as dg
from . import experiments as ex
from . import io as pio
from .errors import ConfigError, DivergenceError, DivergentSystemError, InvalidInputError, PIDLDError
from .sampler import run_annealed

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("pidld")


def _common(p: argparse.ArgumentParser, positional: str | None) -> None:
    if positional:
        p.add_argument(positional, nargs="?", help="YAML file or shipped config name")
    p.add_argument("--config", help="YAML file (alternative to the positional argument)")
    p.add_argument("--seed", type=int, help="override the master seed (u64)")
    p.add_argument("--out-dir", help="output directory (default: output.dir from the config)")
    p.add_argument("--threads", type=int, help="worker threads, 0 = one per CPU")
    p.add_argument("--no-svg", action="store_true", help="skip SVG output")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pidld", description="PID-controlled Langevin dynamics toolkit")
    p.add_argument("--version", action="version", version=f"pidld {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one annealed sampler"), "config_file")
    _common(sub.add_parser("sweep", help="run an experiment matrix"), "spec")
    _common(sub.add_parser("stability", help="stability grid over (eps, k_d)"), "grid_spec")
    pl = sub.add_parser("plot", help="render a CSV as SVG")
    pl.add_argument("csv")
    pl.add_argument("--out", required=True)
    pl.add_argument("--log-y", action="store_true")
    return p


def _config_path(args, positional: str) -> str:
    given = getattr(args, positional, None)
    if given and args.config and given != args.config:
        raise ConfigError("pass the config either positionally or with --config, not both", "--config")
    path = given or args.config
    if not path:
        raise ConfigError("no configuration given", "--config")
    return path


def _load(args, positional: str) -> cfgmod.LoadedConfig:
    cfg = cfgmod.load_config(_config_path(args, positional))
    if args.seed is not None:
        cfg = cfgmod.override_seed(cfg, args.seed)
    if args.threads is not None:
        cfg = cfgmod.override_threads(cfg, args.threads)
    return cfg


def _out_dir(args, cfg: cfgmod.LoadedConfig) -> Path:
    return Path(args.out_dir or cfg.document.output.dir)


def cmd_run(args) -> int:
    cfg = _load(args, "config_file")
    out = _out_dir(args, cfg)
    res = run_annealed(cfg.run, cfg.model)
    g = cfg.run.gains
    head = ("run", cfg.run.master_seed, g.k_p, g.k_i, g.k_d, g.gamma)
    curve = dg.kl_curve(res.snapshots, cfg.truth, cfg.estimator)
    rows = [head + (f"kl@{int(s)}", 0, float(v)) for s, v in zip(res.snapshot_steps, curve)]
    rows.append(head + ("terminal_kl", 0, float(curve[-1]) if len(curve) else float("nan")))
    if cfg.truth.dim == 2 and len(cfg.truth.weights) == 2:
        try:
            # cluster 1 is the heavier component
            centers = cfg.truth.means[::-1] if cfg.truth.weights[0] < cfg.truth.weights[1] else cfg.truth.means
            b = dg.bias_metrics(res.ensemble.positions, centers)
            rows += [head + ("d", 1, b.d1), head + ("d", 2, b.d2)]
        except PIDLDError as e:
            log.warning("center fit skipped: %s", e)
    meta = {"command": "run", "config": cfg.echo()}
    pio.write_csv(rows, pio.METRIC_SCHEMA, out / "run.csv", meta)
    if cfg.document.run.save_trajectory:
        d = res.ensemble.dim
        traj = ((int(s), int(pid), *map(float, x)) for s, snap in zip(res.snapshot_steps, res.snapshots)
                for pid, x in zip(res.ensemble.particle_ids, snap))
        pio.write_csv(traj, pio.trajectory_schema(d), out / "trajectory.csv", meta)
    if not np.isfinite(curve).any():
        log.warning("no snapshot had samples inside the KL box; skipping the chart")
    elif not args.no_svg and cfg.document.output.svg:
        style = pio.PlotStyle("KL along sampling", "step", "KL", log_y=cfg.document.output.log_y)
        label = f"kp={g.k_p:g} ki={g.k_i:g} kd={g.k_d:g} g={g.gamma:g}"
        pio.render_svg([(label, res.snapshot_steps, curve)], style, out / "run.svg")
    print(f"terminal KL {curve[-1]:.6g} -> {out / 'run.csv'}" if len(curve) else f"-> {out / 'run.csv'}")
    return EXIT_OK


def experiment_spec_from(cfg: cfgmod.LoadedConfig, seed_override: int | None = None) -> ex.ExperimentSpec:
    e = cfg.document.experiment
    if e is None:
        raise ConfigError("sweep needs an experiment block", "experiment")
    factory = ex.SPEC_FACTORIES[e.kind]
    default = factory(seeds=(0,), base=replace(cfg.run, threads=1))
    if e.seeds is not None:
        seeds = tuple(e.seeds)
        if seed_override is not None:
            seeds = tuple(seed_override + k for k in range(len(seeds)))
    else:
        n = e.seed_count or (100 if e.kind in ("bias", "oscillation") else 10)
        seeds = tuple(cfg.run.master_seed + k for k in range(n))
    model = default.model
    if cfg.document.target is not None and (e.kind != "bias" or cfg.document.target.bias is not None):
        model = cfg.model
    sweep = default.sweep if e.sweep is None else tuple((a.path, tuple(a.values)) for a in e.sweep)
    metrics = default.metrics if e.metrics is None else tuple(e.metrics)
    base = default.base_config if e.sweep is None else replace(cfg.run, threads=1)
    return ex.ExperimentSpec(e.name or default.name, base, sweep, seeds, metrics, model=model,
                             truth=cfg.truth, estimator=cfg.estimator,
                             floor_samples=cfg.document.diagnostics.floor_samples)


def cmd_sweep(args) -> int:
    cfg = _load(args, "spec")
    spec = experiment_spec_from(cfg, args.seed)
    out = _out_dir(args, cfg)
    result = ex.run_experiment(spec, workers=cfg.run.threads)
    paths = ex.write_result(result, out, svg=not args.no_svg and cfg.document.output.svg,
                            log_y=cfg.document.output.log_y, config_echo=cfg.echo())
    diverged = int(sum(r[8] for r in result.rows if r[6] == "diverged"))
    if diverged:
        log.warning("%d run(s) diverged; their metrics are omitted", diverged)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = _load(args, "grid_spec")
    s = cfg.document.stability
    if s is None:
        raise ConfigError("stability needs a stability block", "stability")
    seed = cfg.run.master_seed if args.seed is not None else s.master_seed
    spec = ex.StabilityGridSpec(tuple(s.eps.values()), tuple(s.k_d.values()), s.m, s.sim_steps,
                                s.cov_samples, s.cov_burn_in, seed)
    res = ex.exp_stability_grid(spec)
    out = _out_dir(args, cfg)
    paths = ex.write_stability(res, out, svg=not args.no_svg and cfg.document.output.svg,
                               config_echo=cfg.echo())
    print(f"jury mismatches {res.jury_mismatches}, simulation mismatches {res.sim_mismatches}, "
          f"boundary error {res.boundary_cell_error:.3g} cells")
    for p in paths:
        print(p)
    return EXIT_OK


def _plot_metric_table(table: pio.CsvTable, log_y: bool) -> str:
    idx = {n: i for i, n in enumerate(table.header)}
    curves: dict[tuple, dict[int, list[float]]] = {}
    for r in table.rows:
        name = r[idx["metric_name"]]
        if not str(name).startswith("kl@"):
            continue
        key = tuple(r[idx[k]] for k in ("k_p", "k_i", "k_d", "gamma"))
        curves.setdefault(key, {}).setdefault(int(name[3:]), []).append(float(r[idx["value"]]))
    if not curves:
        raise InvalidInputError("CSV holds no KL curve rows to plot")
    series = []
    for (kp, ki, kd, gm), pts in curves.items():
        steps = sorted(pts)
        series.append((f"kp={kp:g} ki={ki:g} kd={kd:g} g={gm:g}", steps, [np.mean(pts[s]) for s in steps]))
    return pio.line_chart_svg(series, pio.PlotStyle("seed-mean KL", "step", "KL", log_y=log_y))


def _plot_stability_table(table: pio.CsvTable) -> str:
    eps = np.array(table.column("eps"), float)
    kd = np.array(table.column("k_d"), float)
    rho = np.array(table.column("spectral_radius"), float)
    ue, uk = np.unique(eps), np.unique(kd)
    grid = np.full((len(ue), len(uk)), np.nan)
    grid[np.searchsorted(ue, eps), np.searchsorted(uk, kd)] = np.minimum(rho, 1.5)
    m = float(table.column("m")[0])
    fine = np.linspace(uk[0], uk[-1], 200)
    overlays = [("eps = 2/((1+2k_d)m)", 2.0 / ((1 + 2 * fine) * m), fine)]
    return pio.heatmap_svg(ue, uk, grid, pio.PlotStyle("spectral radius", "eps", "k_d"), overlays, "rho(J)")


def _plot_generic(table: pio.CsvTable, log_y: bool) -> str:
    numeric = [j for j, _ in enumerate(table.header)
               if table.rows and all(isinstance(r[j], float) for r in table.rows)]
    if len(numeric) < 2:
        raise InvalidInputError("CSV needs at least two numeric columns to plot")
    x = [r[numeric[0]] for r in table.rows]
    series = [(table.header[j], x, [r[j] for r in table.rows]) for j in numeric[1:]]
    return pio.line_chart_svg(series, pio.PlotStyle("", table.header[numeric[0]], "", log_y=log_y))


def cmd_plot(args) -> int:
    table = pio.read_csv(args.csv)
    if not table.rows:
        raise InvalidInputError(f"{args.csv}: no data rows")
    hdr = set(table.header)
    if {"metric_name", "value", "k_p"} <= hdr:
        text = _plot_metric_table(table, args.log_y)
    elif {"eps", "k_d", "spectral_radius"} <= hdr:
        text = _plot_stability_table(table)
    else:
        text = _plot_generic(table, args.log_y)
    pio.write_text(text, args.out)
    print(args.out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "stability": cmd_stability, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidInputError) as e:
        print(f"pidld: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, DivergentSystemError) as e:
        print(f"pidld: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"pidld: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
