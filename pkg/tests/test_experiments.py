import numpy as np
import pytest

from pidld import PIDGains, run_annealed, toy_mixture
from pidld import experiments as ex
from pidld.errors import ConfigError
from pidld.sampler import toy_config

SMALL = toy_config(ensemble_size=64)


def small(factory, seeds=(0, 1), **kw):
    return factory(seeds=seeds, base=SMALL, **kw)


@pytest.fixture(scope="module")
def ablation():
    return ex.run_experiment(small(ex.kl_ablation_spec))


def test_ablation_matrix(ablation):
    spec = ablation.spec
    assert [(g.k_p, g.k_i, g.k_d) for g in spec.settings()] == [(1, 0, 0), (1, 0.1, 0), (1, 0, 6), (1, 0.1, 6)]
    assert len(spec.runs()) == 8
    steps, curve = ablation.curve(PIDGains(1.0, 0.0, 0.0))
    assert len(curve) == 240 and steps[-1] == 1200
    assert ablation.floor == pytest.approx(0.0120643644161478, rel=1e-12)


def test_rows_carry_full_gain_vector(ablation):
    for r in ablation.rows:
        assert len(r) == 9
        assert all(isinstance(v, float) for v in r[2:6])
    assert {r[6] for r in ablation.rows if not r[6].startswith("kl@")} == {"diverged", "terminal_kl", "rebound"}


def test_paired_seeding(ablation):
    """Every setting starts from the same ensemble per seed, so the first step differs only by the gains."""
    cfg = SMALL.with_gains(k_p=1.0, k_i=0.1, k_d=6.0)
    a = run_annealed(cfg, toy_mixture())
    b = run_annealed(cfg.with_gains(k_i=0.0, k_d=0.0), toy_mixture())
    assert not np.array_equal(a.snapshots[-1], b.snapshots[-1])
    for g in ablation.spec.settings():
        steps, _ = ablation.curve(g, seed=1)
        assert len(steps) == 240


def test_degenerate_settings_reproduce_baseline():
    ki = ex.run_experiment(small(ex.ki_sweep_spec, seeds=(3,)))
    kd = ex.run_experiment(small(ex.kd_sweep_spec, seeds=(3,)))
    abl = ex.run_experiment(small(ex.kl_ablation_spec, seeds=(3,)))
    base = abl.curve(PIDGains(1.0, 0.0, 0.0))[1]
    assert np.array_equal(ki.curve(PIDGains(1.0, 0.0, 0.0))[1], base, equal_nan=True)
    assert np.array_equal(kd.curve(PIDGains(1.0, 0.0, 0.0))[1], base, equal_nan=True)
    dec = ex.run_experiment(small(ex.decay_spec, seeds=(3,)))
    assert np.array_equal(dec.curve(PIDGains(1.0, 0.3, 0.0, 1.0))[1], ki.curve(PIDGains(1.0, 0.3, 0.0))[1],
                          equal_nan=True)


def test_decayed_gain_vanishes():
    res = run_annealed(SMALL.with_gains(k_i=0.3, gamma=0.9), toy_mixture())
    assert res.state.current_ki < 1e-50


def test_csv_rerun_is_byte_identical(tmp_path, ablation):
    again = ex.run_experiment(small(ex.kl_ablation_spec))
    threaded = ex.run_experiment(small(ex.kl_ablation_spec), workers=3)
    a = ex.write_result(ablation, tmp_path / "a")
    b = ex.write_result(again, tmp_path / "b")
    c = ex.write_result(threaded, tmp_path / "c")
    for pa, pb, pc in zip(a, b, c):
        assert pa.read_bytes() == pb.read_bytes() == pc.read_bytes()
    assert [p.name for p in a] == ["kl_ablation.csv", "kl_ablation_summary.csv", "kl_ablation.svg"]


def test_summary_statistics(ablation):
    rows = {(r[1], r[2], r[3], r[4], r[5], r[6]): r for r in ablation.summary()}
    vals = ablation.values("terminal_kl", k_i=0.1, k_d=6.0)
    r = rows[(1.0, 0.1, 6.0, 1.0, "terminal_kl", 0)]
    assert r[7] == 2 and r[8] == pytest.approx(vals.mean()) and r[9] == pytest.approx(vals.std(ddof=1))


def test_divergent_run_is_recorded():
    spec = ex.ExperimentSpec("blowup", SMALL, (("gains.k_d", (40.0,)),), (0,), ("terminal_kl", "bias"))
    res = ex.run_experiment(spec)
    assert res.values("diverged")[0] == 1.0
    assert np.isnan(res.values("terminal_kl")[0])


def test_oscillation_and_bias_rows():
    spec = ex.ExperimentSpec("osc", SMALL.with_gains(k_p=1.5), (("gains.k_d", (0.0, 8.0)),), (0,),
                             ("oscillation", "bias"))
    res = ex.run_experiment(spec)
    names = {(r[6], r[7]) for r in res.rows}
    for m in ("d_sum", "d_max", "settling_time", "d"):
        assert (m, 1) in names and (m, 2) in names
    assert np.all(res.values("d_max", 1) <= res.values("d_sum", 1))


def test_bias_spec_grid():
    spec = ex.bias_spec(seeds=(0,))
    gs = spec.settings()
    assert [g.k_i for g in gs[:8]] == pytest.approx([0.05 * j for j in range(8)])
    assert [g.k_d for g in gs[8:]] == [2.0 * j for j in range(1, 8)]
    assert spec.model.scale_fraction == 0.05 and spec.name == "bias"
    assert ex.bias_spec(seeds=(0,), scale_fraction=0.0).name == "bias_null"
    osc = ex.oscillation_spec(seeds=(0,))
    assert all(g.k_p == 1.5 for g in osc.settings())


def test_null_perturbation_control():
    """Without a perturbation, k_i = 0 and k_i = 0.35 give d1, d2 within two standard errors."""
    spec = ex.bias_spec(seeds=tuple(range(20)), scale_fraction=0.0)
    spec = ex.ExperimentSpec(spec.name, spec.base_config,
                             (("gains", ({"k_i": 0.0, "k_d": 0.0}, {"k_i": 0.35, "k_d": 0.0})),),
                             spec.seeds, spec.metrics, model=spec.model)
    res = ex.run_experiment(spec)
    for c in (1, 2):
        a, b = res.values("d", c, k_i=0.0), res.values("d", c, k_i=0.35)
        se = np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        assert abs(a.mean() - b.mean()) < 2 * se


@pytest.mark.parametrize("sweep", [(("gains.k_x", (1.0,)),), (("gains.k_i", ()),), (("gains", (0.1,)),),
                                   (("gains.k_d", ({"k_d": 1},)),), (("schedule", (1.0,)),)])
def test_spec_validation(sweep):
    with pytest.raises(ConfigError):
        ex.ExperimentSpec("x", SMALL, sweep, (0,), ("terminal_kl",))


def test_spec_rejects_unknown_metric_and_empty_seeds():
    with pytest.raises(ConfigError):
        ex.ExperimentSpec("x", SMALL, (), (0,), ("fid",))
    with pytest.raises(ConfigError):
        ex.ExperimentSpec("x", SMALL, (), (), ("terminal_kl",))


def test_cross_product_order():
    spec = ex.ExperimentSpec("grid", SMALL, (("gains.k_i", (0.1, 0.2)), ("gains.gamma", (1.0, 0.9))), (0,),
                             ("terminal_kl",))
    assert [(g.k_i, g.gamma) for g in spec.settings()] == [(0.1, 1.0), (0.1, 0.9), (0.2, 1.0), (0.2, 0.9)]


def test_decay_grid_trend():
    spec = ex.decay_grid_spec(seeds=(0,), base=SMALL)
    rows = []
    for g in spec.settings():
        # synthetic: the best gamma gets smaller as k_i grows
        best = {0.1: 1.0, 0.2: 0.9999, 0.3: 0.999, 0.4: 0.998, 0.5: 0.995}[g.k_i]
        rows.append(("decay_grid", 0, g.k_p, g.k_i, g.k_d, g.gamma, "terminal_kl", 0,
                     0.5 if g.gamma == best else 0.7))
    best, corr = ex.decay_grid_trend(ex.ExperimentResult(spec, rows, None))
    assert best[0.5] == 0.995 and corr == pytest.approx(1.0)


def test_boundary_cell_error():
    e = np.linspace(0.0, 1.0, 11)
    conv = e < 0.55
    assert ex.boundary_cell_error(e, conv, 0.55) == pytest.approx(0.0)
    assert ex.boundary_cell_error(e, conv, 0.65) == pytest.approx(1.0)
    assert ex.boundary_cell_error(e, np.ones(11, bool), 2.0) == 0.0
    assert ex.boundary_cell_error(e, np.zeros(11, bool), -1.0) == 0.0


def test_small_stability_grid(tmp_path):
    spec = ex.StabilityGridSpec(tuple(np.linspace(0.05, 2.5, 12)), tuple(np.linspace(0, 4, 9)), sim_steps=20_000,
                                cov_samples=20_000, cov_burn_in=2000)
    res = ex.exp_stability_grid(spec)
    assert len(res.rows) == 108
    assert res.jury_mismatches == 0 and res.sim_mismatches == 0
    assert res.boundary_cell_error <= 1.0
    stable = res.column("jury_pass") == 1
    assert np.all(np.isfinite(res.column("cov_00")[stable]))
    assert np.all(np.isnan(res.column("cov_00")[~stable]))
    a = ex.write_stability(res, tmp_path / "a")
    b = ex.write_stability(ex.exp_stability_grid(spec), tmp_path / "b")
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].suffix == ".svg"
