import math

import numpy as np
import pytest

from edcnn.datagen import SplitSpec, gen_two_class_signals, split
from edcnn.experiments import (
    ConsistencyRunSpec,
    CurvePoint,
    DepthSweepSpec,
    _run_trial,
    curve_csv,
    emit_curve_csv,
    read_curve_csv,
    run_consistency,
    run_depth_sweep,
    run_depth_sweep_spec,
    trial_seed,
)
from edcnn.trainer import TrainConfig

FAST = {"max_epochs": 5, "early_stop_patience": 5}


def small_spec(**kw):
    base = dict(dims=[5], m_grid=[40, 90], trials=2, test_size=100, base_seed=3, train=dict(FAST))
    base.update(kw)
    return ConsistencyRunSpec(**base)


def test_single_point_run():
    spec = ConsistencyRunSpec(dims=[1], m_grid=[100], trials=1, test_size=200,
                              train={**FAST, "enforce_theorem": False})
    res = run_consistency(spec)
    assert len(res.points) == 1
    p = res.points[0]
    assert (p.d, p.m, p.trials) == (1, 100, 1)
    assert p.std_rmse == 0.0 and math.isfinite(p.mean_rmse)


def test_small_dim_requires_opt_out():
    with pytest.raises(ValueError, match="dims"):
        ConsistencyRunSpec(dims=[1], m_grid=[100], trials=1)


@pytest.mark.parametrize("kw,field", [
    (dict(m_grid=[100, 50]), "m_grid"),
    (dict(m_grid=[]), "m_grid"),
    (dict(trials=0), "trials"),
    (dict(dims=[]), "dims"),
    (dict(train={"bogus": 1}), "train"),
    (dict(train={"seed": 1}), "train.seed"),
])
def test_spec_validation_names_field(kw, field):
    with pytest.raises(ValueError, match=field):
        small_spec(**kw)


def test_unknown_spec_field():
    with pytest.raises(ValueError, match="m_grd"):
        ConsistencyRunSpec.from_dict({"m_grd": [1, 2]})


def test_consistency_determinism():
    a = curve_csv(run_consistency(small_spec()).points)
    b = curve_csv(run_consistency(small_spec()).points)
    assert a == b
    assert a != curve_csv(run_consistency(small_spec(base_seed=4)).points)


def test_trial_order_independence():
    spec = small_spec()
    forward = {(t.d, t.m, t.trial): t.rmse for t in run_consistency(spec).trials}
    for (d, m, k) in reversed(sorted(forward)):
        assert _run_trial(spec, d, m, k).rmse == forward[(d, m, k)]


def test_trial_seeds_distinct():
    seeds = {trial_seed(1, 30, m, t, s) for m in (100, 500) for t in range(5) for s in range(3)}
    assert len(seeds) == 30


def test_aggregation_recomputable_and_depth_rule():
    res = run_consistency(small_spec(trials=3))
    for p in res.points:
        vals = [t.rmse for t in res.trials if (t.d, t.m) == (p.d, p.m)]
        assert abs(p.mean_rmse - np.mean(vals)) <= 1e-12
        assert abs(p.std_rmse - np.std(vals, ddof=1)) <= 1e-12
    for t in res.trials:
        assert t.depth_L == math.ceil(t.m ** 0.25)
    lines = res.detail_csv().splitlines()
    assert len(lines) == 1 + len(res.trials)


def test_diverged_trials_excluded_with_warning():
    spec = small_spec(m_grid=[40], train={**FAST, "learning_rate": 1e200})
    with pytest.warns(RuntimeWarning, match="diverged"):
        res = run_consistency(spec)
    assert all(t.diverged for t in res.trials)
    assert res.points[0].trials == 0 and math.isnan(res.points[0].mean_rmse)
    assert len(res.manifest()["diverged_trials"]) == 2


def test_parallel_matches_serial():
    spec = small_spec(m_grid=[40])
    assert curve_csv(run_consistency(spec, jobs=2).points) == curve_csv(run_consistency(spec).points)


def test_manifest_contents():
    res = run_consistency(small_spec(m_grid=[40], trials=1))
    man = res.manifest()
    assert man["spec"]["base_seed"] == 3
    assert set(man["seeds"]) == {"d=5,m=40,trial=0"}
    assert "numpy" in man["versions"]
    assert man["wall_seconds_total"] >= 0


def test_depth_sweep_single_row_and_deterministic():
    data = gen_two_class_signals(20, 100, margin=10, seed=1)
    tr, te = split(data, SplitSpec(fraction=0.8, seed=0))
    cfg = TrainConfig(max_epochs=20, seed=4)
    t1 = run_depth_sweep(tr, te, [2], 3, cfg)
    assert len(t1) == 1 and t1[0][0] == 2 and 0.0 <= t1[0][1] <= 1.0
    assert run_depth_sweep(tr, te, [2], 3, cfg) == t1


def test_depth_sweep_spec_validation(tmp_path):
    with pytest.raises(ValueError, match="depths"):
        DepthSweepSpec(depths=[])
    with pytest.raises(ValueError, match="data"):
        DepthSweepSpec(data={"foo": 1})
    with pytest.raises(ValueError, match="train.depth_L"):
        DepthSweepSpec(train={"depth_L": 3})


def test_depth_sweep_from_csv(tmp_path):
    from edcnn.datagen import write_csv
    data = gen_two_class_signals(12, 60, margin=10, seed=2)
    tr, te = split(data, SplitSpec(fraction=0.8, seed=0))
    write_csv(tr, tmp_path / "tr.csv")
    write_csv(te, tmp_path / "te.csv")
    spec = DepthSweepSpec(depths=[2], filter_len=3, train={"max_epochs": 10},
                          data={"train_csv": str(tmp_path / "tr.csv"), "test_csv": str(tmp_path / "te.csv")})
    table, man = run_depth_sweep_spec(spec)
    assert man["n_train"] == tr.m and man["n_test"] == te.m
    assert len(table) == 1


def test_emit_curve_csv(tmp_path):
    pts = [CurvePoint(30, 100, 0.123456789012345678, 0.01, 5)]
    path = tmp_path / "c.csv"
    emit_curve_csv(pts, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "d,m,mean_rmse,std_rmse,trials" and len(lines) == 2
    assert read_curve_csv(path) == pts
    sweep = [(2, 0.0125), (3, 1 / 3)]
    emit_curve_csv(sweep, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "L,error"
    assert read_curve_csv(tmp_path / "s.csv") == sweep
    with pytest.raises(ValueError):
        emit_curve_csv([], tmp_path / "e.csv")
    with pytest.raises(OSError):
        emit_curve_csv(pts, tmp_path / "missing" / "dir" / "c.csv")


def test_round_trip_random_values(rng, tmp_path):
    pts = [CurvePoint(30, m, float(rng.random()), float(rng.random() * 1e-3), 5) for m in (100, 500)]
    emit_curve_csv(pts, tmp_path / "r.csv")
    assert read_curve_csv(tmp_path / "r.csv") == pts
