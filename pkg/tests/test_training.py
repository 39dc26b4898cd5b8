"""Dataset generation, the relative-MSE objective, and the Adam loop."""

import numpy as np
import pytest

from phasefno import burgers, model, training
from phasefno.arrayio import ArchiveError
from phasefno.spectral import GridSpec

GRID = GridSpec(12, 10)


def tiny_dataset(task="state", count=2, seed=11):
    return training.generate_dataset(task, count, seed, grid=GRID,
                                     r_x=4, r_t=8)


def tiny_config(variant="fno", **kw):
    defaults = dict(variant=variant, n_a=4, n_b=1, n_v=4, L=2, M=2, seed=5)
    defaults.update(kw)
    return model.ModelConfig(**defaults)


# --- relative MSE -----------------------------------------------------------


def test_relative_mse_zero_for_exact_prediction():
    t = np.random.default_rng(0).standard_normal((3, 5, 4))
    assert training.relative_mse(t, t) == 0.0


def test_relative_mse_unit_for_zero_prediction():
    t = np.random.default_rng(1).standard_normal((3, 5, 4))
    assert training.relative_mse(np.zeros_like(t), t) == pytest.approx(1.0)


def test_relative_mse_unit_for_doubled_target():
    t = np.random.default_rng(2).standard_normal((2, 4, 4))
    assert training.relative_mse(2 * t, t) == pytest.approx(1.0)


def test_relative_mse_scale_invariant():
    rng = np.random.default_rng(3)
    p, t = rng.standard_normal((2, 6, 5)), rng.standard_normal((2, 6, 5))
    base = training.relative_mse(p, t)
    for alpha in (0.5, -3.0, 1e6):
        assert training.relative_mse(alpha * p, alpha * t) \
            == pytest.approx(base, rel=1e-12)


def test_relative_mse_rejects_zero_norm_target():
    target = np.ones((2, 3, 3))
    target[1] = 0.0
    with pytest.raises(ValueError, match="zero norm"):
        training.relative_mse(np.ones_like(target), target)


def test_relative_mse_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        training.relative_mse(np.ones((2, 3, 3)), np.ones((2, 3, 4)))


# --- dataset generation -----------------------------------------------------


def test_generate_rejects_bad_task_and_count():
    with pytest.raises(ValueError, match="task"):
        training.generate_dataset("poisson", 1, 0)
    with pytest.raises(ValueError, match="count"):
        training.generate_dataset("state", 0, 0)


def test_dataset_shapes_and_channels():
    ds = tiny_dataset(count=3)
    assert ds.inputs.shape == (3, 4, GRID.n_x, GRID.n_t)
    assert ds.targets.shape == (3, GRID.n_x, GRID.n_t)
    # channel 0 is g broadcast along x, channel 2/3 are coordinates
    assert np.array_equal(ds.inputs[1, 0, 0], ds.g[1])
    assert np.array_equal(ds.inputs[1, 0, -1], ds.g[1])
    assert np.array_equal(ds.inputs[2, 1, 3], ds.h[2])
    assert np.array_equal(ds.inputs[0, 2, :, 0], GRID.x)
    assert np.array_equal(ds.inputs[0, 3, 4], GRID.t)


def test_state_target_keeps_initial_and_boundary_rows():
    ds = tiny_dataset(count=2)
    for i in range(2):
        np.testing.assert_allclose(ds.targets[i, :, 0],
                                   np.sin(np.pi * GRID.x), atol=1e-12)
        np.testing.assert_array_equal(ds.targets[i, 0, 1:], ds.g[i][1:])
        np.testing.assert_array_equal(ds.targets[i, -1, 1:], ds.h[i][1:])


def test_generate_deterministic_and_round_trips(tmp_path):
    a = tiny_dataset(count=2, seed=9)
    b = tiny_dataset(count=2, seed=9)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.targets, b.targets)

    p = tmp_path / "ds.bin"
    training.save_dataset(a, p)
    c = training.load_dataset(p)
    assert c.task == a.task and c.manifest == a.manifest
    np.testing.assert_array_equal(c.inputs, a.inputs)
    np.testing.assert_array_equal(c.targets, a.targets)
    assert (c.grid.n_x, c.grid.n_t) == (GRID.n_x, GRID.n_t)


def test_dataset_files_byte_identical(tmp_path):
    pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
    training.save_dataset(tiny_dataset(seed=4), pa)
    training.save_dataset(tiny_dataset(seed=4), pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_manifest_regenerates_identical_dataset():
    ds = tiny_dataset(count=2, seed=13)
    again = training.regenerate_from_manifest(ds.manifest)
    np.testing.assert_array_equal(ds.inputs, again.inputs)
    np.testing.assert_array_equal(ds.targets, again.targets)


def test_boundary_only_inputs_drop_coordinate_channels():
    ds = training.generate_dataset("state", 2, 11, grid=GRID,
                                   r_x=4, r_t=8, coords=False)
    assert ds.inputs.shape == (2, 2, GRID.n_x, GRID.n_t)
    assert np.array_equal(ds.inputs[0, 0, 5], ds.g[0])
    assert np.array_equal(ds.inputs[1, 1, 0], ds.h[1])
    # same boundary draws and targets as the default encoding
    full = tiny_dataset(count=2)
    np.testing.assert_array_equal(ds.targets, full.targets)
    np.testing.assert_array_equal(ds.inputs, full.inputs[:, :2])

    assert ds.manifest["coords"] == "false"
    again = training.regenerate_from_manifest(ds.manifest)
    np.testing.assert_array_equal(ds.inputs, again.inputs)


def test_control_dataset_manifest_and_target():
    ds = training.generate_dataset("control", 1, 21, grid=GRID,
                                   r_x=4, r_t=8, max_iter=30)
    assert ds.manifest["lam"] == repr(0.1)
    assert ds.manifest["phi_d"] == "zero"
    assert np.all(np.isfinite(ds.targets))
    assert np.max(np.abs(ds.targets)) > 0


def test_generator_failure_names_sample():
    # huge boundary amplitude makes the solve blow up on sample 0
    with pytest.raises(RuntimeError, match="sample 0"):
        training.generate_dataset("state", 1, 3, grid=GRID,
                                  std_dev=500.0, r_x=1, r_t=1)


def test_load_dataset_rejects_wrong_format(tmp_path):
    from phasefno.arrayio import save_archive
    p = tmp_path / "x.bin"
    save_archive(p, {"format": "other"}, {})
    with pytest.raises(ArchiveError, match="not a dataset"):
        training.load_dataset(p)


# --- train config and fit ---------------------------------------------------


def test_train_config_validation():
    m = tiny_config()
    with pytest.raises(ValueError, match="epochs"):
        training.TrainConfig(model=m, epochs=-1)
    with pytest.raises(ValueError, match="learning rate"):
        training.TrainConfig(model=m, learning_rate=-0.1)
    with pytest.raises(ValueError, match="batch size"):
        training.TrainConfig(model=m, batch_size=0)
    with pytest.raises(ValueError, match="betas"):
        training.TrainConfig(model=m, beta1=1.0)


def test_fit_loss_decreases():
    ds = tiny_dataset(count=3)
    res = training.fit(ds, training.TrainConfig(model=tiny_config(),
                                                epochs=100, seed=2))
    assert len(res.metrics) == 100
    assert res.metrics[-1].train_relative_mse \
        < 0.5 * res.metrics[0].train_relative_mse
    assert res.best_loss == min(r.train_relative_mse for r in res.metrics)
    assert res.metrics[res.best_epoch].train_relative_mse == res.best_loss


def test_fit_overfits_single_sample():
    ds = tiny_dataset(count=1)
    cfg = training.TrainConfig(model=tiny_config(n_v=8, seed=0),
                               epochs=400, learning_rate=3e-3, seed=0)
    res = training.fit(ds, cfg)
    assert res.best_loss < 1e-2


def test_fit_deterministic():
    ds = tiny_dataset(count=2)
    cfg = training.TrainConfig(model=tiny_config(), epochs=15, seed=8)
    r1, r2 = training.fit(ds, cfg), training.fit(ds, cfg)
    assert [m.train_relative_mse for m in r1.metrics] \
        == [m.train_relative_mse for m in r2.metrics]
    for k, v in model.param_arrays(r1.params).items():
        np.testing.assert_array_equal(v, model.param_arrays(r2.params)[k])


def test_frozen_theta_curve_matches_baseline():
    ds = tiny_dataset(count=2)
    base = training.fit(ds, training.TrainConfig(
        model=tiny_config("fno"), epochs=25, seed=4))
    frozen = training.fit(ds, training.TrainConfig(
        model=tiny_config("fno_phase"), epochs=25, seed=4,
        freeze_theta=True))
    assert [m.train_relative_mse for m in base.metrics] \
        == [m.train_relative_mse for m in frozen.metrics]
    base_arrays = model.param_arrays(base.params)
    for k, v in model.param_arrays(frozen.params).items():
        if "theta" in k:
            assert not np.any(v)
        else:
            np.testing.assert_array_equal(v, base_arrays[k])


def test_fit_zero_learning_rate_is_identity():
    ds = tiny_dataset(count=2)
    cfg = training.TrainConfig(model=tiny_config(), epochs=5,
                               learning_rate=0.0, seed=1)
    res = training.fit(ds, cfg)
    init = model.param_arrays(model.init(cfg.model))
    for k, v in model.param_arrays(res.params).items():
        np.testing.assert_array_equal(v, init[k])
    losses = [m.train_relative_mse for m in res.metrics]
    assert len(set(losses)) == 1


def test_fit_zero_epochs_returns_init():
    ds = tiny_dataset(count=2)
    cfg = training.TrainConfig(model=tiny_config(), epochs=0)
    res = training.fit(ds, cfg)
    assert res.metrics == [] and res.best_epoch == -1
    init = model.param_arrays(model.init(cfg.model))
    for k, v in model.param_arrays(res.params).items():
        np.testing.assert_array_equal(v, init[k])


def test_fit_minibatch_runs_and_is_deterministic():
    ds = tiny_dataset(count=3)
    cfg = training.TrainConfig(model=tiny_config(), epochs=10,
                               batch_size=2, seed=6)
    r1, r2 = training.fit(ds, cfg), training.fit(ds, cfg)
    assert [m.train_relative_mse for m in r1.metrics] \
        == [m.train_relative_mse for m in r2.metrics]


def test_fit_divergence_names_epoch():
    ds = tiny_dataset(count=2)
    cfg = training.TrainConfig(model=tiny_config(), epochs=50,
                               learning_rate=1e6, seed=0)
    with pytest.raises(training.DivergenceError, match="epoch"):
        training.fit(ds, cfg)
    try:
        training.fit(ds, cfg)
    except training.DivergenceError as e:
        assert e.epoch >= 0


def test_fit_rejects_channel_mismatch():
    ds = tiny_dataset(count=1)
    with pytest.raises(ValueError, match="channels"):
        training.fit(ds, training.TrainConfig(
            model=model.ModelConfig(variant="fno", n_a=2, n_b=1, n_v=4),
            epochs=1))


def test_metrics_csv_round_trip(tmp_path):
    rows = [training.MetricsRow(0, 0.5, 0.01),
            training.MetricsRow(1, 0.25000000000000011, 0.5)]
    p = tmp_path / "m.csv"
    training.save_metrics_csv(rows, p)
    back = training.load_metrics_csv(p)
    assert back == rows
    header = p.read_text().splitlines()[0]
    assert header == "epoch,train_relative_mse,wall_time_s"


# --- boundary report --------------------------------------------------------


def test_boundary_report_zero_when_exact():
    # all-zero parameters predict zero; a zero target makes the match exact
    ds = tiny_dataset(count=1)
    cfg = tiny_config()
    params = model.init(cfg)
    for arr in model.param_arrays(params).values():
        arr[...] = 0
    exact = training.Dataset(ds.task, ds.grid, ds.inputs,
                             np.zeros_like(ds.targets), ds.g, ds.h,
                             ds.manifest)
    rep = training.boundary_error_report(params, cfg, exact)
    assert rep.error_field.shape == (GRID.n_x, GRID.n_t)
    assert all(v == 0.0 for v in rep.region_means.values())


def test_boundary_report_constant_field():
    ds = tiny_dataset(count=1)
    cfg = tiny_config()
    params = model.init(cfg)
    # zero every weight, set the projection bias to target+c so the
    # prediction is a constant offset from the target
    for arr in model.param_arrays(params).values():
        arr[...] = 0
    c = 0.75
    ds2 = training.Dataset(ds.task, ds.grid, ds.inputs,
                           np.full_like(ds.targets, -c), ds.g, ds.h,
                           ds.manifest)
    rep = training.boundary_error_report(params, cfg, ds2)
    for key in ("x0", "x1", "t0", "t1", "boundary", "interior", "all"):
        assert rep.region_means[key] == pytest.approx(c, rel=1e-12)
    np.testing.assert_allclose(rep.error_field, c, rtol=1e-12)


def test_boundary_report_region_partition():
    # interior + boundary node counts add up to the whole grid
    ds = tiny_dataset(count=1)
    cfg = tiny_config()
    res = training.fit(ds, training.TrainConfig(model=cfg, epochs=2))
    rep = training.boundary_error_report(res.params, cfg, ds)
    n_edge = 2 * GRID.n_x + 2 * GRID.n_t - 4
    n_int = GRID.n_x * GRID.n_t - n_edge
    whole = (rep.region_means["boundary"] * n_edge
             + rep.region_means["interior"] * n_int) / GRID.n_points
    assert whole == pytest.approx(rep.region_means["all"], rel=1e-12)
