"""Command-line behavior: artifacts, manifests, exit codes."""

import numpy as np
import pytest

from phasefno import cli, model, training
from phasefno.spectral import GridSpec

GEN_FLAGS = ["--count", "2", "--seed", "3", "--n-x", "12", "--n-t", "10",
             "--r-x", "4", "--r-t", "8"]


def run(argv):
    return cli.main(argv)


def gen(tmp_path, name="data", task="state", extra=()):
    out = tmp_path / name
    code = run(["generate", "--task", task, *GEN_FLAGS, *extra,
                "--output-dir", str(out)])
    assert code == 0
    return out / "dataset.bin"


def train(tmp_path, dataset, name="run", extra=()):
    out = tmp_path / name
    code = run(["train", "--dataset", str(dataset), "--L", "2", "--M", "2",
                "--epochs", "4", *extra, "--output-dir", str(out)])
    assert code == 0
    return out


def manifest_lines(run_dir):
    return (run_dir / "manifest.txt").read_text().splitlines()


def without_wall_time(lines):
    return [l for l in lines if not l.startswith("wall_time_s=")]


# --- generate ---------------------------------------------------------------


def test_generate_writes_dataset_and_manifest(tmp_path):
    path = gen(tmp_path)
    assert path.exists()
    lines = manifest_lines(path.parent)
    assert lines[0] == "command=generate"
    assert any(l.startswith("hash_dataset.bin=") for l in lines)
    assert lines[-1].startswith("wall_time_s=")
    ds = training.load_dataset(path)
    assert len(ds) == 2 and ds.task == "state"


def test_generate_idempotent(tmp_path):
    a = gen(tmp_path, "a")
    b = gen(tmp_path, "b")
    assert a.read_bytes() == b.read_bytes()
    assert without_wall_time(manifest_lines(a.parent)) \
        == without_wall_time(manifest_lines(b.parent))


def test_generate_control_manifest_records_regularization(tmp_path):
    path = gen(tmp_path, task="control", extra=("--lam", "0.2"))
    ds = training.load_dataset(path)
    assert ds.manifest["lam"] == repr(0.2)
    assert ds.manifest["phi_d"] == "zero"


def test_generate_no_coords_drops_channels(tmp_path):
    path = gen(tmp_path, extra=("--no-coords",))
    ds = training.load_dataset(path)
    assert ds.inputs.shape[1] == 2
    assert ds.manifest["coords"] == "false"
    # the input width comes from the file, not from a flag
    out = train(tmp_path, path, extra=("--n-v", "2"))
    _, cfg = model.load_checkpoint(out / "checkpoint.bin")
    assert cfg.n_a == 2


def test_generate_failure_exits_nonzero(tmp_path):
    out = tmp_path / "bad"
    code = run(["generate", "--task", "state", "--count", "1", "--seed", "3",
                "--n-x", "12", "--n-t", "10", "--r-x", "1", "--r-t", "1",
                "--std-dev", "500", "--output-dir", str(out)])
    assert code == 2


# --- train ------------------------------------------------------------------


def test_train_writes_checkpoint_and_metrics(tmp_path):
    ds = gen(tmp_path)
    out = train(tmp_path, ds)
    params, cfg = model.load_checkpoint(out / "checkpoint.bin")
    assert cfg.variant == "fno_phase" and cfg.L == 2
    rows = training.load_metrics_csv(out / "metrics.csv")
    assert [r.epoch for r in rows] == [0, 1, 2, 3]


def test_train_zero_epochs_checkpoint_equals_init(tmp_path):
    ds = gen(tmp_path)
    out = train(tmp_path, ds, extra=("--epochs", "0", "--variant", "fno",
                                     "--seed", "9"))
    params, cfg = model.load_checkpoint(out / "checkpoint.bin")
    init = model.param_arrays(model.init(cfg))
    for k, v in model.param_arrays(params).items():
        np.testing.assert_array_equal(v, init[k])


def test_train_freeze_theta_metrics_match_baseline(tmp_path):
    ds = gen(tmp_path)
    base = train(tmp_path, ds, "base", ("--variant", "fno", "--seed", "4"))
    frozen = train(tmp_path, ds, "frozen",
                   ("--variant", "fno-phase", "--freeze-theta",
                    "--seed", "4"))
    base_rows = training.load_metrics_csv(base / "metrics.csv")
    frozen_rows = training.load_metrics_csv(frozen / "metrics.csv")
    assert [r.train_relative_mse for r in base_rows] \
        == [r.train_relative_mse for r in frozen_rows]


def test_train_checkpoint_idempotent(tmp_path):
    ds = gen(tmp_path)
    a = train(tmp_path, ds, "a", ("--seed", "2"))
    b = train(tmp_path, ds, "b", ("--seed", "2"))
    assert (a / "checkpoint.bin").read_bytes() \
        == (b / "checkpoint.bin").read_bytes()
    rows_a = training.load_metrics_csv(a / "metrics.csv")
    rows_b = training.load_metrics_csv(b / "metrics.csv")
    assert [(r.epoch, r.train_relative_mse) for r in rows_a] \
        == [(r.epoch, r.train_relative_mse) for r in rows_b]


def test_train_missing_dataset_exits_two(tmp_path):
    code = run(["train", "--dataset", str(tmp_path / "nope.bin"),
                "--output-dir", str(tmp_path / "out")])
    assert code == 2


def test_train_divergence_exits_two(tmp_path):
    ds = gen(tmp_path)
    code = run(["train", "--dataset", str(ds), "--L", "2", "--M", "2",
                "--epochs", "50", "--lr", "1e6",
                "--output-dir", str(tmp_path / "div")])
    assert code == 2


# --- eval -------------------------------------------------------------------


def test_eval_writes_report_and_heatmap(tmp_path):
    ds = gen(tmp_path)
    out = train(tmp_path, ds)
    ev = tmp_path / "ev"
    code = run(["eval", "--checkpoint", str(out / "checkpoint.bin"),
                "--dataset", str(ds), "--sample-id", "1", "--pgm",
                "--output-dir", str(ev)])
    assert code == 0
    report = (ev / "report.txt").read_text()
    for key in ("x0=", "x1=", "t0=", "t1=", "boundary=", "interior=",
                "all="):
        assert key in report
    rows = (ev / "heatmap.csv").read_text().splitlines()
    assert len(rows) == 12 and all(len(r.split(",")) == 10 for r in rows)
    pgm = (ev / "heatmap.pgm").read_text().splitlines()
    assert pgm[0] == "P2" and pgm[1] == "10 12"


def test_eval_sample_id_out_of_range(tmp_path, capsys):
    ds = gen(tmp_path)
    out = train(tmp_path, ds)
    code = run(["eval", "--checkpoint", str(out / "checkpoint.bin"),
                "--dataset", str(ds), "--sample-id", "5",
                "--output-dir", str(tmp_path / "ev")])
    assert code == 1
    assert "valid range is 0..1" in capsys.readouterr().err


def test_eval_exact_prediction_zero_heatmap(tmp_path):
    ds_path = gen(tmp_path)
    ds = training.load_dataset(ds_path)
    cfg = model.ModelConfig(variant="fno", n_a=4, n_b=1, n_v=4, L=2, M=2)
    params = model.init(cfg)
    for arr in model.param_arrays(params).values():
        arr[...] = 0
    ckpt = tmp_path / "zero.bin"
    model.save_checkpoint(params, cfg, ckpt)
    zero_ds = training.Dataset(ds.task, ds.grid, ds.inputs,
                               np.zeros_like(ds.targets), ds.g, ds.h,
                               ds.manifest)
    zds_path = tmp_path / "zeros.bin"
    training.save_dataset(zero_ds, zds_path)
    ev = tmp_path / "ev0"
    code = run(["eval", "--checkpoint", str(ckpt), "--dataset",
                str(zds_path), "--output-dir", str(ev)])
    assert code == 0
    grid = np.loadtxt(ev / "heatmap.csv", delimiter=",")
    np.testing.assert_array_equal(grid, 0.0)
    assert "boundary=0.0" in (ev / "report.txt").read_text()


# --- oracle -----------------------------------------------------------------

ORACLE_FLAGS = ["--n-x", "41", "--n-t", "21", "--nk", "200"]


def test_oracle_writes_fields_and_residuals(tmp_path, capsys):
    out = tmp_path / "o"
    code = run(["oracle", *ORACLE_FLAGS, "--output-dir", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "max optimality residual" in printed
    assert "refinement delta" in printed
    phi = np.loadtxt(out / "phi_star.csv", delimiter=",")
    assert phi.shape == (41, 21)
    text = (out / "residuals.txt").read_text()
    assert "probe_all_increasing=True" in text
    delta = float(text.split("refinement_delta=")[1].split()[0])
    assert delta < 1e-8


def test_oracle_zero_amplitude_gives_zero_fields(tmp_path):
    out = tmp_path / "o0"
    code = run(["oracle", "--phi0-amplitude", "0", *ORACLE_FLAGS,
                "--output-dir", str(out)])
    assert code == 0
    phi = np.loadtxt(out / "phi_star.csv", delimiter=",")
    u = np.loadtxt(out / "u_star.csv", delimiter=",")
    np.testing.assert_array_equal(phi, 0.0)
    np.testing.assert_array_equal(u, 0.0)


def test_oracle_bad_window_exits_two(tmp_path):
    code = run(["oracle", "--k-max", "1.0", "--phi0-width", "0.3",
                *ORACLE_FLAGS, "--output-dir", str(tmp_path / "o")])
    assert code == 2


# --- plumbing ---------------------------------------------------------------


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["generate", "--task", "wave"])
    assert exc.value.code == 1


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    monkeypatch.chdir(tmp_path)
    code = run(["generate", "--task", "state", *GEN_FLAGS])
    assert code == 0
    assert (tmp_path / "root" / "dataset.bin").exists()


def test_entry_point_is_wired():
    import importlib.metadata as md
    eps = md.entry_points(group="console_scripts")
    ours = [e for e in eps if e.name == "phasefno"]
    assert ours and ours[0].value == "phasefno.cli:entry"
