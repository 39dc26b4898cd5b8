"""Command-line front end: data generation, training, evaluation, oracle.

Each command writes its artifacts into a run directory together with a
manifest recording the command, the fully resolved configuration, the
seeds, content hashes of every output, and the wall time. Reruns with
identical flags produce byte-identical artifacts; only the wall-time
line of the manifest may differ.

Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import heat_lqr, model, training
from .arrayio import ArchiveError
from .spectral import GridSpec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
OUTPUT_ROOT_ENV = "PHASEFNO_OUTPUT_ROOT"
MANIFEST_NAME = "manifest.txt"

_VARIANT_FLAGS = {"fno": "fno", "fno-phase": "fno_phase"}


class UsageError(ValueError):
    """Bad flag values detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; remap to the documented 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _run_dir(args) -> Path:
    root = args.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(run_dir: Path, command: str, config: dict,
                    outputs, started: float):
    """Key-value manifest alongside the artifacts; wall time goes last."""
    lines = [f"command={command}"]
    for key in sorted(config):
        lines.append(f"{key}={config[key]}")
    names = [Path(p).name for p in outputs]
    lines.append("outputs=" + ",".join(names))
    combined = hashlib.sha256()
    for path, name in sorted(zip(outputs, names), key=lambda kv: kv[1]):
        digest = _sha256(Path(path))
        combined.update(digest.encode())
        lines.append(f"hash_{name}={digest}")
    lines.append(f"content_hash={combined.hexdigest()}")
    lines.append(f"wall_time_s={time.perf_counter() - started!r}")
    (run_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def _write_field_csv(path: Path, field: np.ndarray):
    # n_x rows by n_t columns, one spatial row per line
    with open(path, "w") as f:
        for row in field:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_field_pgm(path: Path, field: np.ndarray):
    peak = float(np.max(field))
    gray = np.zeros_like(field, dtype=np.int64) if peak == 0.0 \
        else np.rint(255.0 * field / peak).astype(np.int64)
    lines = [f"P2\n{field.shape[1]} {field.shape[0]}\n255"]
    for row in gray:
        lines.append(" ".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


# --- generate ---------------------------------------------------------------


def cmd_generate(args) -> int:
    run_dir = _run_dir(args)
    started = time.perf_counter()
    grid = GridSpec(args.n_x, args.n_t)
    dataset = training.generate_dataset(
        args.task, args.count, args.seed, grid=grid,
        length_scale=args.length_scale, std_dev=args.std_dev,
        nu=args.nu, r_x=args.r_x, r_t=args.r_t, lam=args.lam,
        coords=args.coords)
    out = run_dir / "dataset.bin"
    training.save_dataset(dataset, out)
    _write_manifest(run_dir, "generate", dict(dataset.manifest),
                    [out], started)
    print(f"wrote {args.count} {args.task} samples to {out}")
    return EXIT_OK


# --- train ------------------------------------------------------------------


def cmd_train(args) -> int:
    run_dir = _run_dir(args)
    started = time.perf_counter()
    dataset = training.load_dataset(args.dataset)
    mcfg = model.ModelConfig(
        variant=_VARIANT_FLAGS[args.variant], n_a=dataset.inputs.shape[1],
        n_b=1, n_v=args.n_v, L=args.L, M=args.M, seed=args.seed)
    tcfg = training.TrainConfig(
        model=mcfg, epochs=args.epochs, learning_rate=args.lr,
        seed=args.seed, freeze_theta=args.freeze_theta)
    result = training.fit(dataset, tcfg)

    ckpt = run_dir / "checkpoint.bin"
    metrics = run_dir / "metrics.csv"
    model.save_checkpoint(result.params, mcfg, ckpt)
    training.save_metrics_csv(result.metrics, metrics)
    config = {
        "dataset": Path(args.dataset).name,
        "dataset_hash": _sha256(Path(args.dataset)),
        "variant": args.variant, "L": args.L, "M": args.M,
        "n_v": args.n_v, "epochs": args.epochs, "lr": repr(args.lr),
        "seed": args.seed, "freeze_theta": args.freeze_theta,
        "best_epoch": result.best_epoch,
    }
    _write_manifest(run_dir, "train", config, [ckpt, metrics], started)
    final = result.metrics[-1].train_relative_mse if result.metrics \
        else float("nan")
    print(f"trained {args.variant} for {args.epochs} epochs; "
          f"final train relative MSE {final:.6g}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------


def cmd_eval(args) -> int:
    run_dir = _run_dir(args)
    started = time.perf_counter()
    params, mcfg = model.load_checkpoint(args.checkpoint)
    dataset = training.load_dataset(args.dataset)
    if not 0 <= args.sample_id < len(dataset):
        raise UsageError(f"sample-id {args.sample_id} out of range; "
                         f"valid range is 0..{len(dataset) - 1}")

    report = training.boundary_error_report(params, mcfg, dataset)
    pred = model.forward(params, mcfg, dataset.inputs[args.sample_id],
                         dataset.grid)
    sample_err = np.abs(pred[0] - dataset.targets[args.sample_id])

    report_path = run_dir / "report.txt"
    heatmap = run_dir / "heatmap.csv"
    lines = [f"{key}={report.region_means[key]!r}"
             for key in ("x0", "x1", "t0", "t1", "boundary",
                         "interior", "all")]
    report_path.write_text("\n".join(lines) + "\n")
    _write_field_csv(heatmap, sample_err)
    outputs = [report_path, heatmap]
    if args.pgm:
        pgm = run_dir / "heatmap.pgm"
        _write_field_pgm(pgm, sample_err)
        outputs.append(pgm)
    config = {
        "checkpoint": Path(args.checkpoint).name,
        "checkpoint_hash": _sha256(Path(args.checkpoint)),
        "dataset": Path(args.dataset).name,
        "dataset_hash": _sha256(Path(args.dataset)),
        "sample_id": args.sample_id,
    }
    _write_manifest(run_dir, "eval", config, outputs, started)
    print(f"boundary mean {report.region_means['boundary']:.6g}, "
          f"interior mean {report.region_means['interior']:.6g}")
    return EXIT_OK


# --- oracle -----------------------------------------------------------------


def cmd_oracle(args) -> int:
    run_dir = _run_dir(args)
    started = time.perf_counter()
    bump = heat_lqr.GaussianBump(args.phi0_amplitude, args.phi0_center,
                                 args.phi0_width)
    problem = heat_lqr.HeatLqrProblem(
        bump=bump, x_extent=args.x_extent, t_final=args.t_final,
        n_x=args.n_x, n_t=args.n_t, k_max=args.k_max, n_k=args.nk)
    phi, u = heat_lqr.optimal_fields(problem)
    state_res, adjoint_res = map(float, heat_lqr.optimality_residuals(problem))
    probe = heat_lqr.cost_optimality_probe(problem)

    doubled = heat_lqr.HeatLqrProblem(
        bump=bump, x_extent=args.x_extent, t_final=args.t_final,
        n_x=args.n_x, n_t=args.n_t, k_max=args.k_max, n_k=2 * args.nk)
    phi2, u2 = heat_lqr.optimal_fields(doubled)
    delta = max(float(np.max(np.abs(phi - phi2))),
                float(np.max(np.abs(u - u2))))

    phi_path, u_path = run_dir / "phi_star.csv", run_dir / "u_star.csv"
    _write_field_csv(phi_path, phi)
    _write_field_csv(u_path, u)
    residuals = run_dir / "residuals.txt"
    residuals.write_text(
        f"state_residual={state_res!r}\n"
        f"adjoint_residual={adjoint_res!r}\n"
        f"cost_at_optimum={float(probe.j_star)!r}\n"
        f"probe_all_increasing={probe.all_increasing()}\n"
        f"refinement_delta={delta!r}\n")
    config = {
        "phi0_amplitude": repr(args.phi0_amplitude),
        "phi0_center": repr(args.phi0_center),
        "phi0_width": repr(args.phi0_width),
        "x_extent": repr(args.x_extent), "t_final": repr(args.t_final),
        "n_x": args.n_x, "n_t": args.n_t,
        "k_max": repr(args.k_max), "nk": args.nk,
    }
    _write_manifest(run_dir, "oracle", config,
                    [phi_path, u_path, residuals], started)
    print(f"max optimality residual {max(state_res, adjoint_res):.6g}")
    print(f"refinement delta {delta:.6g}")
    print(f"cost probe increasing: {probe.all_increasing()}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phasefno",
                     description="Boundary-to-field operator experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a training dataset")
    p.add_argument("--task", choices=("state", "control"), required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-x", type=int, default=24)
    p.add_argument("--n-t", type=int, default=30)
    p.add_argument("--length-scale", type=float, default=0.15)
    p.add_argument("--std-dev", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.05)
    p.add_argument("--r-x", type=int, default=8)
    p.add_argument("--r-t", type=int, default=32)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--no-coords", dest="coords", action="store_false",
                   help="omit the coordinate input channels; the model "
                        "then sees the boundary pair alone")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train an operator on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=tuple(_VARIANT_FLAGS),
                   default="fno-phase")
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--n-v", type=int, default=4)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze-theta", action="store_true")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--sample-id", type=int, default=0)
    p.add_argument("--pgm", action="store_true",
                   help="also write a grayscale PGM heatmap")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="closed-form optimal-control check")
    p.add_argument("--phi0-amplitude", type=float, default=1.0)
    p.add_argument("--phi0-center", type=float, default=0.0)
    p.add_argument("--phi0-width", type=float, default=1.0)
    p.add_argument("--x-extent", type=float, default=12.0)
    p.add_argument("--t-final", type=float, default=8.0)
    p.add_argument("--n-x", type=int, default=241)
    p.add_argument("--n-t", type=int, default=161)
    p.add_argument("--k-max", type=float, default=12.0)
    p.add_argument("--nk", type=int, default=800)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArchiveError, RuntimeError, FloatingPointError,
            ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
