#!/usr/bin/env python3
"""Run the full paired comparison and write summary + metrics CSVs.

Usage: python3 scripts/run_headline.py [output-dir]

Trains baseline and phase-extended operators on the state and control
tasks over three seeds (about ten minutes on one CPU core) and prints
the per-task error ratios at the end. Artifacts land in the output
directory (default ./runs/headline).
"""

import sys
from pathlib import Path

from phasefno import experiment


def main(argv):
    out_root = Path(argv[1]) if len(argv) > 1 else Path("runs/headline")
    datasets = experiment.build_datasets(progress=print)
    summary = experiment.run_headline(datasets, out_root=out_root,
                                      progress=print)
    print()
    for (task, variant), value in sorted(summary.mean_final.items()):
        print(f"mean final train relative MSE [{task}/{variant}]: "
              f"{value:.5f}")
    for task, value in sorted(summary.ratio.items()):
        print(f"phase/baseline ratio [{task}]: {value:.3f}")
    print(f"artifacts in {out_root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
