#!/usr/bin/env python3
"""Desk-scale end-to-end run: data synthesis, training, held-out evaluation.

Generates 500 training and 100 held-out pairs (64x64, rotation within
+-15 degrees, scale in [0.85, 1.15]), trains the text-assisted arm and
the no-text ablation arm for 30 epochs each, evaluates both on the
held-out pairs, and writes an ablation comparison table.  Everything
runs through the CLI so the on-disk formats are exercised end to end.

Exit status is nonzero if the text-assisted arm misses the desk-scale
bar (CMR@3 >= 0.4 and CMR@5 >= 0.6) or the run exceeds its time budget.
The ablation gap direction is reported, never gated.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

TRAIN_PAIRS = 500
TEST_PAIRS = 100
EPOCHS = 30
IMAGE_SIZE = 64
TRAIN_SEED = 1001
TEST_SEED = 2002
PERTURB = ["--set", "rot_deg=15", "--set", "scale_min=0.85", "--set", "scale_max=1.15"]
CMR3_BAR = 0.4
CMR5_BAR = 0.6
TIME_BUDGET_S = 3600


def cli(args, env):
    cmd = [sys.executable, "-m", "osreg.cli", *args]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.stderr.write(proc.stdout + proc.stderr)
        raise SystemExit(f"command failed ({proc.returncode}): {' '.join(args)}")
    return proc.stdout


def parse_total(report_csv: Path) -> dict:
    last = report_csv.read_text().splitlines()[-1]
    parts = last.split(",")
    assert parts[0] == "TOTAL", f"no TOTAL row in {report_csv}"
    return {
        "rmse": float(parts[1]),
        "cmr1": float(parts[3]),
        "cmr3": float(parts[4]),
        "cmr5": float(parts[5]),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="e2e_run")
    parser.add_argument("--epochs", type=int, default=EPOCHS)
    parser.add_argument("--train-pairs", type=int, default=TRAIN_PAIRS)
    parser.add_argument("--test-pairs", type=int, default=TEST_PAIRS)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    env = dict(os.environ)
    env["OMP_NUM_THREADS"] = "1"  # single-threaded budget and bit-stable math
    env["OPENBLAS_NUM_THREADS"] = "1"
    env["MKL_NUM_THREADS"] = "1"

    t_start = time.time()
    timings = {}

    def phase(name, cli_args):
        t0 = time.time()
        out = cli(cli_args, env)
        timings[name] = time.time() - t0
        print(f"[{time.time() - t_start:7.1f}s] {name}: {out.strip().splitlines()[-1]}")
        return out

    train_dir = work / "train_data"
    test_dir = work / "test_data"
    phase(
        "gen-train",
        ["gen-data", "--out", str(train_dir), "--count", str(args.train_pairs),
         "--size", str(IMAGE_SIZE), "--seed", str(TRAIN_SEED), *PERTURB],
    )
    phase(
        "gen-test",
        ["gen-data", "--out", str(test_dir), "--count", str(args.test_pairs),
         "--size", str(IMAGE_SIZE), "--seed", str(TEST_SEED), *PERTURB],
    )

    arms = {
        "W/ T, Coarse": ["--text-synth", "--set", "text_stage=coarse"],
        "W/O T": ["--set", "text_stage=none"],
    }
    metrics = {}
    for label, extra in arms.items():
        tag = "with_text" if "synth" in " ".join(extra) else "no_text"
        ckpt = work / f"{tag}.ckpt"
        report = work / f"{tag}_report.csv"
        phase(
            f"train {label}",
            ["train", "--data", str(train_dir), "--out", str(ckpt),
             "--set", f"epochs={args.epochs}", *extra],
        )
        phase(
            f"eval {label}",
            ["eval", "--ckpt", str(ckpt), "--data", str(test_dir), "--out", str(report)],
        )
        metrics[label] = parse_total(report)

    elapsed = time.time() - t_start

    ablation_lines = ["method,rmse,cmr1,cmr3,cmr5"]
    for label in ("W/O T", "W/ T, Coarse"):
        m = metrics[label]
        ablation_lines.append(
            f"{label},{m['rmse']:.4f},{m['cmr1']:.4f},{m['cmr3']:.4f},{m['cmr5']:.4f}"
        )
    ablation = "\n".join(ablation_lines)
    (work / "ablation_table.csv").write_text(ablation + "\n", encoding="utf-8")
    print("\nText-interaction ablation on held-out pairs:")
    print(ablation)
    gap = metrics["W/ T, Coarse"]["cmr3"] - metrics["W/O T"]["cmr3"]
    direction = "improves" if gap > 0 else ("hurts" if gap < 0 else "does not change")
    print(f"text enhancement {direction} CMR@3 by {abs(gap):.4f} (reported, not gated)")

    gated = metrics["W/ T, Coarse"]
    ok = gated["cmr3"] >= CMR3_BAR and gated["cmr5"] >= CMR5_BAR and elapsed <= TIME_BUDGET_S
    summary = {
        "elapsed_s": round(elapsed, 1),
        "time_budget_s": TIME_BUDGET_S,
        "timings_s": {k: round(v, 1) for k, v in timings.items()},
        "metrics": metrics,
        "bars": {"cmr3": CMR3_BAR, "cmr5": CMR5_BAR},
        "passed": ok,
    }
    (work / "e2e_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(
        f"\n{'PASS' if ok else 'FAIL'}: cmr3={gated['cmr3']:.3f} (bar {CMR3_BAR}), "
        f"cmr5={gated['cmr5']:.3f} (bar {CMR5_BAR}), elapsed {elapsed / 60:.1f} min "
        f"(budget {TIME_BUDGET_S // 60} min)"
    )
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
