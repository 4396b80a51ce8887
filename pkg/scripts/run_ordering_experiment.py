#!/usr/bin/env python3
"""Run the attention-ordering experiment end to end and print a summary.

Trains the in-kit 6-block teacher on the synthetic texture dataset, then
trains plain and GLUSE students with and without distillation over several
seeds, reporting mean test accuracy per cell.
"""

import argparse
import time

from gluse.experiments import run_ordering_experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--max-epochs", type=int, default=10)
    ap.add_argument("--teacher-epochs", type=int, default=12)
    ap.add_argument("--dataset-seed", type=int, default=2024)
    ap.add_argument("--quiet", action="store_true")
    args = ap.parse_args()

    t0 = time.time()
    result = run_ordering_experiment(seeds=tuple(args.seeds),
                                     max_epochs=args.max_epochs,
                                     teacher_epochs=args.teacher_epochs,
                                     dataset_seed=args.dataset_seed,
                                     verbose=not args.quiet)
    print(f"\nteacher test accuracy: {result.teacher_acc:.4f}")
    for (variant, kd), accs in sorted(result.accuracy.items()):
        mean = sum(accs) / len(accs)
        accs_txt = ", ".join(f"{a:.4f}" for a in accs)
        print(f"{variant:>6} kd={str(kd):<5} mean={mean:.4f}  [{accs_txt}]")
    print(f"wall time: {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
