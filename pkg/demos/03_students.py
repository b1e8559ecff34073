"""Distill both teachers into one student and compare weighting schemes.

Three students start from the distinctive teacher's pretrained weights and see
the same 10% labeled split:

  supervised  cross-entropy on labeled clips only
  uniform     plus distillation toward the plain average of both teachers
  tstr        plus distillation toward the score-weighted mix: videos whose
              clips look alike lean on the invariant teacher, the rest on the
              distinctive one

    python3 demos/03_students.py --out runs/seed0      # about 6 minutes per seed
"""
import argparse

import torch

from timebalance.pipeline import run_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    torch.set_num_threads(1)

    for seed in args.seeds:
        run = run_seed(seed, out_dir=f"{args.out}/seed{seed}")
        print(f"seed {seed} ({run.timings['total'] / 60:.1f} min)")
        for name, rep in run.teacher_reports.items():
            print(f"  teacher {name:11s} top-1 {rep.top1:.3f}")
        for name, rep in run.student_reports.items():
            print(f"  student {name:11s} top-1 {rep.top1:.3f}")
        print(f"  outputs in {args.out}/seed{seed}: metrics.jsonl, report_*.csv, classwise_delta.csv, checkpoints")


if __name__ == "__main__":
    main()
