"""Pretrain the two self-supervised teachers and compare what they learned.

The invariant teacher pulls every clip of a video together; the distinctive
teacher keeps clips from different moments apart. Each video then gets a score s
from how similar its clips look to both teachers: high for atomic videos, low for
composite ones. After finetuning on 10% of the labels, the per-class accuracy
difference between the teachers shows which one suits which kind of class.

    python3 demos/02_teachers.py            # about 8 minutes on one core
    python3 demos/02_teachers.py --quick    # a minute, weaker teachers
"""
import argparse

import numpy as np
import torch

from timebalance import (
    EvalProtocol, SynthSpec, TrainConfig, classwise_delta, evaluate, finetune_teacher, precompute_scores,
    pretrain_teacher, stratified_split,
)
from timebalance.pipeline import benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    torch.set_num_threads(1)

    spec = SynthSpec()
    train, test, names = benchmark(spec)
    cfg = TrainConfig(seed=args.seed)
    if args.quick:
        cfg = TrainConfig(seed=args.seed, epochs=4, warmup_epochs=2)
    labeled, _ = stratified_split(train, cfg.labeled_fraction, args.seed)

    theta_I = pretrain_teacher("invariant", train, cfg, spec.num_classes)
    theta_D = pretrain_teacher("distinctive", train, cfg, spec.num_classes)
    scores = precompute_scores(theta_I, theta_D, train, n=4, F=16)
    for kind in ("atomic", "composite"):
        s = [scores[v.id].s for v in train if v.kind == kind]
        print(f"mean s over {kind:9s} videos: {np.mean(s):.3f}")

    protocol = EvalProtocol(num_clips=4, scales=1) if args.quick else EvalProtocol()
    rep_I = evaluate(finetune_teacher(theta_I, labeled, cfg), test, protocol, names)
    rep_D = evaluate(finetune_teacher(theta_D, labeled, cfg), test, protocol, names)
    print(f"\nfinetuned top-1: invariant {rep_I.top1:.3f}, distinctive {rep_D.top1:.3f}")
    print("\nper-class accuracy, distinctive minus invariant:")
    for name, delta in classwise_delta(rep_D, rep_I):
        print(f"  {delta:+.2f}  {name}")


if __name__ == "__main__":
    main()
