"""End-to-end runs on the synthetic benchmark: pretrain, score, finetune, distill, evaluate."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import precompute_scores
from .datamodel import stratified_split, write_split_manifest
from .evaluation import EvalProtocol, classwise_delta, evaluate, write_delta_csv, write_report
from .synthgen import SynthSpec, class_name, gen_corpus
from .trainer import MetricsLog, TrainConfig, finetune_teacher, pretrain_teacher, train_student

TEST_OFFSET = 1000  # per-video seed offset of the held-out test corpus

# KL pulls the student harder toward its teachers than squared error on
# probabilities, so the quality of the mixed target shows in the student
BENCHMARK_CONFIG = TrainConfig(distill="kl")

# student variants compared on the benchmark: name -> train_student overrides
STUDENT_VARIANTS = {
    "supervised": {"omega": 0.0},
    "tstr": {},
    "uniform": {"teacher_weighting": "uniform"},
}


@dataclass
class SeedRun:
    seed: int
    scores: dict
    teacher_reports: dict  # "invariant" / "distinctive" -> EvalReport
    student_reports: dict = field(default_factory=dict)
    deltas: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)  # wall-clock seconds; kept out of the metrics log

    def mean_score(self, videos, kind) -> float:
        return float(np.mean([self.scores[v.id].s for v in videos if v.kind == kind and v.id in self.scores]))


def benchmark(spec: SynthSpec = SynthSpec()):
    """``(train_videos, test_videos, class_names)`` for ``spec``."""
    names = [class_name(c, spec) for c in range(spec.num_classes)]
    return gen_corpus(spec), gen_corpus(spec, video_offset=TEST_OFFSET), names


def run_seed(seed, spec: SynthSpec = SynthSpec(), config: TrainConfig = None, out_dir=None,
             variants=STUDENT_VARIANTS, protocol: EvalProtocol = EvalProtocol(), data=None) -> SeedRun:
    """One complete pipeline run. Everything random is keyed by ``seed``.

    ``config`` defaults to :data:`BENCHMARK_CONFIG`.

    Writes ``metrics.jsonl``, checkpoints, the score cache, the split manifest and
    per-model reports under ``out_dir`` when given.
    """
    t0 = time.perf_counter()
    config = (config or BENCHMARK_CONFIG).for_stage("train_student", seed=seed)
    train, test, names = data or benchmark(spec)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").unlink(missing_ok=True)
    log = MetricsLog(out / "metrics.jsonl" if out else None)

    labeled, unlabeled = stratified_split(train, config.labeled_fraction, seed)
    if out:
        write_split_manifest(out / "split.csv", labeled, unlabeled)

    theta_I = pretrain_teacher("invariant", train, config, spec.num_classes, out_dir=out, log=log,
                               epoch_checkpoints=False)
    theta_D = pretrain_teacher("distinctive", train, config, spec.num_classes, out_dir=out, log=log,
                               epoch_checkpoints=False)
    pre = config.for_stage("pretrain_distinctive")
    scores = precompute_scores(theta_I, theta_D, train, pre.n, pre.clip_len,
                               cache_path=out / "scores.tsv" if out else None)
    pretrain_and_score = time.perf_counter() - t0
    fin_I = finetune_teacher(theta_I, labeled, config, out_dir=out, log=log)
    fin_D = finetune_teacher(theta_D, labeled, config, out_dir=out, log=log)

    reports = {"invariant": evaluate(fin_I, test, protocol, names),
               "distinctive": evaluate(fin_D, test, protocol, names)}
    run = SeedRun(seed, scores, reports, models={"theta_I": theta_I, "theta_D": theta_D,
                                                 "finetuned_I": fin_I, "finetuned_D": fin_D})
    run.timings["pretrain_and_score"] = pretrain_and_score
    run.deltas = classwise_delta(reports["distinctive"], reports["invariant"])
    for name, overrides in variants.items():
        cfg = config.for_stage("train_student", **overrides)
        sub = None
        if out:
            sub = out / f"student_{name}"
            sub.mkdir(exist_ok=True)
        student = train_student(theta_D, fin_I, fin_D, scores, labeled, unlabeled, cfg, spec.num_classes,
                                out_dir=sub, log=log.bind(variant=name))
        run.student_reports[name] = evaluate(student, test, protocol, names)
        run.models[name] = student

    summary = {"seed": seed, **{f"teacher_{k}": r.top1 for k, r in reports.items()},
               **{f"student_{k}": r.top1 for k, r in run.student_reports.items()},
               "mean_s_atomic": run.mean_score(train, "atomic"),
               "mean_s_composite": run.mean_score(train, "composite")}
    log.append({"stage": "summary", **summary})
    if out:
        write_delta_csv(run.deltas, out / "classwise_delta.csv")
        for k, r in {**{f"teacher_{k}": r for k, r in reports.items()},
                     **{f"student_{k}": r for k, r in run.student_reports.items()}}.items():
            write_report(r, out / f"report_{k}.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.timings["total"] = time.perf_counter() - t0
    return run


def extreme_placements(deltas, kinds: dict, k: int):
    """Count classes of the expected kind in each extreme of a sorted delta list.

    Returns ``(composite_in_top, atomic_in_bottom)`` over the top-k and bottom-k classes.
    """
    top = [c for c, _ in deltas[:k]]
    bottom = [c for c, _ in deltas[-k:]]
    return (sum(kinds[c] == "composite" for c in top), sum(kinds[c] == "atomic" for c in bottom))
