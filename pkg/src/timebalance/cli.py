"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable corpus, checkpoint or score cache), 3 numerical failure.
``TIMEBALANCE_SEED`` overrides the seed of whatever config is loaded.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from .balance import precompute_scores, read_score_cache
from .datamodel import class_names, load_dataset, load_videos, write_split_manifest
from .errors import CheckpointError, ConfigError, ContractError, DataError, NumericalError, SamplingError
from .evaluation import classwise_delta, evaluate, read_report, write_delta_csv, write_report
from .synthgen import gen_benchmark
from .trainer import MetricsLog, TrainConfig, finetune_teacher, load_checkpoint, pretrain_teacher, train_student

logger = logging.getLogger("timebalance")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(path, kind):
    cfg = cfgmod.parse_config(path, kind) if path else cfgmod.KINDS[kind]()
    seed = os.environ.get("TIMEBALANCE_SEED")
    if seed is not None and hasattr(cfg, "seed"):
        try:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        except ValueError:
            raise ConfigError(f"TIMEBALANCE_SEED must be an integer, got {seed!r}") from None
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _num_classes(root):
    return len(class_names(root))


def cmd_gen_synthetic(args):
    spec = _load(args.spec or args.config, "synth")
    rows = gen_benchmark(spec, args.out)
    (Path(args.out) / "synth.cfg").write_text(cfgmod.dump_config(spec))
    print(f"wrote {len(rows)} videos in {spec.num_classes} classes to {args.out}")


def _train_data(args, cfg: TrainConfig, need_frames=0):
    return load_dataset(args.data, cfg.labeled_fraction, cfg.seed, min_frames=need_frames)


def cmd_pretrain(args):
    cfg = _load(args.config, "train")
    objective = args.objective or (cfg.stage.split("_", 1)[1] if cfg.stage.startswith("pretrain") else None)
    if objective is None:
        raise ConfigError("pass --objective or set stage = pretrain_invariant / pretrain_distinctive")
    stage_cfg = cfg.for_stage(f"pretrain_{objective}")
    labeled, unlabeled = _train_data(args, stage_cfg, stage_cfg.n * stage_cfg.clip_len)
    out = _out(args)
    model = pretrain_teacher(objective, labeled + unlabeled, stage_cfg, _num_classes(args.data),
                             out_dir=out, log=MetricsLog(out / "metrics.jsonl"))
    print(f"{model.role} checkpoint: {out / f'pretrain_{objective}.ckpt'}")


def cmd_finetune_teacher(args):
    cfg = _load(args.config, "train")
    weights, _ = load_checkpoint(args.checkpoint)
    labeled, unlabeled = _train_data(args, cfg)
    out = _out(args)
    write_split_manifest(out / "split.csv", labeled, unlabeled)
    model = finetune_teacher(weights, labeled, cfg, out_dir=out, log=MetricsLog(out / "metrics.jsonl"))
    print(f"finetuned {model.role}: {out / f'finetune_{model.role}.ckpt'}")


def cmd_compute_similarity(args):
    cfg = _load(args.config, "train").for_stage("pretrain_distinctive")
    ckpt_I, ckpt_D = args.teachers or (args.invariant, args.distinctive)
    if not (ckpt_I and ckpt_D):
        raise ConfigError("pass --teachers <invariant> <distinctive> (or --invariant and --distinctive)")
    theta_I, _ = load_checkpoint(ckpt_I)
    theta_D, _ = load_checkpoint(ckpt_D)
    labeled, unlabeled = _train_data(args, cfg)
    out = Path(args.out)
    if out.suffix:  # a file name: the cache itself
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        out = _out(args) / "scores.tsv"
    records = precompute_scores(theta_I, theta_D, labeled + unlabeled, cfg.n, cfg.clip_len, cache_path=out)
    print(f"scored {len(records)} videos: {out}")


def cmd_train_student(args):
    cfg = _load(args.config, "train").for_stage("train_student")
    theta_I, _ = load_checkpoint(args.invariant)
    theta_D, _ = load_checkpoint(args.distinctive)
    init = load_checkpoint(args.init)[0] if args.init else None
    _, _, scores = read_score_cache(args.scores) if args.scores else (None, None, {})
    labeled, unlabeled = _train_data(args, cfg)
    out = _out(args)
    train_student(init, theta_I, theta_D, scores, labeled, unlabeled, cfg, _num_classes(args.data),
                  out_dir=out, log=MetricsLog(out / "metrics.jsonl"))
    print(f"student checkpoint: {out / 'student.ckpt'}")


def cmd_evaluate(args):
    protocol = _load(args.config, "eval")
    weights, _ = load_checkpoint(args.checkpoint)
    videos = load_videos(args.data, min_frames=protocol.F)
    if not videos:
        raise DataError(f"{args.data}: no videos to evaluate")
    report = evaluate(weights, videos, protocol, class_names(args.data))
    out = _out(args)
    write_report(report, out / "report.csv")
    print(f"top1 {report.top1:.4f} on {report.num_videos} videos: {out / 'report.csv'}")


def cmd_classwise_delta(args):
    deltas = classwise_delta(read_report(args.distinctive), read_report(args.invariant), args.k)
    out = _out(args)
    write_delta_csv(deltas, out / "classwise_delta.csv")
    for c, d in deltas:
        print(f"{d:+.3f}  {c}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="timebalance", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch metrics")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, data=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key = value config file (defaults when omitted)")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        if data:
            sp.add_argument("--data", required=True, help="corpus root (<root>/<class>/<id>.tbv)")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-synthetic", cmd_gen_synthetic, "write the synthetic benchmark", data=False)
    sp.add_argument("--spec", help="corpus spec file (same format as --config)")
    sp = add("pretrain", cmd_pretrain, "self-supervised teacher pretraining")
    sp.add_argument("--objective", choices=("invariant", "distinctive"))
    sp = add("finetune-teacher", cmd_finetune_teacher, "finetune a pretrained teacher on the labeled split")
    sp.add_argument("--checkpoint", required=True)
    sp = add("compute-similarity", cmd_compute_similarity, "score every video with both pretrained teachers")
    sp.add_argument("--teachers", nargs=2, metavar=("INVARIANT", "DISTINCTIVE"),
                    help="pretrained teacher checkpoints")
    sp.add_argument("--invariant", help="pretrained invariant teacher checkpoint")
    sp.add_argument("--distinctive", help="pretrained distinctive teacher checkpoint")
    sp = add("train-student", cmd_train_student, "distill both finetuned teachers into a student")
    sp.add_argument("--invariant", required=True, help="finetuned invariant teacher checkpoint")
    sp.add_argument("--distinctive", required=True, help="finetuned distinctive teacher checkpoint")
    sp.add_argument("--scores", help="score cache from compute-similarity (missing videos use 0.5)")
    sp.add_argument("--init", help="checkpoint to initialize the student from (random if omitted)")
    sp = add("evaluate", cmd_evaluate, "multi-clip, multi-scale top-1 accuracy")
    sp.add_argument("--checkpoint", required=True)
    sp = add("classwise-delta", cmd_classwise_delta, "per-class accuracy difference of two reports", data=False)
    sp.add_argument("--distinctive", required=True, help="report.csv of the distinctive teacher")
    sp.add_argument("--invariant", required=True, help="report.csv of the invariant teacher")
    sp.add_argument("-k", type=int, default=None, help="keep only the k most positive and k most negative")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SamplingError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
