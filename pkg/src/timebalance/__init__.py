"""Semi-supervised video action recognition with two self-supervised teachers.

One teacher is pretrained to be temporally invariant, the other temporally
distinctive. Each unlabeled video gets a score from its clip self-similarity that
decides how much each teacher's prediction counts when distilling into a student.
"""
from .balance import SimilarityRecord, combine_teachers, precompute_scores, similarity_matrix, similarity_score
from .datamodel import (AugmentSpec, ClipSet, VideoInstance, augment, load_dataset, load_videos,
                        sample_consecutive_clips, stratified_split)
from .encoder import VideoEncoder, build_encoder, classify, encode_clip, project, temporal_slices
from .errors import CheckpointError, ConfigError, ContractError, DataError, NumericalError, SamplingError
from .evaluation import EvalProtocol, EvalReport, classwise_delta, evaluate, predict_video
from .losses import (kernel_h, loss_cross_entropy, loss_distill, loss_distinctive_pooled,
                     loss_distinctive_unpooled, loss_invariant, loss_total)
from .synthgen import SynthSpec, gen_benchmark, gen_corpus
from .trainer import TrainConfig, finetune_teacher, load_checkpoint, pretrain_teacher, save_checkpoint, train_student

__all__ = [
    "SimilarityRecord",
    "combine_teachers",
    "precompute_scores",
    "similarity_matrix",
    "similarity_score",
    "AugmentSpec",
    "ClipSet",
    "VideoInstance",
    "augment",
    "load_dataset",
    "load_videos",
    "sample_consecutive_clips",
    "stratified_split",
    "VideoEncoder",
    "build_encoder",
    "classify",
    "encode_clip",
    "project",
    "temporal_slices",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "NumericalError",
    "SamplingError",
    "EvalProtocol",
    "EvalReport",
    "classwise_delta",
    "evaluate",
    "predict_video",
    "kernel_h",
    "loss_cross_entropy",
    "loss_distill",
    "loss_distinctive_pooled",
    "loss_distinctive_unpooled",
    "loss_invariant",
    "loss_total",
    "SynthSpec",
    "gen_benchmark",
    "gen_corpus",
    "TrainConfig",
    "finetune_teacher",
    "load_checkpoint",
    "pretrain_teacher",
    "save_checkpoint",
    "train_student",
]

__version__ = "0.1.0"
