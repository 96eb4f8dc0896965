"""Benchmark harness and trainable baselines for edge-preserving image smoothing.

Module map:
- autodiff: dense-tensor engine with reverse-mode differentiation and ADAM
- groundtruth, losses: multi-target groundtruth sets and the training losses
- metrics, reports: vote-weighted quality metrics, leaderboards, timing tables
- dataset: schema, validation, statistics, synthetic generation, patches
- models: VDCNN / ResNet builders, inference, checkpoints
- trainer: the patch-based training protocol
- applications: tone mapping and contrast enhancement demos
- annotation: HTTP backend for the two-step human selection study
- cli: the `epsbench` command
"""

from .autodiff import (
    AdamState,
    BatchNormState,
    ShapeError,
    Tensor,
    adam_step,
    add,
    batchnorm,
    conv2d,
    grad_check,
    param,
    relu,
    set_default_dtype,
)
from .groundtruth import GroundTruthError, GroundTruthSet
from .losses import (
    NeighborhoodSpec,
    batch_loss,
    combined_loss,
    neighborhood_loss,
    weighted_l1_loss,
    weighted_l2_loss,
)
from .metrics import (
    MetricError,
    MetricReport,
    VoteTally,
    greedy_param_search,
    mae14,
    pooled_errors,
    rank_votes,
    rmse14,
    select_top5,
    wmae,
    wrmse,
)
from .models import (
    Checkpoint,
    CheckpointError,
    ModelSpec,
    build_model,
    build_resnet,
    build_vdcnn,
    forward,
    load_checkpoint,
    read_checkpoint,
    resnet_spec,
    save_checkpoint,
    vdcnn_spec,
)
from .dataset import (
    Dataset,
    DatasetManifest,
    DatasetValidationError,
    PatchBatch,
    SynthSpec,
    VoteRecord,
    load_and_validate,
    sample_patches,
    synth_generate,
    vote_statistics,
)
from .trainer import (
    TrainConfig,
    TrainLog,
    TrainResult,
    evaluate_split,
    timeit,
    train,
)
from .applications import HdrImage, contrast_enhance, tone_map

__version__ = "0.1.0"
