"""Steering-angle regression workbench.

Builds compact ResNet/Inception regressors from block-layer tuples, augments
ResNets with trunk/mask attention modules, trains and evaluates them under
MSE, attacks them with FGSM/PGD, and renders gradient-saliency overlays.
"""

from .attacks import AttackConfig, RobustnessReport, fgsm, pgd, robustness_change, robustness_eval
from .attention import AttentionModule, build_attention_module, build_attention_resnet
from .data import (
    Batch,
    DatasetIndex,
    Preprocessor,
    SampleRecord,
    expand_cameras,
    generate_toy_dataset,
    load_manifest,
    make_batches,
    split,
)
from .engine import finite_difference_check, forward, gradients, load_checkpoint, save_checkpoint
from .models import (
    AttentionSettings,
    ModelConfig,
    build_inception,
    build_model,
    build_resnet,
    count_parameters,
    predict_angle,
    residual_unit_count,
)
from .saliency import SaliencyMap, blend, colorize, saliency_map
from .training import TrainHyper, TrainingCurve, evaluate, improvement_percent, mse_loss, train

__all__ = [
    "AttackConfig",
    "AttentionModule",
    "AttentionSettings",
    "Batch",
    "DatasetIndex",
    "ModelConfig",
    "Preprocessor",
    "RobustnessReport",
    "SaliencyMap",
    "SampleRecord",
    "TrainHyper",
    "TrainingCurve",
    "blend",
    "build_attention_module",
    "build_attention_resnet",
    "build_inception",
    "build_model",
    "build_resnet",
    "colorize",
    "count_parameters",
    "evaluate",
    "expand_cameras",
    "fgsm",
    "finite_difference_check",
    "forward",
    "generate_toy_dataset",
    "gradients",
    "improvement_percent",
    "load_checkpoint",
    "load_manifest",
    "make_batches",
    "mse_loss",
    "pgd",
    "predict_angle",
    "residual_unit_count",
    "robustness_change",
    "robustness_eval",
    "saliency_map",
    "save_checkpoint",
    "split",
    "train",
]

__version__ = "0.1.0"
