"""Calibration of anisotropic embedding spaces.

Deep-encoder output embeddings tend to collapse into a narrow cone: a
few singular values dominate and every pair of vectors looks alike. This
package measures that collapse (spectrum statistics, token uniformity,
PCA exports) and trains a calibration head that undoes it: a rotation
and a scaling transform with distinguishability penalties, per-dimension
decoders, a linear verbalizer, and an optional coarse-to-fine metric
loss over anchors in the Poincare ball.
"""

from .ball import (AnchorSet, init_anchors, metric_grad, metric_loss,
                   poincare_distance, project_to_ball, retract_anchors)
from .checkpoint import load_head, load_tensors, save_head, save_tensors
from .data import (LabeledDataset, SyntheticConfig, generate_narrow_cone,
                   load_dataset, load_embeddings, sample_k_shot, save_dataset)
from .errors import (ConsistencyError, FormatError, InsufficientDataError,
                     LabelError, TrainingError)
from .head import (CalibrationHead, LossBreakdown, TermWeights, calibrate,
                   calibrate_batch, classify, cls_loss, dis_loss, grad_all,
                   init_head, orth_loss, ratio, ratio_loss, relevance, softmax)
from .spectra import (SpectrumReport, class_similarity, pca_project,
                      spectrum_stats, svd_factors, svd_values,
                      token_uniformity)
from .train import (TrainConfig, TrainReport, evaluate, run_ablation, train,
                    weighted_f1)

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "CalibrationHead", "ConsistencyError", "FormatError",
    "InsufficientDataError", "LabeledDataset", "LabelError", "LossBreakdown",
    "SpectrumReport", "SyntheticConfig", "TermWeights", "TrainConfig",
    "TrainReport", "TrainingError", "calibrate", "calibrate_batch",
    "class_similarity", "classify", "cls_loss", "dis_loss",
    "evaluate", "generate_narrow_cone", "grad_all", "init_anchors",
    "init_head", "load_dataset", "load_embeddings", "load_head",
    "load_tensors", "metric_grad", "metric_loss", "orth_loss",
    "pca_project", "poincare_distance", "project_to_ball", "ratio",
    "ratio_loss", "relevance", "retract_anchors", "run_ablation",
    "sample_k_shot", "save_dataset", "save_head", "save_tensors",
    "softmax", "spectrum_stats", "svd_factors", "svd_values",
    "token_uniformity", "train", "weighted_f1",
]
