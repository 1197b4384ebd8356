from .data import (Dataset, FeatureMap, ScoreModel, apply_feature_map, argmax_lowest,
                   max_pairwise_dual_norm, pairwise_differences, predict)
from .losses import (LossKind, LossName, Regularizer, erm_objective, loss_grad,
                     loss_subgradient, loss_value, losses, margins)
from .metrics import (ErrorSample, accuracy, auc, class_scores, multiclass_auc,
                      one_vs_rest_errors, ranking_errors, threshold_accuracy)
from .norms import NormKind, dual_norm, dual_norm_subgradient, norm

__all__ = [
    "Dataset", "FeatureMap", "ScoreModel", "apply_feature_map", "argmax_lowest",
    "max_pairwise_dual_norm", "pairwise_differences", "predict",
    "LossKind", "LossName", "Regularizer", "erm_objective", "loss_grad",
    "loss_subgradient", "loss_value", "losses", "margins",
    "ErrorSample", "accuracy", "auc", "class_scores", "multiclass_auc",
    "one_vs_rest_errors", "ranking_errors", "threshold_accuracy",
    "NormKind", "dual_norm", "dual_norm_subgradient", "norm",
]
