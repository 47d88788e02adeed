"""Glass-box classifiers: neural additive models and a logistic baseline."""

from .evaluate import (CVResult, FoldPlanMismatch, classification_metrics, cross_validate,
                       majority_vote, metrics_csv, speaker_votes)
from .logreg import LogRegModel, logreg_train
from .nam import (ARCHS, DimensionMismatch, DivergedLoss, NamConfig, NamEnsemble, NamModel,
                  NonBinaryLabels, ShapeFunction, export_shapes, load_ensemble, nam_train,
                  objective_and_gradient, save_ensemble)
from .tune import DEFAULT_SPACE, EmptySearchSpace, tune

__all__ = [
    "ARCHS", "CVResult", "DEFAULT_SPACE", "DimensionMismatch", "DivergedLoss", "EmptySearchSpace",
    "FoldPlanMismatch", "LogRegModel", "NamConfig", "NamEnsemble", "NamModel", "NonBinaryLabels",
    "ShapeFunction", "classification_metrics", "cross_validate", "export_shapes", "load_ensemble",
    "logreg_train", "majority_vote", "metrics_csv", "nam_train", "objective_and_gradient",
    "save_ensemble", "speaker_votes", "tune",
]
