"""Regularised gradient-boosted regression trees."""
from .model import (
    SCHEMA,
    BoostModel,
    GbtParams,
    TrainingTrace,
    Tree,
    feature_importance,
    load_model,
    predict,
    save_model,
)
from .boosting import leaf_weight, split_gain, train, train_arrays

__all__ = [
    "SCHEMA",
    "BoostModel",
    "GbtParams",
    "TrainingTrace",
    "Tree",
    "feature_importance",
    "leaf_weight",
    "load_model",
    "predict",
    "save_model",
    "split_gain",
    "train",
    "train_arrays",
]
