"""Input checks shared by the estimators and the CLI."""
import numpy as np

from .errors import InputError, ShapeError, ValidationError
from .graph import Dataset, Graph


def check_dataset(dataset, task_kind=None):
    if not isinstance(dataset, Dataset):
        raise InputError(f"expected a Dataset, got {type(dataset).__name__}")
    dataset.validate()
    if task_kind is not None and dataset.task_kind != task_kind:
        raise ValidationError(f"estimator expects a {task_kind} dataset, got {dataset.task_kind}")
    return dataset


def check_features(graph, X):
    if not isinstance(graph, Graph):
        raise InputError(f"expected a Graph, got {type(graph).__name__}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != graph.num_nodes:
        raise ShapeError(f"features must be ({graph.num_nodes}, d), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain NaN or infinity")
    return X


def check_mask(dataset, mask):
    if isinstance(mask, str):
        mask = dataset.mask(mask)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (dataset.num_nodes,):
        raise ShapeError(f"mask must have length {dataset.num_nodes}")
    if not mask.any():
        raise InputError("mask selects no nodes")
    return mask
