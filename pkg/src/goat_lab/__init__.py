"""Graph Ordering Attention layers, baselines, synthetic tasks and PID tools."""

__version__ = "0.1.0"

from .errors import GoatLabError, InputError, NumericError, SchemaError, ShapeError, ValidationError
from .graph import Dataset, Graph, erdos_renyi, k_hop_distances, load_dataset, max_degree, neighborhood, save_dataset
from .rng import Rng, derive_seed

__all__ = [
    "Dataset", "Graph", "GoatLabError", "InputError", "NumericError", "Rng", "SchemaError",
    "ShapeError", "ValidationError", "derive_seed", "erdos_renyi", "k_hop_distances",
    "load_dataset", "max_degree", "neighborhood", "save_dataset",
]
