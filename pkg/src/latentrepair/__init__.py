"""Latent-augmented fairness repair for categorical tabular data."""
from .dataset import CategoricalDomain, Dataset, RoleSpec, load_dataset, load_roles, write_csv
from .errors import (DataError, InsufficientDataError, LatentRepairError, PartitionError,
                     TauBoundError, UndefinedMetricError)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CategoricalDomain", "DataError", "Dataset", "InsufficientDataError",
    "LatentRepairError", "PartitionError", "RoleSpec", "TauBoundError", "UndefinedMetricError",
    "load_dataset", "load_roles", "write_csv",
]
