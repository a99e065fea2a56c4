"""Coordinator-model distributed clustering with exact communication accounting."""
from .core import (OUTLIER, AlgorithmProfile, Clustering, Dataset, WeightedPointSet,
                   closeness_error, distance, load_dataset, lp_cost, power_mean_cost,
                   save_dataset)

__all__ = ["OUTLIER", "AlgorithmProfile", "Clustering", "Dataset", "WeightedPointSet",
           "closeness_error", "distance", "load_dataset", "lp_cost", "power_mean_cost",
           "save_dataset"]
