"""Evolutionary AutoML over pipeline DAGs with lexicase-based validation
(lexidate) and stratified k-fold cross-validation as evaluation strategies."""

from lexidate.dataset import Dataset, load_csv, stratified_kfold, stratified_split
from lexidate.evolution import RunConfig, RunResult, Strategy, run
from lexidate.pipeline import PipelineGraph, random_pipeline
from lexidate.selection import ObjectiveMatrix, lexicase_select, selection_distribution

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ObjectiveMatrix",
    "PipelineGraph",
    "RunConfig",
    "RunResult",
    "Strategy",
    "lexicase_select",
    "load_csv",
    "random_pipeline",
    "run",
    "selection_distribution",
    "stratified_kfold",
    "stratified_split",
]
