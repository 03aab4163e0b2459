"""Anomaly detection from multiple sets of noisy labels with a label-aware mixture-of-experts layer."""

from .data import Dataset, Split, SyntheticSpec, load_csv, make_synthetic, save_csv, split_70_25_5
from .metrics import average_precision, evaluate, roc_auc
from .model import AdmoeModel, LossMode, TrainConfig, expert_case_study, fit
from .noise import NoiseSpec, synthesize

__version__ = "0.1.0"

__all__ = [
    "AdmoeModel",
    "Dataset",
    "LossMode",
    "NoiseSpec",
    "Split",
    "SyntheticSpec",
    "TrainConfig",
    "average_precision",
    "evaluate",
    "expert_case_study",
    "fit",
    "load_csv",
    "make_synthetic",
    "roc_auc",
    "save_csv",
    "split_70_25_5",
    "synthesize",
]
