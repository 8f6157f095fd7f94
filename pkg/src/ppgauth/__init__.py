"""PPG-based continuous authentication: signal ingestion, a from-scratch
BiLSTM-attention classifier, biometric metrics and a streaming gateway."""

__version__ = "0.1.0"

from ppgauth.dataset import Dataset, SplitSpec, build_dataset, class_weights, stratified_split
from ppgauth.metrics import ScoreSet, eer, metrics_report, roc_auc
from ppgauth.nn import ModelConfig, ModelParams, forward, init_params, loss_and_grad
from ppgauth.signal_io import (
    BandpassFilter,
    SignalRecord,
    SyntheticSubjectProfile,
    generate_synthetic,
    load_csv,
    resample,
)
from ppgauth.streaming import Session, StreamConfig
from ppgauth.study import power_estimate
from ppgauth.training import TrainConfig, evaluate, train

__all__ = [
    "BandpassFilter", "Dataset", "ModelConfig", "ModelParams", "ScoreSet", "Session",
    "SignalRecord", "SplitSpec", "StreamConfig", "SyntheticSubjectProfile", "TrainConfig",
    "build_dataset", "class_weights", "eer", "evaluate", "forward", "generate_synthetic",
    "init_params", "load_csv", "loss_and_grad", "metrics_report", "power_estimate",
    "resample", "roc_auc", "stratified_split", "train",
]
