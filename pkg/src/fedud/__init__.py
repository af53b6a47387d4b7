"""Two-party vertical federated learning simulator for CTR prediction.

A host party holds labels and part of the features; a guest party holds the
rest. Split neural networks train over an explicit message boundary, a
host-side transfer network learns to stand in for the guest representation,
and rows the guest has never seen become usable training and inference data.
"""

from .config import TrainConfig, canonical_digest, load_config
from .data import (
    FeatureSchema,
    batch_iter,
    build_synthetic_split,
    gen_synthetic,
    hash_feature,
    intersect_keys,
    load_csv,
    split_by_alignment,
)
from .federation import GuestParty, HostParty, Link, PartyMessage, Transcript, audit_transcript
from .metrics import MetricsReport, auc, logloss, paired_ttest, slice_report
from .trainer import (
    Checkpoint,
    PredictionSet,
    load_checkpoint,
    predict,
    run_fedud,
    save_checkpoint,
    train_fedsplitnn,
    train_local_dnn,
    train_step1,
    train_step2,
)

__version__ = "0.1.0"

__all__ = [
    "TrainConfig", "canonical_digest", "load_config",
    "FeatureSchema", "batch_iter", "build_synthetic_split", "gen_synthetic",
    "hash_feature", "intersect_keys", "load_csv", "split_by_alignment",
    "GuestParty", "HostParty", "Link", "PartyMessage", "Transcript",
    "audit_transcript",
    "MetricsReport", "auc", "logloss", "paired_ttest", "slice_report",
    "Checkpoint", "PredictionSet", "load_checkpoint", "predict", "run_fedud",
    "save_checkpoint", "train_fedsplitnn", "train_local_dnn", "train_step1",
    "train_step2",
    "__version__",
]
