"""Few-shot adaptation toolkit: gradient-aligned source reweighting,
baseline adaptation methods, a synthetic shift generator, and a
statistical evaluation harness."""

from .backbones import (
    BACKBONE_KINDS,
    BackboneArch,
    EmbeddingTable,
    Example,
    ModelState,
    build_embedding,
    featurize_pair,
    forward,
    per_example_gradient,
    per_example_loss,
)
from .data import (
    Dataset,
    FewShotSpec,
    ShiftSpec,
    balance_downsample,
    filter_labels,
    gen_synthetic_shift,
    load_tsv,
    rule_label,
    sample_few_shot,
    tokenize,
    write_tsv,
)
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DomainError,
    MetaweightError,
    NumericalError,
)
from .experiment import ExperimentConfig, ResultsTable, config_from_dict, emit_results, run_experiment
from .regulator import (
    RegulatorConfig,
    init_weights,
    mwr_step,
    regulate_weights,
    target_loss,
    virtual_update,
    weight_meta_gradient,
    weighted_source_loss,
    weighted_training_step,
)
from .stats import PredictionRecord, accuracy, permutation_test, predict
from .training import (
    METHODS,
    TrainReport,
    TrainSpec,
    run_training,
    sgd_epoch,
    train_backbone_only,
    train_data_merging,
    train_fine_tuning,
    train_mwr,
)
from .vectors import RngState, derive_seed, dot, sample_uniform, scaled_add

__all__ = [
    "BACKBONE_KINDS",
    "BackboneArch",
    "ConfigError",
    "DataError",
    "Dataset",
    "DimensionError",
    "DomainError",
    "EmbeddingTable",
    "Example",
    "ExperimentConfig",
    "FewShotSpec",
    "METHODS",
    "MetaweightError",
    "ModelState",
    "NumericalError",
    "PredictionRecord",
    "RegulatorConfig",
    "ResultsTable",
    "RngState",
    "ShiftSpec",
    "TrainReport",
    "TrainSpec",
    "accuracy",
    "balance_downsample",
    "build_embedding",
    "config_from_dict",
    "derive_seed",
    "dot",
    "emit_results",
    "featurize_pair",
    "filter_labels",
    "forward",
    "gen_synthetic_shift",
    "init_weights",
    "load_tsv",
    "mwr_step",
    "per_example_gradient",
    "per_example_loss",
    "permutation_test",
    "predict",
    "regulate_weights",
    "rule_label",
    "run_experiment",
    "run_training",
    "sample_few_shot",
    "sample_uniform",
    "scaled_add",
    "sgd_epoch",
    "target_loss",
    "tokenize",
    "train_backbone_only",
    "train_data_merging",
    "train_fine_tuning",
    "train_mwr",
    "virtual_update",
    "weight_meta_gradient",
    "weighted_source_loss",
    "weighted_training_step",
    "write_tsv",
]
