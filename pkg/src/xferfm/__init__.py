"""Transferred factorisation machines for CF-to-CTR knowledge transfer."""

from .data import (
    AD,
    CF,
    CTR,
    PUBLISHER,
    USER,
    Dataset,
    EncodingError,
    FeatureSpace,
    SchemaError,
    SparseInstance,
    build_feature_space,
    downsample_negatives,
    encode_dataset,
    encode_instance,
    read_log,
    sample_cf_negatives,
    split_by_time,
    write_log,
)
from .fm import FmModel, linear_score, load_model, predict_cf, predict_ctr, save_model, sigmoid
from .training import (
    BASE,
    DISJOINT,
    JOINT,
    ConfigError,
    DivergenceError,
    HyperParams,
    JointModel,
    TrainReport,
    grad_instance,
    grad_prior,
    init_params,
    instance_log_likelihood,
    joint_objective,
    log_prior,
    sgd_epoch,
    train,
)
from .baseline import LrModel, lr_predict, train_lr_cf, train_lr_ctr_transfer
from .metrics import MetricError, auc, rmse
from .sweep import EvalReport, SweepResult, alpha_sweep, feature_appending_experiment
from .synth import ExtraAttr, GenConfig, TruthModel, generate, generate_records

__version__ = "0.1.0"
