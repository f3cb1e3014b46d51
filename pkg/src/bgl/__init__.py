"""Bipartite-graph-label (BGL) structured softmax for fine-grained classification.

Exact joint inference over fine classes and coarse label types, closed-form
gradients with a linear-time aggregation path, a hierarchical weight prior,
and a small SGD trainer for synthetic hierarchical data.
"""
from .errors import (
    BGLError,
    DivergedLoss,
    EmptyType,
    GraphError,
    InstanceTooLarge,
    InvalidSpec,
    LabelOutOfRange,
    MultipleParents,
    NonFiniteLoss,
    NonFiniteScore,
    OutOfRangeParent,
    ParseError,
    ShapeMismatch,
    SizeMismatch,
    TypeIndexOutOfRange,
)
from .graph import LabelGraph, CoarseGroup, validate, groups, load_graph, save_graph, read_graph, write_graph
from .loss import (
    DEFAULT_LAMBDA,
    LossConfig,
    Posterior,
    ScoreGradient,
    ScoreSet,
    backward_fast,
    backward_naive,
    forward,
    nll,
    prior_gradient,
    prior_penalty,
    softmax_backward,
    softmax_forward,
    softmax_nll,
)
from .model import MODES, FeatureExtractor, Model, init_model, load_model, read_model, save_model, write_model
from .synth import (
    BENCHMARK_SPEC,
    Dataset,
    SynthSpec,
    generate,
    load_dataset,
    read_dataset,
    save_dataset,
    train_test,
    write_dataset,
)
from .trainer import EvalResult, TrainConfig, TrainReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BGLError", "GraphError", "OutOfRangeParent", "EmptyType", "SizeMismatch", "MultipleParents",
    "TypeIndexOutOfRange", "ParseError", "ShapeMismatch", "NonFiniteScore", "LabelOutOfRange",
    "InstanceTooLarge", "NonFiniteLoss", "DivergedLoss", "InvalidSpec",
    "LabelGraph", "CoarseGroup", "validate", "groups", "load_graph", "save_graph", "read_graph", "write_graph",
    "DEFAULT_LAMBDA", "LossConfig", "Posterior", "ScoreGradient", "ScoreSet", "forward", "nll",
    "backward_naive", "backward_fast", "prior_penalty", "prior_gradient",
    "softmax_forward", "softmax_nll", "softmax_backward",
    "MODES", "FeatureExtractor", "Model", "init_model", "save_model", "load_model", "read_model", "write_model",
    "BENCHMARK_SPEC", "Dataset", "SynthSpec", "generate", "train_test",
    "load_dataset", "save_dataset", "read_dataset", "write_dataset",
    "EvalResult", "TrainConfig", "TrainReport", "evaluate", "train",
]
