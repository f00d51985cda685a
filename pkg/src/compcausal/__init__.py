"""Causal embeddings for compositional zero-shot recognition on synthetic SCM data."""

__version__ = "0.1.0"

from .config import TrainConfig, config_from_dict, load_config  # noqa: E402
from .data import (  # noqa: E402
    FeatureDataset,
    PairVocabulary,
    ScmConfig,
    SplitSpec,
    generate_dataset,
    make_scm,
    sample_split,
)
from .hsic import conditional_hsic, hsic_linear, loss_indep  # noqa: E402
from .metrics import EvalReport, ausuc, evaluate_model, harmonic_mean  # noqa: E402
from .model import CausalModel, LossWeights, build_causal_model, load_model, score_pairs  # noqa: E402
from .training import early_stop, run_experiment, sweep, train  # noqa: E402

__all__ = [
    "CausalModel",
    "EvalReport",
    "FeatureDataset",
    "LossWeights",
    "PairVocabulary",
    "ScmConfig",
    "SplitSpec",
    "TrainConfig",
    "__version__",
    "ausuc",
    "build_causal_model",
    "conditional_hsic",
    "config_from_dict",
    "early_stop",
    "evaluate_model",
    "generate_dataset",
    "harmonic_mean",
    "hsic_linear",
    "load_config",
    "load_model",
    "loss_indep",
    "make_scm",
    "run_experiment",
    "sample_split",
    "score_pairs",
    "sweep",
    "train",
]
