"""Adversarial structure attacks on graph node classifiers.

Evasion, poisoning and symbiotic (sequential and joint) edge-flip attacks
built on projected randomized block coordinate descent, with a from-scratch
reverse-mode autodiff engine that differentiates through unrolled training.
"""

from .graph import (
    EdgeFlipSet,
    Graph,
    Splits,
    apply_flips,
    budget_from_fraction,
    jaccard_purify,
    load_dataset,
    make_splits,
)
from .models import ModelConfig, ModelParams, accuracy, forward, init_model
from .training import TrainConfig, train_victim, unrolled_train
from .attack import (
    AttackConfig,
    evasion_attack,
    joint_attack,
    poison_attack,
    sequential_attack,
)
from .harness import AttackReport, ExperimentConfig, run_experiment, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackReport",
    "EdgeFlipSet",
    "ExperimentConfig",
    "Graph",
    "ModelConfig",
    "ModelParams",
    "Splits",
    "TrainConfig",
    "accuracy",
    "apply_flips",
    "budget_from_fraction",
    "evasion_attack",
    "forward",
    "init_model",
    "jaccard_purify",
    "joint_attack",
    "load_dataset",
    "make_splits",
    "poison_attack",
    "run_experiment",
    "run_sweep",
    "sequential_attack",
    "train_victim",
    "unrolled_train",
]
