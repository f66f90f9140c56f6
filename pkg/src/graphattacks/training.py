"""Victim training (standard, detached) and differentiable unrolled training
for meta-gradient poisoning.

The victim is trained with Adam and optional early stopping; the unrolled
surrogate uses plain SGD with momentum so the whole loop fits on a fixed-
length tape (early stopping is data-dependent control flow, and unrolling
Adam costs far more memory for little attack strength).  With the same
optimizer settings, dropout off and no early stopping, both paths perform
bit-identical updates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .graph import Graph, Splits, INDUCTIVE
from .models import ModelConfig, ModelParams, forward, init_model


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    optimizer: str = "adam"  # adam | sgd_momentum
    lr: float = 0.01
    weight_decay: float = 5e-4
    momentum: float = 0.9
    patience: int = 200  # patience >= epochs disables early stopping
    dropout: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")
        if self.patience > self.epochs:
            object.__setattr__(self, "patience", self.epochs)
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


UNROLLED_DEFAULTS = TrainConfig(
    epochs=100, optimizer="sgd_momentum", lr=0.1, weight_decay=5e-4,
    patience=100, dropout=False,
)


def strip_test_nodes(g: Graph, splits: Splits) -> tuple[Graph, Splits, np.ndarray]:
    """Inductive-mode training graph: test nodes and incident edges removed.

    Returns the subgraph, remapped splits, and the old->new node mapping.
    """
    keep = np.setdiff1d(np.arange(g.num_nodes), splits.test)
    sub, mapping = g.subgraph(keep)
    remapped = Splits(
        labeled_train=np.sort(mapping[splits.labeled_train]),
        unlabeled_train=np.sort(mapping[splits.unlabeled_train]),
        validation=np.sort(mapping[splits.validation]),
        test=np.empty(0, dtype=np.int64),
        mode=splits.mode,
    )
    return sub, remapped, mapping


def _masked_ce(logits: ad.Tensor, labels: np.ndarray, nodes: np.ndarray) -> ad.Tensor:
    return ad.masked_cross_entropy(logits, labels, nodes)


def train_victim(
    arch: str,
    g: Graph,
    splits: Splits,
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    model_config: ModelConfig = ModelConfig(),
    labels: Optional[np.ndarray] = None,
) -> ModelParams:
    """Full-batch training on the labeled nodes; deterministic given seed.

    In inductive mode the test nodes and their incident edges are removed
    before any training-time computation.
    """
    if splits.mode == INDUCTIVE and len(splits.test):
        g, splits, _ = strip_test_nodes(g, splits)
    labels = g.labels if labels is None else labels
    if len(splits.labeled_train) == 0:
        raise ValueError("labeled_train is empty")

    params = init_model(arch, g.feature_dim, g.num_classes, seed, model_config)
    names = sorted(params.weights)
    state_m = {k: np.zeros_like(params.weights[k]) for k in names}
    state_v = {k: np.zeros_like(params.weights[k]) for k in names}
    ones = np.ones(g.num_edges)
    wd = config.weight_decay
    use_dropout = config.dropout and model_config.dropout > 0

    best_val = np.inf
    best_weights = None
    best_epoch = -1
    early_stop = config.patience < config.epochs

    for epoch in range(config.epochs):
        tensors = {k: ad.Tensor(params.weights[k], requires_grad=True) for k in names}
        logits = forward(
            params, g.edges, ones, g.features,
            mode="train" if use_dropout else "eval",
            seed=seed * 100003 + epoch,
            weight_tensors=tensors,
        )
        loss = _masked_ce(logits, labels, splits.labeled_train)
        if not np.isfinite(loss.item()):
            raise RuntimeError(
                f"training diverged at epoch {epoch}: loss={loss.item()}"
            )
        grads = ad.backward(loss, wrt=[tensors[k] for k in names])
        t = epoch + 1
        for k, gt in zip(names, grads):
            grad = gt.data + wd * params.weights[k]
            if config.optimizer == "adam":
                state_m[k] = 0.9 * state_m[k] + 0.1 * grad
                state_v[k] = 0.999 * state_v[k] + 0.001 * grad * grad
                m_hat = state_m[k] / (1 - 0.9**t)
                v_hat = state_v[k] / (1 - 0.999**t)
                params.weights[k] = params.weights[k] - config.lr * m_hat / (
                    np.sqrt(v_hat) + 1e-8
                )
            else:
                state_m[k] = config.momentum * state_m[k] + grad
                params.weights[k] = params.weights[k] - config.lr * state_m[k]

        if early_stop and len(splits.validation):
            with ad.no_grad():
                val_logits = forward(params, g.edges, ones, g.features, mode="eval")
                val_loss = _masked_ce(val_logits, labels, splits.validation).item()
            if val_loss < best_val:
                best_val = val_loss
                best_weights = {k: v.copy() for k, v in params.weights.items()}
                best_epoch = epoch
            elif epoch - best_epoch >= config.patience:
                break

    if early_stop and best_weights is not None:
        params.weights = best_weights
    return params


@dataclass
class UnrolledResult:
    """Trained surrogate whose parameters remain attached to the tape."""

    params: ModelParams  # detached numpy copy of the final weights
    tensors: dict[str, ad.Tensor]  # tape tensors for the final weights


def unrolled_train(
    arch: str,
    pairs: np.ndarray,
    pair_weights: ad.Tensor,
    features: np.ndarray,
    splits: Splits,
    labels: np.ndarray,
    num_classes: int,
    config: TrainConfig = UNROLLED_DEFAULTS,
    seed: int = 0,
    model_config: ModelConfig = ModelConfig(),
    max_unroll_steps: int = 500,
) -> UnrolledResult:
    """SGD-with-momentum training recorded entirely on the tape.

    The returned parameter tensors support a backward pass that reaches
    `pair_weights` (the meta-gradient).  Dropout stays off so the tape is a
    pure function of its inputs.  Memory grows linearly with the number of
    steps; `max_unroll_steps` caps it.
    """
    if config.epochs > max_unroll_steps:
        raise ValueError(
            f"unroll length {config.epochs} exceeds cap {max_unroll_steps}"
        )
    if config.optimizer != "sgd_momentum":
        raise ValueError("unrolled training supports sgd_momentum only")
    init = init_model(arch, features.shape[1], num_classes, seed, model_config)
    names = sorted(init.weights)
    theta = {k: ad.Tensor(init.weights[k], requires_grad=True) for k in names}
    velocity: dict[str, ad.Tensor] = {}
    wd = config.weight_decay

    for _ in range(config.epochs):
        logits = forward(
            init, pairs, pair_weights, features, mode="eval", weight_tensors=theta
        )
        loss = _masked_ce(logits, labels, splits.labeled_train)
        grads = ad.backward(loss, wrt=[theta[k] for k in names], create_graph=True)
        for k, gt in zip(names, grads):
            grad = ad.add(gt, ad.scale(theta[k], wd))
            if k in velocity:
                velocity[k] = ad.add(ad.scale(velocity[k], config.momentum), grad)
            else:
                velocity[k] = grad
            theta[k] = ad.sub(theta[k], ad.scale(velocity[k], config.lr))

    final = ModelParams(
        init.arch, init.feature_dim, init.num_classes, init.config,
        {k: theta[k].data.copy() for k in names},
    )
    return UnrolledResult(final, theta)
