"""Projected randomized block coordinate descent over relaxed edge flips,
and the four attacks built on it: evasion, poisoning via unrolled training,
and the sequential and joint symbiotic attacks.

The relaxed perturbation vector holds one flip probability per candidate
node pair, restricted to a random block.  Each iteration ascends the attack
loss, projects back onto the budget (sum of probabilities <= budget, values
in [0, 1]), evicts dead entries and resamples fresh ones.  The final flip
set is the best of several Bernoulli realizations.

All attacker gradients come from attacker-trained surrogates; the victim is
only ever queried as a black box by the experiment harness.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .graph import (
    EdgeFlipSet,
    Graph,
    INDUCTIVE,
    Splits,
    apply_flips,
    empty_flips,
    num_pairs,
    tri_decode,
    tri_encode,
)
from .models import ModelConfig, ModelParams, forward
from .training import TrainConfig, UNROLLED_DEFAULTS, train_victim, unrolled_train


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 125
    block_size: int = 250_000
    base_lr: float = 0.1
    loss: Optional[str] = None  # None: tanh_margin for evasion, CE for poisoning
    final_samples: int = 100
    keep_threshold: float = 1e-7
    alpha: float = 0.5  # symbiotic budget split (poisoning share)
    inner_iterations: int = 0  # joint attack inner evasion iterations
    grad_clip: Optional[float] = 1.0  # meta-gradient L2 clip (poisoning only)

    def __post_init__(self):
        if self.block_size < 1 or self.iterations < 0:
            raise ValueError("block_size >= 1 and iterations >= 0 required")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.inner_iterations < 0:
            raise ValueError("inner_iterations must be >= 0")


@dataclass
class PerturbationState:
    """Relaxed flip probabilities restricted to a block of candidate pairs."""

    indices: np.ndarray  # (b,) distinct linear upper-triangular indices
    values: np.ndarray  # (b,) in [0, 1]
    budget: int
    num_nodes: int
    base_graph: str

    def check(self):
        assert np.all((self.values >= 0) & (self.values <= 1)), "values outside [0,1]"
        assert self.values.sum() <= self.budget + 1e-9, "projected mass over budget"
        assert len(np.unique(self.indices)) == len(self.indices), "duplicate indices"


def derive_seed(seed: int, tag: str) -> int:
    h = hashlib.blake2s(f"{seed}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") % (2**31 - 1)


# ---------------------------------------------------------------------------
# block management
# ---------------------------------------------------------------------------


def sample_block(
    n: int, b: int, exclude: Optional[np.ndarray] = None, rng=None
) -> np.ndarray:
    """`b` distinct linear pair indices, uniform over the non-excluded ones."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    total = num_pairs(n)
    exclude = (
        np.unique(np.asarray(exclude, dtype=np.int64))
        if exclude is not None and len(np.asarray(exclude)) > 0
        else np.empty(0, dtype=np.int64)
    )
    if b + len(exclude) > total:
        raise ValueError(f"block of {b} infeasible: {total - len(exclude)} pairs free")
    if b == 0:
        return np.empty(0, dtype=np.int64)
    if total <= 4_000_000:
        allowed = np.setdiff1d(np.arange(total, dtype=np.int64), exclude)
        return np.sort(rng.choice(allowed, size=b, replace=False))
    # rejection sampling for very large pair spaces
    collected = np.empty(0, dtype=np.int64)
    while len(collected) < b:
        draw = rng.integers(0, total, size=2 * b, dtype=np.int64)
        draw = draw[~np.isin(draw, exclude)]
        collected = np.unique(np.concatenate([collected, draw]))
    if len(collected) > b:
        collected = rng.choice(collected, size=b, replace=False)
    return np.sort(collected)


def project(values: np.ndarray, budget: int, tol: float = 1e-10) -> np.ndarray:
    """Clamp to [0, 1] and, if over budget, shift by the bisection multiplier
    so the clamped sum equals the budget within `tol`."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    values = np.asarray(values, dtype=np.float64)
    clamped = np.clip(values, 0.0, 1.0)
    if clamped.sum() <= budget:
        return clamped
    lo, hi = 0.0, float(values.max())
    mu = hi
    for _ in range(100):
        mu = 0.5 * (lo + hi)
        s = np.clip(values - mu, 0.0, 1.0).sum()
        if abs(s - budget) <= tol:
            break
        if s > budget:
            lo = mu
        else:
            hi = mu
    return np.clip(values - mu, 0.0, 1.0)


def step_size_schedule(base_lr: float, budget: int, t: int) -> float:
    """Budget-scaled, decaying ascent step for iteration t (1-based)."""
    if t < 1:
        raise ValueError("iteration index is 1-based")
    return base_lr * max(budget, 1) / np.sqrt(t)


def resample_step(
    state: PerturbationState,
    gradient: np.ndarray,
    step_size: float,
    rng,
    keep_threshold: float = 1e-7,
) -> PerturbationState:
    """Ascent update, projection, then survival-of-the-fittest resampling:
    entries whose projected value fell below the threshold are evicted and
    replaced by fresh uniformly drawn pairs with value 0."""
    values = project(state.values + step_size * np.asarray(gradient), state.budget)
    keep = values >= keep_threshold
    survivors = state.indices[keep]
    surv_values = values[keep]
    num_fresh = len(state.indices) - len(survivors)
    fresh = sample_block(state.num_nodes, num_fresh, exclude=survivors, rng=rng)
    indices = np.concatenate([survivors, fresh])
    merged = np.concatenate([surv_values, np.zeros(num_fresh)])
    order = np.argsort(indices)
    out = replace(state, indices=indices[order], values=merged[order])
    out.check()
    return out


# ---------------------------------------------------------------------------
# relaxed adjacency
# ---------------------------------------------------------------------------


@dataclass
class RelaxedAdjacency:
    """Union of base pairs and block pairs with differentiable weights."""

    pairs: np.ndarray  # (M, 2)
    weights: ad.Tensor  # (M,) relaxed weight per pair
    block_values: ad.Tensor  # (b,) leaf tensor the attack differentiates
    block_positions: np.ndarray  # position of each block entry within pairs


def _overlay_positions(
    pairs_lin: np.ndarray, overlay: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Locate overlay pair indices within an (unsorted) base pair array.

    Returns (positions, new_lin): positions[k] is the slot of overlay[k] in
    the base array extended by the new pairs `new_lin` (appended in order).
    """
    order = np.argsort(pairs_lin)
    sorted_lin = pairs_lin[order]
    loc = np.searchsorted(sorted_lin, overlay)
    loc_c = np.clip(loc, 0, max(len(sorted_lin) - 1, 0))
    exists = (
        (sorted_lin[loc_c] == overlay) & (loc < len(sorted_lin))
        if len(sorted_lin)
        else np.zeros(len(overlay), dtype=bool)
    )
    positions = np.empty(len(overlay), dtype=np.int64)
    positions[exists] = order[loc_c[exists]]
    new_lin = overlay[~exists]
    positions[~exists] = len(pairs_lin) + np.arange(len(new_lin))
    return positions, new_lin


def _relax(
    pairs: np.ndarray,
    base_values: np.ndarray,
    n: int,
    state: PerturbationState,
    requires_grad: bool = True,
) -> RelaxedAdjacency:
    """Overlay flip mass on a (possibly already relaxed) base adjacency:
    weight = base + (1 - 2 * base) * p."""
    base_lin = (
        tri_encode(pairs[:, 0], pairs[:, 1], n) if len(pairs) else np.empty(0, np.int64)
    )
    positions, new_lin = _overlay_positions(base_lin, state.indices)
    ii, jj = tri_decode(new_lin, n) if len(new_lin) else (np.empty(0, np.int64),) * 2
    all_pairs = np.concatenate(
        [pairs.reshape(-1, 2), np.stack([ii, jj], axis=1).reshape(-1, 2)]
    )
    base_full = np.concatenate([base_values, np.zeros(len(new_lin))])

    p_block = ad.Tensor(state.values, requires_grad=requires_grad)
    p_full = ad.scatter_add_rows(p_block, positions, len(all_pairs))
    base_t = ad.Tensor(base_full)
    coeff_t = ad.Tensor(1.0 - 2.0 * base_full)
    weights = ad.add(base_t, ad.mul(coeff_t, p_full))
    return RelaxedAdjacency(all_pairs, weights, p_block, positions)


def relaxed_weights(g: Graph, state: PerturbationState, requires_grad: bool = True) -> RelaxedAdjacency:
    """Relaxation of a binary graph: existing edges get weight 1 - p, block
    non-edges weight p, untouched edges weight 1."""
    return _relax(
        g.edges, np.ones(g.num_edges), g.num_nodes, state, requires_grad
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

LOSS_KINDS = ("cross_entropy", "tanh_margin")


def attack_loss(
    logits: ad.Tensor, labels: np.ndarray, nodes: np.ndarray, kind: str
) -> ad.Tensor:
    """Scalar objective to maximize over the target nodes."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("attack_loss: empty node set")
    if kind == "cross_entropy":
        return ad.masked_cross_entropy(logits, labels, nodes)
    if kind == "tanh_margin":
        sel = ad.gather_rows(logits, nodes)
        true = np.asarray(labels, dtype=np.int64)[nodes]
        masked = sel.data.copy()
        masked[np.arange(len(nodes)), true] = -np.inf
        best_wrong = np.argmax(masked, axis=1)
        margin = ad.sub(ad.take_per_row(sel, best_wrong), ad.take_per_row(sel, true))
        return ad.mean(ad.tanh(margin))
    raise ValueError(f"unknown loss kind {kind!r}")


# ---------------------------------------------------------------------------
# final sampling
# ---------------------------------------------------------------------------


def _flips_from_mask(state: PerturbationState, mask: np.ndarray, base: str) -> EdgeFlipSet:
    idx = state.indices[mask]
    if len(idx) == 0:
        return empty_flips(base)
    i, j = tri_decode(idx, state.num_nodes)
    return EdgeFlipSet(np.stack([i, j], axis=1), base)


def sample_final(
    state: PerturbationState,
    g: Graph,
    budget: int,
    num_samples: int,
    loss_eval: Callable[[EdgeFlipSet], float],
    rng,
) -> EdgeFlipSet:
    """Draw Bernoulli realizations of the block values, keep those within
    budget, and return the one with the highest evaluated loss.  Falls back
    to the top-`budget` entries by value if every draw exceeds the budget."""
    if num_samples <= 0:
        raise ValueError("num_samples must be positive")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if budget == 0 or len(state.indices) == 0:
        return empty_flips(g.name)
    probs = np.clip(state.values, 0.0, 1.0)
    best_loss = -np.inf
    best: Optional[EdgeFlipSet] = None
    seen: dict[bytes, float] = {}
    for _ in range(num_samples):
        mask = rng.random(len(probs)) < probs
        if mask.sum() > budget:
            continue
        key = mask.tobytes()
        if key in seen:
            loss = seen[key]
        else:
            flips = _flips_from_mask(state, mask, g.name)
            loss = loss_eval(flips)
            seen[key] = loss
        if loss > best_loss:
            best_loss = loss
            best = _flips_from_mask(state, mask, g.name)
    if best is None:
        top = np.argsort(-state.values, kind="stable")[:budget]
        mask = np.zeros(len(state.values), dtype=bool)
        mask[top[state.values[top] > 0]] = True
        best = _flips_from_mask(state, mask, g.name)
    return best


# ---------------------------------------------------------------------------
# evasion
# ---------------------------------------------------------------------------


def _effective_block(cfg: AttackConfig, n: int) -> int:
    return min(cfg.block_size, num_pairs(n))


def evasion_attack(
    params: ModelParams,
    g: Graph,
    splits: Splits,
    budget: int,
    cfg: AttackConfig = AttackConfig(),
    seed: int = 0,
    target_nodes: Optional[np.ndarray] = None,
    labels: Optional[np.ndarray] = None,
) -> EdgeFlipSet:
    """PR-BCD against a fixed trained model."""
    if budget == 0:
        return empty_flips(g.name)
    target = np.asarray(
        splits.test if target_nodes is None else target_nodes, dtype=np.int64
    )
    labels = g.labels if labels is None else labels
    kind = cfg.loss or "tanh_margin"
    rng = np.random.default_rng(seed)
    b = _effective_block(cfg, g.num_nodes)
    state = PerturbationState(
        sample_block(g.num_nodes, b, rng=rng), np.zeros(b), budget, g.num_nodes, g.name
    )

    for t in range(1, cfg.iterations + 1):
        rel = relaxed_weights(g, state)
        logits = forward(params, rel.pairs, rel.weights, g.features)
        loss = attack_loss(logits, labels, target, kind)
        (gp,) = ad.backward(loss, wrt=[rel.block_values])
        step = step_size_schedule(cfg.base_lr, budget, t)
        state = resample_step(state, gp.data, step, rng, cfg.keep_threshold)

    def loss_eval(flips: EdgeFlipSet) -> float:
        g2 = apply_flips(g, flips)
        with ad.no_grad():
            logits = forward(params, g2.edges, np.ones(g2.num_edges), g2.features)
            return attack_loss(logits, labels, target, kind).item()

    return sample_final(state, g, budget, cfg.final_samples, loss_eval, rng)


# ---------------------------------------------------------------------------
# poisoning (meta-gradients through unrolled training)
# ---------------------------------------------------------------------------


def _surrogate_train_config(train_cfg: TrainConfig) -> TrainConfig:
    """Detached retraining config matching the unrolled procedure."""
    return TrainConfig(
        epochs=train_cfg.epochs,
        optimizer=train_cfg.optimizer,
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
        momentum=train_cfg.momentum,
        patience=train_cfg.epochs,  # no early stopping
        dropout=False,
    )


def _poison_loop(
    arch: str,
    g: Graph,
    splits: Splits,
    budget: int,
    cfg: AttackConfig,
    train_cfg: TrainConfig,
    seed: int,
    target: np.ndarray,
    labels: np.ndarray,
    model_cfg: ModelConfig,
    inner_budget: int = 0,
) -> PerturbationState:
    """PR-BCD over the poisoning block; each iteration trains a surrogate by
    unrolling and backpropagates the post-training attack loss to the block.

    With `cfg.inner_iterations > 0` and a positive `inner_budget`, an inner
    evasion attack runs against the freshly trained surrogate and the
    poisoning loss is evaluated on the composed (poisoned + evaded) weights;
    the inner values are constants for the outer gradient.
    """
    kind = cfg.loss or "cross_entropy"
    rng = np.random.default_rng(seed)
    b = _effective_block(cfg, g.num_nodes)
    state = PerturbationState(
        sample_block(g.num_nodes, b, rng=rng), np.zeros(b), budget, g.num_nodes, g.name
    )
    run_inner = cfg.inner_iterations > 0 and inner_budget > 0

    for t in range(1, cfg.iterations + 1):
        rel = relaxed_weights(g, state)
        trained = unrolled_train(
            arch, rel.pairs, rel.weights, g.features, splits, labels,
            g.num_classes, train_cfg, seed=derive_seed(seed, "unroll"),
            model_config=model_cfg,
        )
        if run_inner:
            inner_state = _inner_evasion(
                trained.params, rel.pairs, rel.weights.data, g, inner_budget,
                cfg, derive_seed(seed, f"inner{t}"), target, labels,
            )
            # compose w = w_pois + (1 - 2 w_pois) * q with q held constant:
            # the inner optimization is not differentiated through
            pairs_lin = tri_encode(rel.pairs[:, 0], rel.pairs[:, 1], g.num_nodes)
            positions, new_lin = _overlay_positions(pairs_lin, inner_state.indices)
            ii, jj = (
                tri_decode(new_lin, g.num_nodes)
                if len(new_lin)
                else (np.empty(0, np.int64), np.empty(0, np.int64))
            )
            all_pairs = np.concatenate(
                [rel.pairs, np.stack([ii, jj], axis=1).reshape(-1, 2)]
            )
            w_pois_ext = ad.concat(
                [rel.weights, ad.Tensor(np.zeros(len(new_lin)))], axis=0
            )
            q_full = np.zeros(len(all_pairs))
            q_full[positions] = inner_state.values
            q_t = ad.Tensor(q_full)
            weights = ad.add(
                ad.mul(w_pois_ext, ad.Tensor(1.0 - 2.0 * q_full)), q_t
            )
            logits = forward(
                trained.params, all_pairs, weights, g.features,
                weight_tensors=trained.tensors,
            )
        else:
            logits = forward(
                trained.params, rel.pairs, rel.weights, g.features,
                weight_tensors=trained.tensors,
            )
        loss = attack_loss(logits, labels, target, kind)
        (gp,) = ad.backward(loss, wrt=[rel.block_values])
        grad = gp.data
        if cfg.grad_clip is not None:
            norm = np.linalg.norm(grad)
            if norm > cfg.grad_clip:
                grad = grad * (cfg.grad_clip / norm)
        step = step_size_schedule(cfg.base_lr, budget, t)
        state = resample_step(state, grad, step, rng, cfg.keep_threshold)
    return state


def _inner_evasion(
    params: ModelParams,
    base_pairs: np.ndarray,
    base_values: np.ndarray,
    g: Graph,
    budget: int,
    cfg: AttackConfig,
    seed: int,
    target: np.ndarray,
    labels: np.ndarray,
) -> PerturbationState:
    """Short evasion attack on the relaxed poisoned adjacency (fixed model)."""
    rng = np.random.default_rng(seed)
    b = _effective_block(cfg, g.num_nodes)
    state = PerturbationState(
        sample_block(g.num_nodes, b, rng=rng), np.zeros(b), budget, g.num_nodes, g.name
    )
    kind = "tanh_margin"
    for t in range(1, cfg.inner_iterations + 1):
        rel = _relax(base_pairs, base_values, g.num_nodes, state)
        logits = forward(params, rel.pairs, rel.weights, g.features)
        loss = attack_loss(logits, labels, target, kind)
        (gp,) = ad.backward(loss, wrt=[rel.block_values])
        step = step_size_schedule(cfg.base_lr, budget, t)
        state = resample_step(state, gp.data, step, rng, cfg.keep_threshold)
    return state


def _poison_view(
    g: Graph,
    splits: Splits,
    target_nodes: Optional[np.ndarray],
    labels: Optional[np.ndarray],
):
    """View of the graph a poisoning attacker optimizes over.

    Inductive mode: test nodes are absent at training time, so poisoning runs
    on the stripped subgraph and targets the unlabeled and validation nodes
    as a stand-in for the unseen test set.  Returns the view graph, view
    splits, target nodes, labels and a function mapping flip sets computed on
    the view back to the full graph.
    """
    if splits.mode == INDUCTIVE and len(splits.test):
        keep = np.setdiff1d(np.arange(g.num_nodes), splits.test)
        sub, mapping = g.subgraph(keep)
        sub_splits = Splits(
            labeled_train=np.sort(mapping[splits.labeled_train]),
            unlabeled_train=np.sort(mapping[splits.unlabeled_train]),
            validation=np.sort(mapping[splits.validation]),
            test=np.empty(0, dtype=np.int64),
            mode=splits.mode,
        )
        if target_nodes is None:
            target = np.sort(
                np.concatenate([sub_splits.unlabeled_train, sub_splits.validation])
            )
        else:
            target = np.sort(mapping[np.asarray(target_nodes, dtype=np.int64)])
            if np.any(target < 0):
                raise ValueError("poisoning target includes a test node")
        lab = (g.labels if labels is None else np.asarray(labels))[keep]

        def to_full(flips: EdgeFlipSet) -> EdgeFlipSet:
            if len(flips) == 0:
                return empty_flips(g.name)
            # keep is ascending so the monotone relabeling preserves i < j
            return EdgeFlipSet(keep[flips.flips], g.name)

        return sub, sub_splits, target, lab, to_full

    target = np.asarray(
        splits.test if target_nodes is None else target_nodes, dtype=np.int64
    )
    lab = g.labels if labels is None else np.asarray(labels)
    return g, splits, target, lab, lambda flips: flips


def _poison_loss_eval(
    arch: str,
    g: Graph,
    splits: Splits,
    train_cfg: TrainConfig,
    seed: int,
    target: np.ndarray,
    labels: np.ndarray,
    kind: str,
    model_cfg: ModelConfig,
) -> Callable[[EdgeFlipSet], float]:
    """Candidate scorer: retrain a surrogate (fixed seed) and evaluate."""
    detached = _surrogate_train_config(train_cfg)

    def loss_eval(flips: EdgeFlipSet) -> float:
        g2 = apply_flips(g, flips)
        params = train_victim(
            arch, g2, splits, detached, seed=seed, model_config=model_cfg,
            labels=labels,
        )
        with ad.no_grad():
            logits = forward(params, g2.edges, np.ones(g2.num_edges), g2.features)
            return attack_loss(logits, labels, target, kind).item()

    return loss_eval


def poison_attack(
    arch: str,
    g: Graph,
    splits: Splits,
    budget: int,
    cfg: AttackConfig = AttackConfig(),
    train_cfg: TrainConfig = UNROLLED_DEFAULTS,
    seed: int = 0,
    target_nodes: Optional[np.ndarray] = None,
    labels: Optional[np.ndarray] = None,
    model_cfg: ModelConfig = ModelConfig(),
) -> EdgeFlipSet:
    """Meta-gradient PR-BCD poisoning: perturb before training to degrade the
    model obtained afterwards."""
    if budget == 0:
        return empty_flips(g.name)
    gv, sv, target, lab, to_full = _poison_view(g, splits, target_nodes, labels)
    kind = cfg.loss or "cross_entropy"
    state = _poison_loop(
        arch, gv, sv, budget, replace(cfg, inner_iterations=0), train_cfg,
        seed, target, lab, model_cfg,
    )
    loss_eval = _poison_loss_eval(
        arch, gv, sv, train_cfg, derive_seed(seed, "final-train"),
        target, lab, kind, model_cfg,
    )
    rng = np.random.default_rng(derive_seed(seed, "final-sample"))
    return to_full(sample_final(state, gv, budget, cfg.final_samples, loss_eval, rng))


# ---------------------------------------------------------------------------
# symbiotic attacks
# ---------------------------------------------------------------------------


def _symbiotic_finish(
    arch: str,
    g: Graph,
    splits: Splits,
    poison_flips: EdgeFlipSet,
    evasion_budget: int,
    cfg: AttackConfig,
    train_cfg: TrainConfig,
    seed: int,
    labels: Optional[np.ndarray],
    model_cfg: ModelConfig,
) -> tuple[EdgeFlipSet, EdgeFlipSet]:
    """Apply poison flips, retrain the surrogate, then evade with the rest of
    the budget; evasion flips are relative to the poisoned graph."""
    g_pois = apply_flips(g, poison_flips)
    surrogate = train_victim(
        arch, g_pois, splits, _surrogate_train_config(train_cfg),
        seed=derive_seed(seed, "surrogate"), model_config=model_cfg,
        labels=labels,
    )
    ev_flips = evasion_attack(
        surrogate, g_pois, splits, evasion_budget,
        replace(cfg, loss=None), seed=derive_seed(seed, "evasion"),
        labels=labels,
    )
    return poison_flips, ev_flips


def sequential_attack(
    arch: str,
    g: Graph,
    splits: Splits,
    budget: int,
    alpha: float = 0.5,
    cfg: AttackConfig = AttackConfig(),
    train_cfg: TrainConfig = UNROLLED_DEFAULTS,
    seed: int = 0,
    labels: Optional[np.ndarray] = None,
    model_cfg: ModelConfig = ModelConfig(),
) -> tuple[EdgeFlipSet, EdgeFlipSet]:
    """Split the budget, poison first, then evade the poisoned model."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    d_pois = int(np.floor(alpha * budget))
    d_ev = budget - d_pois
    poison_flips = poison_attack(
        arch, g, splits, d_pois, replace(cfg, inner_iterations=0), train_cfg,
        seed=derive_seed(seed, "poison"), labels=labels, model_cfg=model_cfg,
    )
    return _symbiotic_finish(
        arch, g, splits, poison_flips, d_ev, cfg, train_cfg, seed, labels, model_cfg
    )


def joint_attack(
    arch: str,
    g: Graph,
    splits: Splits,
    budget: int,
    alpha: float = 0.5,
    inner_iterations: int = 0,
    cfg: AttackConfig = AttackConfig(),
    train_cfg: TrainConfig = UNROLLED_DEFAULTS,
    seed: int = 0,
    labels: Optional[np.ndarray] = None,
    model_cfg: ModelConfig = ModelConfig(),
) -> tuple[EdgeFlipSet, EdgeFlipSet]:
    """Symbiotic attack whose poisoning loop anticipates the future evasion
    by running a short inner evasion attack each iteration.

    With zero inner iterations this follows exactly the same deterministic
    path as :func:`sequential_attack`, producing identical flip sets for a
    shared seed.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    d_pois = int(np.floor(alpha * budget))
    d_ev = budget - d_pois
    inner_cfg = replace(cfg, inner_iterations=inner_iterations)
    if d_pois == 0:
        poison_flips = empty_flips(g.name)
    else:
        gv, sv, target, lab, to_full = _poison_view(g, splits, None, labels)
        kind = cfg.loss or "cross_entropy"
        state = _poison_loop(
            arch, gv, sv, d_pois, inner_cfg, train_cfg,
            derive_seed(seed, "poison"), target, lab, model_cfg,
            inner_budget=d_ev,
        )
        loss_eval = _poison_loss_eval(
            arch, gv, sv, train_cfg,
            derive_seed(derive_seed(seed, "poison"), "final-train"),
            target, lab, kind, model_cfg,
        )
        rng = np.random.default_rng(
            derive_seed(derive_seed(seed, "poison"), "final-sample")
        )
        poison_flips = to_full(
            sample_final(state, gv, d_pois, cfg.final_samples, loss_eval, rng)
        )
    return _symbiotic_finish(
        arch, g, splits, poison_flips, d_ev, cfg, train_cfg, seed, labels, model_cfg
    )
