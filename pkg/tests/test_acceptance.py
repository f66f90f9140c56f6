"""Acceptance gate.

Six criteria, one test each.  Criteria 1-3 are self-contained and fast.
Criteria 4-6 reproduce published desk-scale numbers and need the converted
citation datasets under data/; they skip with instructions when the data is
absent (this sandbox's package mirror cannot provide the raw datasets) and
the PubMed stress run is additionally marked slow.
"""

import numpy as np
import pytest

import graphattacks.autodiff as ad
from graphattacks.attack import (
    AttackConfig,
    PerturbationState,
    joint_attack,
    project,
    sample_block,
    sample_final,
    sequential_attack,
)
from graphattacks.graph import (
    EdgeFlipSet,
    apply_flips,
    make_splits,
    num_pairs,
    tri_decode,
    tri_encode,
)
from graphattacks.harness import ExperimentConfig, run_experiment, run_sweep
from graphattacks.models import ModelConfig, forward, init_model
from graphattacks.training import TrainConfig, unrolled_train

from conftest import dataset_path_or_skip, tiny_graph, tiny_splits
from oracles import capped_simplex_oracle
from test_attack import SMALL, evasion_oracle_ratio, poisoning_oracle_ratio


def test_criterion_1_property_suite():
    """Projection vs exact oracle, idempotence, order preservation,
    tri-index bijectivity, flip involution, budget compliance."""
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 21))
        v = rng.normal(scale=2.0, size=n)
        budget = int(rng.integers(0, n + 1))
        got = project(v, budget)
        assert np.abs(got - capped_simplex_oracle(v, budget)).max() <= 1e-8
        assert np.abs(project(got, budget) - got).max() <= 1e-9
        order = np.argsort(v)
        assert np.all(np.diff(got[order]) >= -1e-12)

    for n in (2, 5, 9, 14):
        ks = np.arange(num_pairs(n))
        i, j = tri_decode(ks, n)
        assert np.all(i < j)
        np.testing.assert_array_equal(tri_encode(i, j, n), ks)

    g = tiny_graph(1, n=8)
    for seed in range(20):
        r = np.random.default_rng(seed)
        k = np.sort(r.choice(num_pairs(8), size=int(r.integers(1, 6)), replace=False))
        ii, jj = tri_decode(k, 8)
        flips = EdgeFlipSet(np.stack([ii, jj], axis=1), g.name)
        back = apply_flips(apply_flips(g, flips), flips)
        np.testing.assert_array_equal(back.edges, g.edges)

    violations = 0
    for trial in range(10_000):
        budget = int(rng.integers(1, 5))
        b = int(rng.integers(1, 12))
        idx = np.sort(rng.choice(num_pairs(8), size=b, replace=False))
        vals = project(rng.random(b) * 2, budget)
        state = PerturbationState(idx, vals, budget, 8, g.name)
        flips = sample_final(state, g, budget, 3, lambda f: float(len(f)), rng)
        if len(flips) > budget:
            violations += 1
    assert violations == 0, f"{violations} budget violations in 10000 trials"
    print("\n[criterion 1] PASS: projection exact, codec bijective, "
          "flips involutive, 0/10000 budget violations")


def test_criterion_2_gradient_suite():
    """Primitive, model edge-weight, and meta-gradients vs central finite
    differences (primitives <= 1e-4, the rest <= 1e-3)."""
    rng = np.random.default_rng(3)

    def vec(*shape):
        return rng.normal(size=shape)

    b34 = ad.Tensor(vec(3, 4))
    idx = np.array([0, 2, 2, 1])
    src = np.array([0, 1, 2, 2, 3])
    dst = np.array([1, 0, 1, 3, 2])
    dense = ad.Tensor(vec(4, 3))
    csum = ad.Tensor(vec(4, 3))
    labels = np.array([0, 2, 1, 1])
    b42 = ad.Tensor(vec(4, 2))
    c43 = ad.Tensor(vec(4, 3))
    c53 = ad.Tensor(vec(5, 3))
    c5 = ad.Tensor(vec(5))
    w5 = ad.Tensor(np.abs(vec(5)))
    primitives = {
        "add": (lambda x: ad.tsum(ad.mul(ad.add(x, b34), b34)), vec(3, 4)),
        "mul": (lambda x: ad.tsum(ad.mul(ad.mul(x, b34), b34)), vec(3, 4)),
        "div": (lambda x: ad.tsum(ad.div(b34, x)), np.abs(vec(3, 4)) + 1),
        "exp": (lambda x: ad.tsum(ad.exp(x)), vec(4)),
        "log": (lambda x: ad.tsum(ad.log(x)), np.abs(vec(4)) + 0.5),
        "tanh": (lambda x: ad.tsum(ad.tanh(x)), vec(4)),
        "power": (lambda x: ad.tsum(ad.power_const(x, -0.5)), np.abs(vec(4)) + 0.5),
        "matmul": (lambda x: ad.tsum(ad.matmul(x, b42)), vec(3, 4)),
        "gather": (lambda x: ad.tsum(ad.mul(ad.gather_rows(x, idx), c43)), vec(3, 3)),
        "scatter": (lambda x: ad.tsum(ad.mul(ad.scatter_add_rows(x, idx, 5), c53)), vec(4, 3)),
        "spmm_w": (lambda w: ad.tsum(ad.mul(ad.spmm(src, dst, w, dense, 4), csum)), np.abs(vec(5))),
        "spmm_x": (lambda d: ad.tsum(ad.mul(ad.spmm(src, dst, w5, d, 4), csum)), vec(4, 3)),
        "edge_dot": (lambda x: ad.tsum(ad.mul(ad.edge_dot(src, dst, x, dense), c5)), vec(4, 3)),
        "log_softmax": (lambda x: ad.tsum(ad.mul(ad.log_softmax(x), b34)), vec(3, 4)),
        "masked_ce": (lambda x: ad.masked_cross_entropy(x, labels, np.array([0, 2, 3])), vec(4, 3)),
    }
    worst_prim = 0.0
    for name, (f, x0) in primitives.items():
        err = ad.finite_diff_check(f, x0, eps=1e-6)
        tol = 1e-3 if name == "masked_ce" else 1e-4
        assert err <= tol, f"primitive {name}: fd err {err}"
        worst_prim = max(worst_prim, err)

    g = tiny_graph(2, n=7, num_classes=2)
    nodes = np.arange(g.num_nodes)
    worst_model = 0.0
    for arch in ("gcn", "gat", "appnp", "gprgnn"):
        cfg = ModelConfig(hidden=8, gat_heads=2, gat_head_dim=4, dropout=0.0)
        params = init_model(arch, g.feature_dim, g.num_classes, seed=1, config=cfg)

        def f(w):
            logits = forward(params, g.edges, w, g.features)
            return ad.masked_cross_entropy(logits, g.labels, nodes)

        err = ad.finite_diff_check(f, np.full(g.num_edges, 0.8), eps=1e-6)
        assert err <= 1e-3, f"{arch} edge-weight gradient fd err {err}"
        worst_model = max(worst_model, err)

    # meta-gradient through a 5-step unrolled training
    g6 = tiny_graph(5, n=6, num_classes=2)
    splits = tiny_splits(g6, 1)
    tcfg = TrainConfig(epochs=5, optimizer="sgd_momentum", lr=0.1,
                       patience=5, dropout=False)

    def meta(w):
        res = unrolled_train(
            "gcn", g6.edges, w, g6.features, splits, g6.labels, 2,
            config=tcfg, seed=3, model_config=SMALL,
        )
        logits = forward(res.params, g6.edges, w, g6.features,
                         weight_tensors=res.tensors)
        return ad.masked_cross_entropy(logits, g6.labels, splits.test)

    meta_err = ad.finite_diff_check(meta, np.full(g6.num_edges, 0.7), eps=1e-5)
    assert meta_err <= 1e-3, f"meta-gradient fd err {meta_err}"
    print(f"\n[criterion 2] PASS: primitives worst {worst_prim:.2e}, "
          f"models worst {worst_model:.2e}, meta-gradient {meta_err:.2e}")


def test_criterion_3_oracle_suite(sbm, sbm_splits):
    """Tiny-instance attacks reach >= 90% of the brute-force optimum;
    joint(m=0) flips are bit-identical to sequential flips."""
    ratios = {}
    for budget in (1, 2):
        ratios[f"evasion d={budget}"] = evasion_oracle_ratio(0, budget)
        ratios[f"poisoning d={budget}"] = poisoning_oracle_ratio(0, budget)
    for name, ratio in ratios.items():
        assert ratio >= 0.9, f"{name}: only {ratio:.3f} of brute-force optimum"

    cfg = AttackConfig(iterations=4, block_size=150, final_samples=8)
    tcfg = TrainConfig(epochs=10, optimizer="sgd_momentum", lr=0.1,
                       patience=10, dropout=False)
    args = dict(arch="gcn", g=sbm, splits=sbm_splits, budget=8, alpha=0.5,
                cfg=cfg, train_cfg=tcfg, seed=77, model_cfg=SMALL)
    p1, e1 = sequential_attack(**args)
    p2, e2 = joint_attack(inner_iterations=0, **args)
    np.testing.assert_array_equal(p1.flips, p2.flips)
    np.testing.assert_array_equal(e1.flips, e2.flips)
    summary = ", ".join(f"{k} {v:.2f}x" for k, v in ratios.items())
    print(f"\n[criterion 3] PASS: {summary}; joint(m=0) == sequential")


def _desk_config(path, attack, seeds, **overrides):
    base = dict(
        dataset=str(path), arch="gcn", attack=attack, budget_fraction=0.05,
        seeds=seeds, labeled_per_class=20, test_fraction=0.1,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.mark.dataset
@pytest.mark.slow
def test_criterion_4_desk_scale_cora_citeseer():
    """Cora + CiteSeer, GCN, 10 seeds, 5% budget: clean accuracy near the
    published value, evasion below 0.46, symbiotic below poisoning and near
    evasion.  The ordering claims are the binding checks."""
    seeds = tuple(range(10))
    expected_clean = {"cora": 0.78, "citeseer": 0.68}
    lines = []
    for name in ("cora", "citeseer"):
        path = dataset_path_or_skip(name)
        clean = run_experiment(_desk_config(path, "clean", seeds)).mean_acc
        evasion = run_experiment(_desk_config(path, "evasion", seeds)).mean_acc
        poisoning = run_experiment(_desk_config(path, "poisoning", seeds)).mean_acc
        symbiotic = run_experiment(_desk_config(path, "sequential", seeds)).mean_acc
        lines.append(
            f"{name}: clean {clean:.3f} evasion {evasion:.3f} "
            f"poisoning {poisoning:.3f} symbiotic {symbiotic:.3f}"
        )
        assert abs(clean - expected_clean[name]) <= 0.04, lines[-1]
        assert evasion <= 0.46, lines[-1]
        assert symbiotic <= poisoning, lines[-1]
        assert symbiotic <= evasion + 0.03, lines[-1]
    print("\n[criterion 4] PASS: " + "; ".join(lines))


@pytest.mark.dataset
@pytest.mark.slow
def test_criterion_5_pubmed_stress():
    """PubMed, GCN, 3 seeds, 5% budget: near-zero perturbed accuracy."""
    path = dataset_path_or_skip("pubmed")
    seeds = (0, 1, 2)
    poisoning = run_experiment(_desk_config(path, "poisoning", seeds)).mean_acc
    symbiotic = run_experiment(_desk_config(path, "sequential", seeds)).mean_acc
    assert poisoning <= 0.25, f"poisoning {poisoning:.3f} > 0.25"
    assert symbiotic <= 0.15, f"symbiotic {symbiotic:.3f} > 0.15"
    print(f"\n[criterion 5] PASS: poisoning {poisoning:.3f}, "
          f"symbiotic {symbiotic:.3f}")


@pytest.mark.dataset
@pytest.mark.slow
def test_criterion_6_trends():
    """Cora, GCN, 5 seeds: accuracy non-increasing in budget within 1 SE;
    evasion strictly harder at larger test fractions, symbiotic less so."""
    path = dataset_path_or_skip("cora")
    seeds = tuple(range(5))
    budgets = [0.0, 0.01, 0.05, 0.10]
    reports = run_sweep(
        _desk_config(path, "evasion", seeds), "budget_fraction", budgets
    )
    for prev, cur in zip(reports, reports[1:]):
        slack = max(prev.se_acc, cur.se_acc)
        assert cur.mean_acc <= prev.mean_acc + slack, (
            f"accuracy increased with budget beyond 1 SE: "
            f"{prev.mean_acc:.3f} -> {cur.mean_acc:.3f} (se {slack:.3f})"
        )

    fractions = [0.05, 0.4]
    ev = run_sweep(
        _desk_config(path, "evasion", seeds), "test_fraction", fractions
    )
    sym = run_sweep(
        _desk_config(path, "sequential", seeds), "test_fraction", fractions
    )
    ev_delta = ev[1].mean_acc - ev[0].mean_acc
    sym_delta = sym[1].mean_acc - sym[0].mean_acc
    assert ev[1].mean_acc > ev[0].mean_acc, (
        f"evasion not harder at 40% test nodes: {ev[0].mean_acc:.3f} vs "
        f"{ev[1].mean_acc:.3f}"
    )
    assert sym_delta < ev_delta, (
        f"symbiotic weakened as much as evasion: {sym_delta:.3f} vs {ev_delta:.3f}"
    )
    print(f"\n[criterion 6] PASS: budget trend holds; evasion delta "
          f"{ev_delta:.3f} vs symbiotic delta {sym_delta:.3f}")
