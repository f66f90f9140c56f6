"""Experiment orchestration: configs, multi-seed runs, the attack pipelines,
parameter sweeps and machine-readable reports.

A run is fully determined by its config (seeds included).  Each seed derives
independent sub-seeds for the split, the victim, the attacker's surrogate and
the attack itself, so every source of randomness is reproducible on its own.
The victim is always trained and evaluated as a black box: attacker gradients
only ever touch attacker-trained surrogates.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig, derive_seed, evasion_attack, joint_attack, \
    poison_attack, sequential_attack
from .graph import (
    Graph,
    Splits,
    apply_flips,
    budget_from_fraction,
    empty_flips,
    jaccard_purify,
    load_dataset,
    make_splits,
    write_flips,
)
from .models import ModelConfig, accuracy, predict
from .training import TrainConfig, UNROLLED_DEFAULTS, train_victim

DEFENSES = ("none", "jaccard")
ATTACKS = ("clean", "evasion", "poisoning", "sequential", "joint")
MODES = ("transductive", "inductive")
LABEL_SOURCES = ("true", "self_train")
SWEEP_PARAMETERS = ("budget_fraction", "block_size", "test_fraction", "inner_iterations")

WORKERS_ENV = "GRAPHATTACKS_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    dataset: str
    arch: str = "gcn"
    defense: str = "none"
    mode: str = "transductive"
    attack: str = "clean"
    budget_fraction: float = 0.05
    alpha: float = 0.5
    inner_iterations: int = 0
    block_size: int = 250_000
    iterations: int = 125
    seeds: tuple[int, ...] = (0,)
    label_source: str = "true"
    labeled_per_class: int = 20
    test_fraction: float = 0.1
    final_samples: int = 100
    base_lr: float = 0.1
    hidden: int = 64
    victim_epochs: int = 200
    victim_patience: int = 50
    unroll_epochs: int = 100
    output_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.budget_fraction < 0:
            raise ValueError("budget_fraction must be >= 0")
        for value, allowed, name in (
            (self.defense, DEFENSES, "defense"),
            (self.mode, MODES, "mode"),
            (self.attack, ATTACKS, "attack"),
            (self.label_source, LABEL_SOURCES, "label_source"),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class SeedResult:
    seed: int
    clean_acc: float
    perturbed_acc: float
    runtime_s: float
    flip_files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(
            seed=self.seed,
            clean_acc=self.clean_acc,
            perturbed_acc=self.perturbed_acc,
            runtime_s=self.runtime_s,
            flip_files=list(self.flip_files),
        )


@dataclass
class AttackReport:
    """Per-seed accuracies plus mean and standard error of the perturbed
    accuracy (stddev / sqrt(#seeds))."""

    config: dict
    dataset: str
    budget: int
    per_seed: list[SeedResult]
    mean_acc: float
    se_acc: float
    clean_mean_acc: float
    clean_se_acc: float
    runtime_s: float

    def __post_init__(self):
        assert 0.0 <= self.mean_acc <= 1.0
        assert self.se_acc >= 0.0
        assert len(self.per_seed) == len(self.config["seeds"])

    def to_dict(self) -> dict:
        return dict(
            config=self.config,
            dataset=self.dataset,
            budget=self.budget,
            per_seed=[r.to_dict() for r in self.per_seed],
            mean_acc=self.mean_acc,
            se_acc=self.se_acc,
            clean_mean_acc=self.clean_mean_acc,
            clean_se_acc=self.clean_se_acc,
            runtime_s=self.runtime_s,
        )


def _standard_error(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _defend(g: Graph, defense: str) -> Graph:
    return jaccard_purify(g) if defense == "jaccard" else g


def _attack_labels(
    cfg: ExperimentConfig,
    g: Graph,
    splits: Splits,
    victim_cfg: TrainConfig,
    model_cfg: ModelConfig,
    seed: int,
) -> Optional[np.ndarray]:
    """Labels the attack objective sees: ground truth, or surrogate-predicted
    pseudo-labels outside the labeled training set."""
    if cfg.label_source == "true":
        return None
    surrogate = train_victim(
        cfg.arch, g, splits, victim_cfg,
        seed=derive_seed(seed, "pseudo-label"), model_config=model_cfg,
    )
    labels = g.labels.copy()
    rest = np.setdiff1d(np.arange(g.num_nodes), splits.labeled_train)
    labels[rest] = predict(surrogate, g, rest)
    return labels


def run_seed(cfg: ExperimentConfig, g: Graph, budget: int, seed: int) -> SeedResult:
    """One full pipeline run: split, (defended) victim training, attack,
    victim retraining where poisoning occurred, test evaluation."""
    t0 = time.perf_counter()
    splits = make_splits(
        g, cfg.labeled_per_class, cfg.test_fraction, cfg.mode,
        seed=derive_seed(seed, "split"),
    )
    victim_seed = derive_seed(seed, "victim")
    attack_seed = derive_seed(seed, "attack")
    surrogate_seed = derive_seed(seed, "surrogate")

    model_cfg = ModelConfig(hidden=cfg.hidden)
    victim_cfg = TrainConfig(epochs=cfg.victim_epochs, patience=cfg.victim_patience)
    unroll_cfg = replace(
        UNROLLED_DEFAULTS, epochs=cfg.unroll_epochs, patience=cfg.unroll_epochs
    )
    atk_cfg = AttackConfig(
        iterations=cfg.iterations,
        block_size=cfg.block_size,
        base_lr=cfg.base_lr,
        final_samples=cfg.final_samples,
        alpha=cfg.alpha,
        inner_iterations=cfg.inner_iterations,
    )

    g_def = _defend(g, cfg.defense)
    victim = train_victim(
        cfg.arch, g_def, splits, victim_cfg, seed=victim_seed, model_config=model_cfg
    )
    clean_acc = accuracy(victim, g_def, splits.test)

    poison_flips = empty_flips(g.name)
    evade_flips = empty_flips(g.name)
    if cfg.attack != "clean":
        labels = _attack_labels(cfg, g, splits, victim_cfg, model_cfg, seed)
    if cfg.attack == "clean" or budget == 0:
        perturbed_acc = clean_acc
    elif cfg.attack == "evasion":
        surrogate = train_victim(
            cfg.arch, g, splits, victim_cfg, seed=surrogate_seed,
            model_config=model_cfg,
        )
        evade_flips = evasion_attack(
            surrogate, g, splits, budget, atk_cfg, seed=attack_seed, labels=labels
        )
        perturbed_acc = accuracy(
            victim, _defend(apply_flips(g, evade_flips), cfg.defense), splits.test
        )
    elif cfg.attack == "poisoning":
        poison_flips = poison_attack(
            cfg.arch, g, splits, budget, atk_cfg, unroll_cfg,
            seed=attack_seed, labels=labels, model_cfg=model_cfg,
        )
        g_pois = _defend(apply_flips(g, poison_flips), cfg.defense)
        victim = train_victim(
            cfg.arch, g_pois, splits, victim_cfg, seed=victim_seed,
            model_config=model_cfg,
        )
        perturbed_acc = accuracy(victim, g_pois, splits.test)
    else:
        run = sequential_attack if cfg.attack == "sequential" else joint_attack
        kwargs = dict(
            alpha=cfg.alpha, cfg=atk_cfg, train_cfg=unroll_cfg,
            seed=attack_seed, labels=labels, model_cfg=model_cfg,
        )
        if cfg.attack == "joint":
            kwargs["inner_iterations"] = cfg.inner_iterations
        poison_flips, evade_flips = run(cfg.arch, g, splits, budget, **kwargs)
        g_pois = apply_flips(g, poison_flips)
        victim = train_victim(
            cfg.arch, _defend(g_pois, cfg.defense), splits, victim_cfg,
            seed=victim_seed, model_config=model_cfg,
        )
        perturbed_acc = accuracy(
            victim, _defend(apply_flips(g_pois, evade_flips), cfg.defense),
            splits.test,
        )

    result = SeedResult(
        seed=seed,
        clean_acc=float(clean_acc),
        perturbed_acc=float(perturbed_acc),
        runtime_s=time.perf_counter() - t0,
    )
    result._poison_flips = poison_flips  # stashed for the caller to persist
    result._evade_flips = evade_flips
    return result


def _write_seed_flips(out_dir: Path, cfg: ExperimentConfig, budget: int,
                      result: SeedResult) -> None:
    flips_dir = out_dir / "flips"
    flips_dir.mkdir(parents=True, exist_ok=True)
    poison = getattr(result, "_poison_flips", None)
    evade = getattr(result, "_evade_flips", None)
    if cfg.attack in ("sequential", "joint"):
        for stage, flips in (("poison", poison), ("evasion", evade)):
            path = flips_dir / f"{result.seed}_{stage}.csv"
            write_flips(flips, path, stage, budget, result.seed)
            result.flip_files.append(str(path.relative_to(out_dir)))
    elif cfg.attack in ("evasion", "poisoning"):
        flips = evade if cfg.attack == "evasion" else poison
        path = flips_dir / f"{result.seed}.csv"
        write_flips(flips, path, cfg.attack, budget, result.seed)
        result.flip_files.append(str(path.relative_to(out_dir)))


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _seed_job(args):
    cfg, g, budget, seed = args
    return run_seed(cfg, g, budget, seed)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> AttackReport:
    """Run every seed of the configured pipeline and aggregate mean and
    standard error of the perturbed test accuracy.

    Seeds run in parallel when the worker-count environment variable is set
    above 1; aggregation and all file writes happen in this process.  On a
    seed failure the completed seeds are flushed to a failure-marked JSON
    file before the error propagates.
    """
    t0 = time.perf_counter()
    g = load_dataset(cfg.dataset)
    budget = budget_from_fraction(g, cfg.budget_fraction)
    out = Path(out_dir) if out_dir else (
        Path(cfg.output_dir) if cfg.output_dir else None
    )
    if out:
        out.mkdir(parents=True, exist_ok=True)

    results: list[SeedResult] = []
    workers = min(_worker_count(), len(cfg.seeds))
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                jobs = [(cfg, g, budget, s) for s in cfg.seeds]
                for res in pool.map(_seed_job, jobs):
                    results.append(res)
        else:
            for s in cfg.seeds:
                results.append(run_seed(cfg, g, budget, s))
    except Exception:
        if out:
            partial = dict(
                config=cfg.to_dict(), failed=True,
                completed=[r.to_dict() for r in results],
            )
            _atomic_write(out / "report.failed.json", json.dumps(partial, indent=2))
        raise

    if out:
        for res in results:
            _write_seed_flips(out, cfg, budget, res)

    perturbed = np.array([r.perturbed_acc for r in results])
    clean = np.array([r.clean_acc for r in results])
    report = AttackReport(
        config=cfg.to_dict(),
        dataset=g.name,
        budget=budget,
        per_seed=results,
        mean_acc=float(perturbed.mean()),
        se_acc=_standard_error(perturbed),
        clean_mean_acc=float(clean.mean()),
        clean_se_acc=_standard_error(clean),
        runtime_s=time.perf_counter() - t0,
    )
    if out:
        emit_report(report, "csv", out / "report.csv")
        emit_report(report, "json", out / "report.json")
    return report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _check_sweep_applicable(cfg: ExperimentConfig, parameter: str) -> None:
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    if parameter == "inner_iterations" and cfg.attack != "joint":
        raise ValueError("inner_iterations only applies to the joint attack")
    if parameter in ("budget_fraction", "block_size") and cfg.attack == "clean":
        raise ValueError(f"{parameter} does not apply to a clean run")


def run_sweep(
    cfg: ExperimentConfig,
    parameter: str,
    values: Sequence,
    out_dir=None,
) -> list[AttackReport]:
    """One experiment per parameter value, shared seeds.

    Writes `sweep.csv` in long format (one row per seed per value) plus a
    rendered accuracy-vs-value figure when an output directory is given.
    """
    if not len(values):
        raise ValueError("sweep values must be nonempty")
    _check_sweep_applicable(cfg, parameter)
    out = Path(out_dir) if out_dir else (
        Path(cfg.output_dir) if cfg.output_dir else None
    )
    reports = []
    for value in values:
        sub_out = out / f"{parameter}_{value}" if out else None
        sub_cfg = replace(cfg, **{parameter: value}, output_dir=None)
        reports.append(run_experiment(sub_cfg, out_dir=sub_out))

    if out:
        out.mkdir(parents=True, exist_ok=True)
        lines = ["parameter,value,model,dataset,attack,seed,clean_acc,perturbed_acc"]
        for value, rep in zip(values, reports):
            for r in rep.per_seed:
                lines.append(
                    f"{parameter},{value},{cfg.arch},{rep.dataset},{cfg.attack},"
                    f"{r.seed},{r.clean_acc!r},{r.perturbed_acc!r}"
                )
        _atomic_write(out / "sweep.csv", "\n".join(lines) + "\n")
        from .plotting import render_sweep_figure

        render_sweep_figure(reports, values, parameter, out / f"sweep_{parameter}.png")
    return reports


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    "model", "dataset", "defense", "mode", "attack", "budget",
    "mean_acc", "se_acc", "seeds", "runtime_s", "kind", "seed", "clean_acc",
)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.rename(path)


def emit_report(report: AttackReport, format: str, path) -> None:
    """Write a report as CSV (one summary row plus one row per seed) or as
    JSON mirroring the same fields."""
    path = Path(path)
    cfg = report.config
    if format == "json":
        _atomic_write(path, json.dumps(report.to_dict(), indent=2) + "\n")
        return
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}")
    common = (
        f"{cfg['arch']},{report.dataset},{cfg['defense']},{cfg['mode']},"
        f"{cfg['attack']},{report.budget}"
    )
    lines = [",".join(REPORT_COLUMNS)]
    lines.append(
        f"{common},{report.mean_acc!r},{report.se_acc!r},{len(report.per_seed)},"
        f"{report.runtime_s:.3f},summary,,{report.clean_mean_acc!r}"
    )
    for r in report.per_seed:
        lines.append(
            f"{common},{r.perturbed_acc!r},0.0,1,{r.runtime_s:.3f},seed,"
            f"{r.seed},{r.clean_acc!r}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")
