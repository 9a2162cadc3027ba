"""Orchestration shared by the CLI subcommands.

Everything here is a pure function of (config, run seed): data generation,
base/expert training, Fisher estimation, coded-model construction and
evaluation. Checkpoints on disk are the hand-off points between subcommands.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import coding, decoding
from .config import ExperimentConfig, mix_seed
from .datasets import (KIND_LABEL_SPLIT, MixtureSpec, ScenarioData, ScenarioSpec,
                       lattice_means, make_scenario)
from .fisher import DiagonalFisher, estimate_diag_fisher
from .net import (LabeledDataset, NetworkSpec, ParamVec, ProbeSet, TrainConfig,
                  accuracy, init_params, train)
from .store import (MissingArtifactError, load_diag_fisher, load_network,
                    probe_sha256, save_diag_fisher, save_network)
from .weights import CodingWeights


def scenario_spec_for(cfg: ExperimentConfig, run_seed: int, probe_size: int = None) -> ScenarioSpec:
    sc = cfg.scenario
    n_mixtures = 1 if sc["kind"] == KIND_LABEL_SPLIT else 2
    mixtures = []
    for side in range(n_mixtures):
        means = lattice_means(
            sc["input_dim"], sc["classes"], sc["separation"],
            mix_seed(sc["seed"], run_seed, "means", side),
        )
        mixtures.append(MixtureSpec(means, sc["sigma"], sc["samples_per_class"]))
    return ScenarioSpec(
        kind=sc["kind"],
        mixtures=tuple(mixtures),
        seed=mix_seed(sc["seed"], run_seed, "scenario"),
        train_fraction=sc["train_fraction"],
        probe_size=probe_size if probe_size is not None else sc["probe_size"],
    )


def build_data(cfg: ExperimentConfig, run_seed: int, probe_size: int = None) -> ScenarioData:
    return make_scenario(scenario_spec_for(cfg, run_seed, probe_size))


def _train_cfg(section: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=section["learning_rate"],
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        weight_decay=section["weight_decay"],
        rng_seed=seed,
        loss=section["loss"],
    )


@dataclass
class ExpertBundle:
    base: ParamVec
    experts: list
    train_accuracy: list
    test_accuracy: list


def train_experts(cfg: ExperimentConfig, run_seed: int, data: ScenarioData) -> ExpertBundle:
    """Train the shared base, then fine-tune one expert per side from it."""
    spec = cfg.network
    base = init_params(spec, mix_seed(run_seed, "init"))
    if cfg.base_epochs > 0:
        combined = LabeledDataset(
            np.vstack([d.inputs for d in data.train]),
            np.concatenate([d.labels for d in data.train]),
            "train",
        )
        base_cfg = _train_cfg(dict(cfg.train, epochs=cfg.base_epochs), mix_seed(run_seed, "base"))
        base = train(spec, base, combined, base_cfg)
    experts, tr_acc, te_acc = [], [], []
    for i, side in enumerate(data.train):
        expert = train(spec, base, side, _train_cfg(cfg.train, mix_seed(run_seed, "expert", i)))
        experts.append(expert)
        tr_acc.append(accuracy(spec, expert, side))
        te_acc.append(accuracy(spec, expert, data.test[i]))
    return ExpertBundle(base, experts, tr_acc, te_acc)


def compute_fishers(experts, probe: ProbeSet) -> list:
    return [estimate_diag_fisher(e.spec, e, probe) for e in experts]


def _nda_scorer(cfg: ExperimentConfig, data: ScenarioData, experts):
    """Maximize mean NDA on the labeled probe rows (negated for minimization)."""
    val_sets = probe_validation_sets(data)

    def score(candidate):
        values = [
            decoding.nda(candidate.params, experts, i, val, cfg.weights)
            for i, val in enumerate(val_sets)
        ]
        return -float(np.mean(values))

    return score


def probe_validation_sets(data: ScenarioData) -> list:
    """The probe rows regrouped per source side, with their labels."""
    out = []
    for i in range(len(data.train)):
        mask = data.probe_side == i
        out.append(LabeledDataset(data.probe.inputs[mask], data.probe_labels[mask], "train"))
    return out


def build_coded(cfg: ExperimentConfig, method: str, run_seed: int, data: ScenarioData,
                bundle: ExpertBundle, fishers=None) -> coding.CodedModel:
    """Construct (and tune, where applicable) one coded model."""
    experts = bundle.experts
    scorer = None
    if cfg.tune_criterion == "nda":
        scorer = _nda_scorer(cfg, data, experts)
    if method == coding.METHOD_COIN:
        if fishers is None:
            fishers = compute_fishers(experts, data.probe)
        _, coded = coding.tune_penalty(experts, fishers, cfg.weights, data.probe,
                                       cfg.penalty_grid, scorer=scorer)
    elif method == coding.METHOD_VANILLA:
        coded = coding.vanilla_average(experts, cfg.weights)
    elif method == coding.METHOD_TASK_ARITHMETIC:
        _, coded = coding.tune_alpha(bundle.base, experts, cfg.weights, data.probe,
                                     cfg.alpha_grid, scorer=scorer)
    elif method == coding.METHOD_DISTILL:
        init = coding.vanilla_average(experts, cfg.weights).params
        coded = coding.distill(experts, cfg.weights, data.probe, init,
                               _train_cfg(cfg.distill_train, mix_seed(run_seed, "distill")))
    else:
        raise ValueError(f"unknown method {method!r}")
    coded.provenance = {
        "config": cfg.hash,
        "seed": run_seed,
        "sources": [f"expert{i}" for i in range(len(experts))],
        "probe": probe_sha256(data.probe.inputs),
    }
    return coded


def evaluate_coded(cfg: ExperimentConfig, data: ScenarioData, experts, coded: coding.CodedModel):
    report = decoding.nda_report(coded.params, experts, data.test, cfg.weights)
    loss = decoding.empirical_coding_loss(coded.params, experts, cfg.weights, data.probe)
    msr = decoding.mean_squared_residual(coded.params, experts, cfg.weights, data.probe)
    return report, loss, msr


# ---------------------------------------------------------------------------
# Checkpoint layout


def checkpoint_dir(out_dir: str, run_seed: int) -> str:
    return os.path.join(out_dir, "checkpoints", f"seed{run_seed}")


def results_dir(out_dir: str) -> str:
    return os.path.join(out_dir, "results")


def figures_dir(out_dir: str) -> str:
    return os.path.join(out_dir, "figures")


def expert_path(out_dir: str, run_seed: int, i: int) -> str:
    return os.path.join(checkpoint_dir(out_dir, run_seed), f"expert{i}.json")


def base_path(out_dir: str, run_seed: int) -> str:
    return os.path.join(checkpoint_dir(out_dir, run_seed), "base.json")


def fisher_path(out_dir: str, run_seed: int, i: int) -> str:
    return os.path.join(checkpoint_dir(out_dir, run_seed), f"fisher{i}.json")


def coded_path(out_dir: str, run_seed: int, method: str) -> str:
    return os.path.join(checkpoint_dir(out_dir, run_seed), f"coded_{method}.json")


def save_experts(cfg: ExperimentConfig, out_dir: str, run_seed: int, bundle: ExpertBundle) -> None:
    meta = {"config": cfg.hash, "seed": run_seed}
    save_network(base_path(out_dir, run_seed), bundle.base, dict(meta, role="base"))
    for i, expert in enumerate(bundle.experts):
        save_network(expert_path(out_dir, run_seed, i), expert, dict(meta, role=f"expert{i}"))


def load_experts(cfg: ExperimentConfig, out_dir: str, run_seed: int, n: int = 2):
    """Returns (base, experts); raises MissingArtifactError when absent."""
    base, _ = load_network(base_path(out_dir, run_seed))
    experts = []
    for i in range(n):
        params, _ = load_network(expert_path(out_dir, run_seed, i))
        experts.append(params)
    return base, experts


def save_coded(cfg: ExperimentConfig, out_dir: str, run_seed: int, coded: coding.CodedModel) -> None:
    provenance = dict(coded.provenance)
    provenance["method"] = coded.method
    provenance["hyperparams"] = coded.hyperparams
    save_network(coded_path(out_dir, run_seed, coded.method), coded.params, provenance)


def load_coded(out_dir: str, run_seed: int, method: str) -> coding.CodedModel:
    params, provenance = load_network(coded_path(out_dir, run_seed, method))
    provenance = provenance or {}
    return coding.CodedModel(params, method, provenance.get("hyperparams", {}), provenance)
