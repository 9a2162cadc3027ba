"""Experiment configuration: one YAML document drives the whole pipeline.

Every source of randomness is a named seed field; the resolved document
(defaults applied) is hashed and the hash is stamped on every output file so
results from different configurations cannot be silently mixed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import yaml

from .coding import METHODS
from .datasets import SCENARIO_KINDS
from .net import ACTIVATIONS, LOSSES, NetworkSpec
from .simulate import SERVICE_DETERMINISTIC, SERVICE_EXPONENTIAL
from .store import config_sha256
from .weights import CodingWeights

DEFAULT_PENALTY_GRID = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]
DEFAULT_ALPHA_GRID = [round(0.05 * k, 2) for k in range(1, 21)]
TUNE_CRITERIA = ("coding_loss", "nda")


class ConfigError(ValueError):
    """The configuration document is invalid."""


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def _section(raw: dict, name: str, required=True) -> dict:
    value = raw.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing config section {name!r}")
        return None
    _require(isinstance(value, dict), f"section {name!r} must be a mapping")
    return dict(value)


def _train_section(section: dict, where: str) -> dict:
    out = {
        "learning_rate": float(section.get("learning_rate", 0.01)),
        "epochs": int(section.get("epochs", 20)),
        "batch_size": int(section.get("batch_size", 32)),
        "weight_decay": float(section.get("weight_decay", 0.0)),
        "loss": str(section.get("loss", "cross_entropy")),
    }
    _require(out["learning_rate"] > 0, f"{where}.learning_rate must be positive")
    _require(out["epochs"] >= 0, f"{where}.epochs must be nonnegative")
    _require(out["batch_size"] >= 1, f"{where}.batch_size must be positive")
    _require(out["weight_decay"] >= 0, f"{where}.weight_decay must be nonnegative")
    _require(out["loss"] in LOSSES, f"{where}.loss must be one of {LOSSES}")
    return out


@dataclass
class ExperimentConfig:
    resolved: dict
    hash: str
    network: NetworkSpec
    weights: CodingWeights

    @property
    def scenario(self) -> dict:
        return self.resolved["scenario"]

    @property
    def methods(self) -> list:
        return self.resolved["methods"]

    @property
    def seeds(self) -> list:
        return self.resolved["seeds"]

    @property
    def train(self) -> dict:
        return self.resolved["train"]

    @property
    def distill_train(self) -> dict:
        return self.resolved["distill_train"]

    @property
    def base_epochs(self) -> int:
        return self.resolved["base_epochs"]

    @property
    def penalty_grid(self) -> list:
        return self.resolved["penalty_grid"]

    @property
    def alpha_grid(self) -> list:
        return self.resolved["alpha_grid"]

    @property
    def tune_criterion(self) -> str:
        return self.resolved["tune_criterion"]

    @property
    def ablate_p(self) -> list:
        return self.resolved["ablate_p"]

    @property
    def simulator(self) -> dict:
        return self.resolved.get("simulator")

    @property
    def output_dir(self) -> str:
        return self.resolved["output_dir"]

    @property
    def scenario_name(self) -> str:
        return self.scenario["kind"]


def resolve(raw: dict) -> ExperimentConfig:
    """Validate a parsed document, fill defaults, and freeze the hash."""
    _require(isinstance(raw, dict), "config must be a mapping")

    scenario = _section(raw, "scenario")
    kind = scenario.get("kind")
    _require(kind in SCENARIO_KINDS, f"scenario.kind must be one of {SCENARIO_KINDS}")
    resolved_scenario = {
        "kind": kind,
        "input_dim": int(scenario.get("input_dim", 10)),
        "classes": int(scenario.get("classes", 10)),
        "sigma": float(scenario.get("sigma", 1.0)),
        "samples_per_class": int(scenario.get("samples_per_class", 150)),
        "train_fraction": float(scenario.get("train_fraction", 0.75)),
        "probe_size": int(scenario.get("probe_size", 200)),
        "seed": int(scenario.get("seed", 0)),
    }
    resolved_scenario["separation"] = float(
        scenario.get("separation", 4.0 * resolved_scenario["sigma"])
    )
    _require(resolved_scenario["input_dim"] >= 1, "scenario.input_dim must be >= 1")
    _require(resolved_scenario["classes"] >= 2, "scenario.classes must be >= 2")
    _require(resolved_scenario["sigma"] > 0, "scenario.sigma must be positive")
    _require(resolved_scenario["samples_per_class"] >= 2,
             "scenario.samples_per_class must be >= 2")
    _require(0 < resolved_scenario["train_fraction"] < 1,
             "scenario.train_fraction must be in (0, 1)")
    _require(resolved_scenario["probe_size"] >= 2 and resolved_scenario["probe_size"] % 2 == 0,
             "scenario.probe_size must be even and >= 2")

    network = _section(raw, "network")
    dims = network.get("layer_dims")
    _require(isinstance(dims, list) and len(dims) >= 2, "network.layer_dims must list >= 2 dims")
    activation = str(network.get("activation", "tanh"))
    _require(activation in ACTIVATIONS, f"network.activation must be one of {ACTIVATIONS}")
    spec = NetworkSpec(tuple(int(d) for d in dims), activation)
    _require(spec.input_dim == resolved_scenario["input_dim"],
             "network input dim must match scenario.input_dim")
    _require(spec.output_dim == resolved_scenario["classes"],
             "network output dim must match scenario.classes")

    betas = raw.get("betas", [0.5, 0.5])
    _require(isinstance(betas, list) and len(betas) == 2,
             "betas must list one weight per expert (two experts)")
    try:
        weights = CodingWeights(np.array(betas, dtype=np.float64))
    except ValueError as err:
        raise ConfigError(f"betas: {err}") from err

    methods = raw.get("methods", ["coin", "vanilla"])
    _require(isinstance(methods, list) and methods, "methods must be a nonempty list")
    for m in methods:
        _require(m in METHODS, f"unknown method {m!r}; choose from {METHODS}")

    seeds = raw.get("seeds", [0])
    _require(isinstance(seeds, list) and seeds, "seeds must be a nonempty list")
    seeds = [int(s) for s in seeds]

    penalty_grid = [float(v) for v in raw.get("penalty_grid", DEFAULT_PENALTY_GRID)]
    alpha_grid = [float(v) for v in raw.get("alpha_grid", DEFAULT_ALPHA_GRID)]
    _require("coin" not in methods or penalty_grid, "penalty_grid must be nonempty for coin")
    _require("task-arithmetic" not in methods or alpha_grid,
             "alpha_grid must be nonempty for task-arithmetic")
    _require(all(v >= 0 for v in penalty_grid), "penalty_grid values must be nonnegative")

    tune_criterion = str(raw.get("tune_criterion", "coding_loss"))
    _require(tune_criterion in TUNE_CRITERIA,
             f"tune_criterion must be one of {TUNE_CRITERIA}")

    ablate_p = [int(v) for v in raw.get("ablate_p", [32, 64, 128, 256])]
    _require(ablate_p and all(p >= 2 and p % 2 == 0 for p in ablate_p),
             "ablate_p values must be even and >= 2")

    train = _train_section(_section(raw, "train"), "train")
    distill_raw = raw.get("distill_train")
    if distill_raw is None:
        distill_train = dict(train, loss="squared_error", epochs=200)
    else:
        distill_train = _train_section(dict(distill_raw), "distill_train")
        distill_train["loss"] = "squared_error"

    base_epochs = int(raw.get("base_epochs", 0))
    _require(base_epochs >= 0, "base_epochs must be nonnegative")

    simulator = _section(raw, "simulator", required=False)
    resolved_sim = None
    if simulator is not None:
        resolved_sim = {
            "service_rate": float(simulator.get("service_rate", 1.0)),
            "straggler_prob": float(simulator.get("straggler_prob", 0.0)),
            "slowdown": float(simulator.get("slowdown", 1.0)),
            "service": str(simulator.get("service", SERVICE_EXPONENTIAL)),
            "arrival_rates": [float(r) for r in simulator.get("arrival_rates", [0.05, 0.05])],
            "ensemble_rate": float(simulator.get("ensemble_rate", 0.0)),
            "horizon": float(simulator.get("horizon", 10000.0)),
            "policies": list(simulator.get("policies", ["uncoded", "coded-recovery"])),
            "method": str(simulator.get("method", "coin")),
        }
        _require(resolved_sim["service"] in (SERVICE_EXPONENTIAL, SERVICE_DETERMINISTIC),
                 "simulator.service must be exponential or deterministic")
        _require(len(resolved_sim["arrival_rates"]) == 2,
                 "simulator.arrival_rates must list one rate per expert")
        _require(resolved_sim["method"] in METHODS, "simulator.method unknown")
        for p in resolved_sim["policies"]:
            _require(p in ("uncoded", "coded-recovery"), f"unknown policy {p!r}")

    resolved = {
        "scenario": resolved_scenario,
        "network": {"layer_dims": list(spec.layer_dims), "activation": activation},
        "betas": [float(b) for b in betas],
        "methods": list(methods),
        "seeds": seeds,
        "penalty_grid": penalty_grid,
        "alpha_grid": alpha_grid,
        "tune_criterion": tune_criterion,
        "ablate_p": ablate_p,
        "train": train,
        "distill_train": distill_train,
        "base_epochs": base_epochs,
        "output_dir": str(raw.get("output_dir", "runs/out")),
    }
    if resolved_sim is not None:
        resolved["simulator"] = resolved_sim

    return ExperimentConfig(resolved, config_sha256(resolved), spec, weights)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return resolve(raw)


def mix_seed(*parts) -> int:
    """Stable integer seed from heterogeneous parts (ints and tags)."""
    ints = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0])
