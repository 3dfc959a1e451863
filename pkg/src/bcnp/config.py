"""Experiment configuration: named presets, YAML loading with preset
inheritance, and dict round-trips for every config dataclass.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import yaml

from .datagen import GeneratorConfig, GeneratorTag
from .errors import ValidationError
from .graphs import GraphDistributionSpec, GraphFamily
from .model import ModelConfig
from .sinkhorn import GumbelSinkhornConfig
from .training import TrainConfig


@dataclass(frozen=True)
class EvalConfig:
    posterior_samples: int = 500
    test_count: int = 100
    seed: int = 1000
    log_prob_eps: float = 1e-8

    def __post_init__(self):
        if self.posterior_samples < 1 or self.test_count < 1:
            raise ValidationError("posterior_samples and test_count must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig = field(default_factory=EvalConfig)
    corpus_count: int = 1000
    master_seed: int = 0

    def __post_init__(self):
        if self.corpus_count < 1:
            raise ValidationError("corpus_count must be >= 1")


# Named presets.  "desk" is sized for CPU-scale runs; "two-var-paper" mirrors
# the full-scale two-variable training recipe (reduce nothing, expect
# accelerator budgets).
PRESETS: dict[str, dict] = {
    "desk": {
        "generator": {"tag": "two_var_linear", "num_samples": 250},
        "model": {
            "hidden_width": 64,
            "encoder_blocks": 2,
            "decoder_layers_theta": 2,
            "decoder_layers_phi": 2,
            "num_heads": 4,
            "ffn_width": 128,
        },
        "train": {
            "learning_rate": 1.2e-3,
            "warmup_fraction": 0.10,
            "batch_size": 64,
            "epochs": 8,
            "permutation_samples": 64,
            "prob_clamp": 1e-7,
            "gs": {"max_iterations": 300, "convergence_tol": 1e-3},
            "log_every": 25,
        },
        "eval": {"posterior_samples": 500, "test_count": 100},
        "corpus_count": 20000,
    },
    "two-var-paper": {
        "generator": {"tag": "two_var_linear", "num_samples": 1000},
        "model": {
            "hidden_width": 512,
            "encoder_blocks": 2,
            "decoder_layers_theta": 2,
            "decoder_layers_phi": 2,
            "num_heads": 8,
            "ffn_width": 1024,
        },
        "train": {
            "learning_rate": 1e-4,
            "warmup_fraction": 0.10,
            "batch_size": 64,
            "epochs": 2,
            "permutation_samples": 100,
            "prob_clamp": 1e-7,
            "gs": {"max_iterations": 1000, "convergence_tol": 1e-6},
            "log_every": 100,
        },
        "eval": {"posterior_samples": 500, "test_count": 100},
        "corpus_count": 200000,
    },
}


def _check_keys(section: str, data: dict, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {section} keys: {sorted(unknown)}")


def graph_spec_from_dict(data: dict) -> GraphDistributionSpec:
    _check_keys(
        "graph", data, {"family", "num_nodes", "expected_edges", "edges_per_node", "seed"}
    )
    family = GraphFamily(data["family"])
    return GraphDistributionSpec(
        family=family,
        num_nodes=int(data["num_nodes"]),
        expected_edges=data.get("expected_edges"),
        edges_per_node=data.get("edges_per_node"),
        seed=int(data.get("seed", 0)),
    )


def graph_spec_to_dict(spec: GraphDistributionSpec | None) -> dict | None:
    if spec is None:
        return None
    d = asdict(spec)
    d["family"] = spec.family.value
    return d


_GENERATOR_KEYS = {
    "tag", "num_samples", "graph", "weight_std", "noise_gamma_shape",
    "noise_gamma_rate", "nn_width", "nn_layers", "leaky_slope",
    "gp_gamma_range", "gp_lambda_logmean", "gp_lambda_logstd", "gp_noise_gamma",
    "bcm_weight_std", "bcm_noise_std", "standardize",
}


def generator_config_from_dict(data: dict) -> GeneratorConfig:
    _check_keys("generator", data, _GENERATOR_KEYS)
    data = dict(data)
    tag = GeneratorTag(data.pop("tag"))
    graph = data.pop("graph", None)
    spec = graph_spec_from_dict(graph) if graph else None
    for tuple_key in ("gp_gamma_range", "gp_noise_gamma"):
        if tuple_key in data:
            data[tuple_key] = tuple(data[tuple_key])
    if tag is GeneratorTag.CONJUGATE_LINEAR and "standardize" not in data:
        data["standardize"] = False
    return GeneratorConfig(generator_tag=tag, graph_spec=spec, **data)


def generator_config_to_dict(config: GeneratorConfig) -> dict:
    d = asdict(config)
    d.pop("generator_tag")
    d.pop("graph_spec")
    d["tag"] = config.generator_tag.value
    d["graph"] = graph_spec_to_dict(config.graph_spec)
    d["gp_gamma_range"] = list(config.gp_gamma_range)
    d["gp_noise_gamma"] = list(config.gp_noise_gamma)
    return d


def _gs_from_dict(data: dict) -> GumbelSinkhornConfig:
    _check_keys(
        "gs", data, {"temperature", "max_iterations", "convergence_tol", "noise_scale"}
    )
    return GumbelSinkhornConfig(**data)


def model_config_from_dict(data: dict) -> ModelConfig:
    _check_keys(
        "model", data,
        {"hidden_width", "encoder_blocks", "decoder_layers_theta",
         "decoder_layers_phi", "num_heads", "ffn_width", "gs"},
    )
    data = dict(data)
    gs = data.pop("gs", None)
    return ModelConfig(gs=_gs_from_dict(gs) if gs else GumbelSinkhornConfig(), **data)


def train_config_from_dict(data: dict) -> TrainConfig:
    _check_keys(
        "train", data,
        {"learning_rate", "warmup_fraction", "batch_size", "epochs",
         "permutation_samples", "prob_clamp", "gs", "seed", "log_every",
         "checkpoint_every"},
    )
    data = dict(data)
    gs = data.pop("gs", None)
    return TrainConfig(gs=_gs_from_dict(gs) if gs else GumbelSinkhornConfig(), **data)


def eval_config_from_dict(data: dict) -> EvalConfig:
    _check_keys(
        "eval", data, {"posterior_samples", "test_count", "seed", "log_prob_eps"}
    )
    return EvalConfig(**data)


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    data = copy.deepcopy(data)
    preset_name = data.pop("preset", None)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ValidationError(
                f"unknown preset {preset_name!r}; available: {sorted(PRESETS)}"
            )
        data = _deep_merge(PRESETS[preset_name], data)
    _check_keys(
        "experiment", data,
        {"generator", "model", "train", "eval", "corpus_count", "master_seed"},
    )
    if "generator" not in data:
        raise ValidationError("experiment config needs a generator section")
    return ExperimentConfig(
        generator=generator_config_from_dict(data["generator"]),
        model=model_config_from_dict(data.get("model", {})),
        train=train_config_from_dict(data.get("train", {})),
        eval=eval_config_from_dict(data.get("eval", {})),
        corpus_count=int(data.get("corpus_count", 1000)),
        master_seed=int(data.get("master_seed", 0)),
    )


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValidationError(f"config file {path} must contain a mapping")
    return experiment_config_from_dict(data)


def preset_config(name: str, **overrides) -> ExperimentConfig:
    """Build an ExperimentConfig from a named preset plus overrides (nested
    dicts merge)."""
    return experiment_config_from_dict(_deep_merge({"preset": name}, overrides))
