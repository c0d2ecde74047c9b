"""One strict JSON configuration governing every pipeline run.

Unknown keys are rejected with their dotted path, every field has a
documented default, and the resolved document is hashed so run artifacts
can be traced back to the exact configuration that produced them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, MissingInputError
from .model import ModelDims, config_sha256
from .synth import SynthConfig
from .training import TrainConfig


@dataclass
class PathsConfig:
    annotations: str | None = None
    lexicon: str | None = None
    manifest: str | None = None
    labels: str | None = None
    graphs: str | None = None
    checkpoint: str | None = None
    ground_truth: str | None = None
    parcel_names: str | None = None
    output_dir: str = "runs"


@dataclass
class SplitRatiosConfig:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1


@dataclass
class ModelConfig:
    d1: int = 64
    d2: int = 64
    d_hidden: int = 32


@dataclass
class LossSection:
    label_smoothing: float = 0.1
    lambda_sparsity: float = 1e-3
    lambda_binary: float = 1e-3
    class_weight_mode: str = "inverse_frequency"


@dataclass
class OptimizerSection:
    lr: float = 3e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainingSection:
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10


@dataclass
class ExplainSection:
    top_k: int = 100


@dataclass
class SynthSection:
    num_parcels: int = 30
    timepoints: int = 40
    num_classes: int = 3
    edges_per_class: int = 10
    negative_edges_per_class: int = 0
    rho: float = 0.7
    noise_std: float = 1.0
    train_blocks: int = 60
    val_blocks: int = 20
    test_blocks: int = 20


@dataclass
class RunConfig:
    seed: int = 0
    block_size: int = 5
    alpha: dict[str, float] = field(default_factory=dict)
    paths: PathsConfig = field(default_factory=PathsConfig)
    split_ratios: SplitRatiosConfig = field(default_factory=SplitRatiosConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    explain: ExplainSection = field(default_factory=ExplainSection)
    synth: SynthSection = field(default_factory=SynthSection)

    # -- derived views ------------------------------------------------

    def ratios(self) -> tuple[float, float, float]:
        return (self.split_ratios.train, self.split_ratios.val, self.split_ratios.test)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            dims=ModelDims(
                d1=self.model.d1, d2=self.model.d2, d_hidden=self.model.d_hidden
            ),
            label_smoothing=self.loss.label_smoothing,
            lambda_sparsity=self.loss.lambda_sparsity,
            lambda_binary=self.loss.lambda_binary,
            class_weight_mode=self.loss.class_weight_mode,
            lr=self.optimizer.lr,
            weight_decay=self.optimizer.weight_decay,
            beta1=self.optimizer.beta1,
            beta2=self.optimizer.beta2,
            eps=self.optimizer.eps,
            batch_size=self.training.batch_size,
            max_epochs=self.training.max_epochs,
            patience=self.training.patience,
            seed=self.seed,
        )

    def synth_config(self) -> SynthConfig:
        s = self.synth
        base = SynthConfig(
            num_parcels=s.num_parcels,
            timepoints=s.timepoints,
            block_size=self.block_size,
            num_classes=s.num_classes,
            rho=s.rho,
            noise_std=s.noise_std,
            train_blocks=s.train_blocks,
            val_blocks=s.val_blocks,
            test_blocks=s.test_blocks,
            seed=self.seed,
        )
        if s.edges_per_class or s.negative_edges_per_class:
            from .numerics import RngStream
            from .synth import planted_edges_for

            pos, neg = planted_edges_for(
                s.num_parcels,
                s.num_classes,
                s.edges_per_class,
                s.negative_edges_per_class,
                RngStream(self.seed).child("plant"),
            )
            base.positive_edges = pos
            base.negative_edges = neg
        return base

    def to_doc(self) -> dict:
        """Fully resolved configuration document (defaults filled in)."""
        return {
            "seed": self.seed,
            "block_size": self.block_size,
            "alpha": dict(self.alpha),
            "paths": _section_doc(self.paths),
            "split_ratios": _section_doc(self.split_ratios),
            "model": _section_doc(self.model),
            "loss": _section_doc(self.loss),
            "optimizer": _section_doc(self.optimizer),
            "training": _section_doc(self.training),
            "explain": _section_doc(self.explain),
            "synth": _section_doc(self.synth),
        }

    def hash(self) -> str:
        """Hash of the semantic configuration.

        The paths section is excluded: it locates inputs and outputs but does
        not affect what is computed, and two reruns of one experiment in
        different directories must agree on their hash.
        """
        doc = self.to_doc()
        del doc["paths"]
        return config_sha256(doc)


def _section_doc(section) -> dict:
    return {f.name: getattr(section, f.name) for f in fields(section)}


# ---------------------------------------------------------------------------
# strict parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "paths": PathsConfig,
    "split_ratios": SplitRatiosConfig,
    "model": ModelConfig,
    "loss": LossSection,
    "optimizer": OptimizerSection,
    "training": TrainingSection,
    "explain": ExplainSection,
    "synth": SynthSection,
}


def _coerce(path: str, value, annotation):
    if annotation in ("int",):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation in ("float",):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation in ("str",):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if annotation in ("str | None",):
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string or null, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {annotation}")


def _parse_section(name: str, cls, doc: dict):
    known = {f.name: f for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown config key: {name}.{key}")
    kwargs = {}
    for key, value in doc.items():
        kwargs[key] = _coerce(f"{name}.{key}", value, known[key].type)
    return cls(**kwargs)


def parse_config(doc: dict) -> RunConfig:
    """Build a validated RunConfig from a (possibly partial) JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = RunConfig()
    for key, value in doc.items():
        if key == "seed":
            cfg.seed = _coerce("seed", value, "int")
        elif key == "block_size":
            cfg.block_size = _coerce("block_size", value, "int")
        elif key == "alpha":
            if not isinstance(value, dict):
                raise ConfigError("alpha: expected an object of category -> weight")
            cfg.alpha = {
                str(k): _coerce(f"alpha.{k}", v, "float") for k, v in value.items()
            }
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            setattr(cfg, key, _parse_section(key, _SECTIONS[key], value))
        else:
            raise ConfigError(f"unknown config key: {key}")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    checks = [
        (cfg.seed >= 0, "seed", "must be nonnegative"),
        (cfg.block_size >= 1, "block_size", "must be at least 1"),
        (cfg.model.d1 >= 1, "model.d1", "must be at least 1"),
        (cfg.model.d2 >= 1, "model.d2", "must be at least 1"),
        (cfg.model.d_hidden >= 1, "model.d_hidden", "must be at least 1"),
        (
            0.0 <= cfg.loss.label_smoothing < 1.0,
            "loss.label_smoothing",
            "must lie in [0, 1)",
        ),
        (cfg.loss.lambda_sparsity >= 0, "loss.lambda_sparsity", "must be nonnegative"),
        (cfg.loss.lambda_binary >= 0, "loss.lambda_binary", "must be nonnegative"),
        (
            cfg.loss.class_weight_mode in ("inverse_frequency", "uniform"),
            "loss.class_weight_mode",
            "must be 'inverse_frequency' or 'uniform'",
        ),
        (cfg.optimizer.lr > 0, "optimizer.lr", "must be positive"),
        (cfg.optimizer.weight_decay >= 0, "optimizer.weight_decay", "must be nonnegative"),
        (0 <= cfg.optimizer.beta1 < 1, "optimizer.beta1", "must lie in [0, 1)"),
        (0 <= cfg.optimizer.beta2 < 1, "optimizer.beta2", "must lie in [0, 1)"),
        (cfg.optimizer.eps > 0, "optimizer.eps", "must be positive"),
        (cfg.training.batch_size >= 1, "training.batch_size", "must be at least 1"),
        (cfg.training.max_epochs >= 1, "training.max_epochs", "must be at least 1"),
        (cfg.training.patience >= 0, "training.patience", "must be nonnegative"),
        (cfg.explain.top_k >= 1, "explain.top_k", "must be at least 1"),
        (0.0 <= cfg.synth.rho < 1.0, "synth.rho", "must lie in [0, 1)"),
        (cfg.synth.noise_std >= 0, "synth.noise_std", "must be nonnegative"),
    ]
    for ok, name, message in checks:
        if not ok:
            raise ConfigError(f"{name}: {message}")
    for name in ("train", "val", "test"):
        if getattr(cfg.split_ratios, name) <= 0:
            raise ConfigError(f"split_ratios.{name}: must be positive")
    total = sum(cfg.ratios())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split_ratios: must sum to 1, got {total}")
    for cat, a in cfg.alpha.items():
        if not 0.0 <= a <= 1.0:
            raise ConfigError(f"alpha.{cat}: must lie in [0, 1]")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


# ---------------------------------------------------------------------------
# --help reference
# ---------------------------------------------------------------------------

_DESCRIPTIONS = {
    "seed": "master RNG seed for every stage",
    "block_size": "trials concatenated per connectivity block (K)",
    "alpha": "per-category text-vs-mask fusion weight overrides",
    "paths.annotations": "annotations.json for fuse-labels",
    "paths.lexicon": "lexicon.json (category terms and default alphas)",
    "paths.manifest": "time-series manifest.json for build-graphs/train",
    "paths.labels": "labels.json produced by fuse-labels or synth",
    "paths.graphs": "graphs.bin dataset file",
    "paths.checkpoint": "model checkpoint file",
    "paths.ground_truth": "ground_truth.json from synth",
    "paths.parcel_names": "optional JSON mapping parcel index -> atlas name",
    "paths.output_dir": "directory that receives timestamped run directories",
    "split_ratios.train": "train fraction of image ids",
    "split_ratios.val": "validation fraction of image ids",
    "split_ratios.test": "test fraction of image ids",
    "model.d1": "width of the first signed convolution",
    "model.d2": "width of the second signed convolution",
    "model.d_hidden": "width of the MLP hidden layer",
    "loss.label_smoothing": "cross-entropy label smoothing",
    "loss.lambda_sparsity": "L1 pressure on the edge mask",
    "loss.lambda_binary": "near-binary pressure on the edge mask",
    "loss.class_weight_mode": "'inverse_frequency' or 'uniform'",
    "optimizer.lr": "AdamW learning rate",
    "optimizer.weight_decay": "decoupled weight decay (weights only)",
    "optimizer.beta1": "AdamW first-moment coefficient",
    "optimizer.beta2": "AdamW second-moment coefficient",
    "optimizer.eps": "AdamW denominator epsilon",
    "training.batch_size": "minibatch size",
    "training.max_epochs": "hard epoch cap",
    "training.patience": "early-stopping patience in epochs",
    "explain.top_k": "edges kept in relevance CSVs",
    "synth.num_parcels": "parcel count of the synthetic harness",
    "synth.timepoints": "timepoints per synthetic trial",
    "synth.num_classes": "number of synthetic classes",
    "synth.edges_per_class": "planted positively coupled edges per class",
    "synth.negative_edges_per_class": "planted anti-coupled edges per class",
    "synth.rho": "population correlation of planted edges",
    "synth.noise_std": "amplitude of background (unplanted) parcels",
    "synth.train_blocks": "training blocks per class",
    "synth.val_blocks": "validation blocks per class",
    "synth.test_blocks": "test blocks per class",
}


def config_reference() -> str:
    """Human-readable table of every config field and its default."""
    defaults = RunConfig().to_doc()
    lines = ["configuration fields (JSON, all optional):"]
    for dotted, desc in _DESCRIPTIONS.items():
        node = defaults
        for part in dotted.split("."):
            node = node[part] if isinstance(node, dict) else node
        default = json.dumps(node) if not isinstance(node, dict) else "{}"
        lines.append(f"  {dotted:<32} default {default:<10} {desc}")
    return "\n".join(lines)
