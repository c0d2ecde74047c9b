"""Synthetic category-conditioned time series with planted subnetworks.

Each class plants correlated parcel pairs through a shared latent factor:
with mixing sqrt(rho) against sqrt(1-rho) idiosyncratic noise the population
correlation of a planted pair is exactly rho (anti-coupled pairs negate one
endpoint). That analytic ground truth is what the acceptance thresholds for
classification and explanation recovery are derived from.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, MissingInputError
from .graphs import GraphDataset, TrialTimeSeries, assemble_dataset
from .labels import LabelSet, ScoredImage, split_images
from .numerics import Matrix, RngStream
from . import _kernels as K

Edge = tuple[int, int]


@dataclass
class SynthConfig:
    num_parcels: int = 30
    timepoints: int = 40
    block_size: int = 5
    num_classes: int = 3
    positive_edges: list[list[Edge]] = field(default_factory=list)  # per class
    negative_edges: list[list[Edge]] = field(default_factory=list)
    rho: float = 0.7
    noise_std: float = 1.0
    train_blocks: int = 60
    val_blocks: int = 20
    test_blocks: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.positive_edges:
            self.positive_edges = [[] for _ in range(self.num_classes)]
        if not self.negative_edges:
            self.negative_edges = [[] for _ in range(self.num_classes)]
        if len(self.positive_edges) != self.num_classes:
            raise ValueError("positive_edges needs one list per class")
        if len(self.negative_edges) != self.num_classes:
            raise ValueError("negative_edges needs one list per class")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if min(self.train_blocks, self.val_blocks, self.test_blocks) < 1:
            raise ValueError("every split needs at least one block per class")
        p = self.num_parcels
        for c in range(self.num_classes):
            pos = {self._norm(e) for e in self.positive_edges[c]}
            neg = {self._norm(e) for e in self.negative_edges[c]}
            for i, j in pos | neg:
                if not (0 <= i < j < p):
                    raise ValueError(
                        f"class {c}: edge ({i}, {j}) is not a valid "
                        f"upper-triangle pair for P={p}"
                    )
            clash = pos & neg
            if clash:
                raise ValueError(
                    f"class {c}: edges {sorted(clash)} requested both "
                    "positive and negative"
                )

    @staticmethod
    def _norm(edge: Edge) -> Edge:
        i, j = edge
        return (i, j) if i < j else (j, i)

    @property
    def trials_per_class(self) -> int:
        return (
            self.train_blocks + self.val_blocks + self.test_blocks
        ) * self.block_size

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        total = self.train_blocks + self.val_blocks + self.test_blocks
        return (
            self.train_blocks / total,
            self.val_blocks / total,
            self.test_blocks / total,
        )


@dataclass
class GroundTruth:
    positive_edges: list[list[Edge]]  # per class, normalized (i < j)
    negative_edges: list[list[Edge]]

    def planted(self, class_idx: int) -> set[Edge]:
        return set(self.positive_edges[class_idx]) | set(
            self.negative_edges[class_idx]
        )


def planted_edges_for(
    num_parcels: int,
    num_classes: int,
    edges_per_class: int,
    negative_per_class: int,
    rng: RngStream,
) -> tuple[list[list[Edge]], list[list[Edge]]]:
    """Deterministic vertex-disjoint edge sets, disjoint across classes.

    Vertex-disjointness within a class keeps every planted correlation at
    exactly rho (shared endpoints would dilute it).
    """
    per_class = edges_per_class + negative_per_class
    if 2 * per_class > num_parcels:
        raise ValueError(
            f"{per_class} vertex-disjoint edges need {2 * per_class} parcels, "
            f"only {num_parcels} available"
        )
    used: set[Edge] = set()
    positives: list[list[Edge]] = []
    negatives: list[list[Edge]] = []
    for c in range(num_classes):
        for attempt in range(100):
            parcels = list(range(num_parcels))
            rng.child(f"edges_{c}_{attempt}").shuffle(parcels)
            pairs = [
                SynthConfig._norm((parcels[2 * t], parcels[2 * t + 1]))
                for t in range(per_class)
            ]
            if not used.intersection(pairs):
                break
        else:
            raise ValueError("could not find class-disjoint planted edges")
        used.update(pairs)
        positives.append(sorted(pairs[:edges_per_class]))
        negatives.append(sorted(pairs[edges_per_class:]))
    return positives, negatives


def default_harness_config(seed: int = 0, **overrides) -> SynthConfig:
    """The desk-scale verification harness: P=30, C=3, rho=0.7, disjoint
    10-edge subnetworks, 60/20/20 blocks per class at K=5, T=40."""
    cfg = SynthConfig(seed=seed, **overrides)
    if not any(cfg.positive_edges) and not any(cfg.negative_edges):
        pos, neg = planted_edges_for(
            cfg.num_parcels, cfg.num_classes, 10, 0, RngStream(seed).child("plant")
        )
        cfg.positive_edges = pos
        cfg.negative_edges = neg
    return cfg


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _trial_matrix(cfg: SynthConfig, class_idx: int, trial_rng: RngStream) -> Matrix:
    p, t = cfg.num_parcels, cfg.timepoints
    data = trial_rng.normals(p * t)
    edges = [(e, +1.0) for e in cfg.positive_edges[class_idx]] + [
        (e, -1.0) for e in cfg.negative_edges[class_idx]
    ]

    incident: dict[int, list[tuple[int, float]]] = {}
    for edge_idx, ((i, j), sign) in enumerate(edges):
        incident.setdefault(i, []).append((edge_idx, 1.0))
        incident.setdefault(j, []).append((edge_idx, sign))

    latents = [trial_rng.normals(t) for _ in edges] if edges else []

    view = memoryview(data)
    own_scale = math.sqrt(1.0 - cfg.rho)
    for parcel in range(p):
        row = view[parcel * t : (parcel + 1) * t]
        hits = incident.get(parcel)
        if not hits:
            if cfg.noise_std != 1.0:
                K.scale(row, cfg.noise_std, row, t)
            continue
        K.scale(row, own_scale, row, t)
        coupling = math.sqrt(cfg.rho / len(hits))
        for edge_idx, sign in hits:
            K.lin2(row, latents[edge_idx], 1.0, sign * coupling, row, t)
    return Matrix._wrap(p, t, data)


def generate(cfg: SynthConfig) -> tuple[list[TrialTimeSeries], GroundTruth]:
    """All trials for every class, plus the planted-edge ground truth.

    Per-trial RNG streams are derived from (seed, class, index), so the
    output is identical however generation is scheduled.
    """
    rng = RngStream(cfg.seed)
    trials = []
    order = 0
    for c in range(cfg.num_classes):
        for i in range(cfg.trials_per_class):
            trial_rng = rng.child(f"trial_{c}_{i}")
            trials.append(
                TrialTimeSeries(
                    subject_id="synth",
                    trial_id=f"t{c}_{i:05d}",
                    image_id=f"img_{c}_{i:05d}",
                    data=_trial_matrix(cfg, c, trial_rng),
                    order=order,
                )
            )
            order += 1
    truth = GroundTruth(
        positive_edges=[sorted(map(SynthConfig._norm, e)) for e in cfg.positive_edges],
        negative_edges=[sorted(map(SynthConfig._norm, e)) for e in cfg.negative_edges],
    )
    return trials, truth


def build_synth_labels(cfg: SynthConfig) -> LabelSet:
    """labels.json content for the harness.

    Every image scores 0.1 for its own class (duplication count 1) and the
    split is assigned per class, which pins the per-class block counts to
    exactly the configured values.
    """
    rng = RngStream(cfg.seed)
    categories = [f"class_{c}" for c in range(cfg.num_classes)]
    images: list[ScoredImage] = []
    splits: dict[str, str] = {}
    for c in range(cfg.num_classes):
        ids = [f"img_{c}_{i:05d}" for i in range(cfg.trials_per_class)]
        splits.update(split_images(ids, cfg.split_ratios, rng.child(f"split_{c}")))
        for image_id in ids:
            score = {cat: (0.1 if k == c else 0.0) for k, cat in enumerate(categories)}
            images.append(
                ScoredImage(
                    image_id=image_id,
                    mask_evidence=dict(score),
                    text_evidence=dict(score),
                    score=dict(score),
                    duplication={cat: (1 if k == c else 0) for k, cat in enumerate(categories)},
                )
            )
    labels = LabelSet(
        categories=categories,
        alpha={cat: 0.5 for cat in categories},
        images=images,
        splits=splits,
    )
    labels.check_leakage_free()
    return labels


def synth_dataset(cfg: SynthConfig) -> tuple[GraphDataset, GroundTruth, LabelSet]:
    """generate -> label -> assemble, all from one seed."""
    trials, truth = generate(cfg)
    labels = build_synth_labels(cfg)
    dataset = assemble_dataset(
        trials, labels, cfg.block_size, RngStream(cfg.seed).child("balance")
    )
    return dataset, truth, labels


# ---------------------------------------------------------------------------
# recovery metric
# ---------------------------------------------------------------------------

def recovery_score(
    top_edges: list, truth: GroundTruth, class_idx: int
) -> tuple[float, float, float]:
    """(precision, recall, jaccard) of a top-k edge list against the plant."""
    top = {SynthConfig._norm((e[0], e[1])) for e in top_edges}
    planted = truth.planted(class_idx)
    if not top or not planted:
        return (0.0, 0.0, 0.0)
    inter = len(top & planted)
    union = len(top | planted)
    return (inter / len(top), inter / len(planted), inter / union)


# ---------------------------------------------------------------------------
# on-disk layout shared with the graphs module
# ---------------------------------------------------------------------------

def write_trials(trials: list[TrialTimeSeries], out_dir: str | Path) -> Path:
    """Write manifest.json plus one CSV per trial; returns the manifest path."""
    out_dir = Path(out_dir)
    trial_dir = out_dir / "trials"
    trial_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for trial in trials:
        rel = f"trials/{trial.trial_id}.csv"
        with (out_dir / rel).open("w", newline="") as fh:
            writer = csv.writer(fh)
            for row in trial.data.to_rows():
                writer.writerow([repr(v) for v in row])
        entries.append(
            {
                "trial_id": trial.trial_id,
                "subject_id": trial.subject_id,
                "image_id": trial.image_id,
                "path": rel,
                "order": trial.order,
            }
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps({"trials": entries}, indent=2, sort_keys=True) + "\n"
    )
    return manifest_path


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    doc = {
        "classes": [
            {
                "class_index": c,
                "positive_edges": [list(e) for e in truth.positive_edges[c]],
                "negative_edges": [list(e) for e in truth.negative_edges[c]],
            }
            for c in range(len(truth.positive_edges))
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_ground_truth(path: str | Path) -> GroundTruth:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"ground truth file not found: {path}")
    try:
        doc = json.loads(path.read_text())
        classes = sorted(doc["classes"], key=lambda c: c["class_index"])
        return GroundTruth(
            positive_edges=[
                [tuple(e) for e in c["positive_edges"]] for c in classes
            ],
            negative_edges=[
                [tuple(e) for e in c["negative_edges"]] for c in classes
            ],
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"ground truth file {path} is malformed: {exc}") from exc
