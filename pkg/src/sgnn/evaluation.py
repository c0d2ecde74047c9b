"""Classification metrics and pooled-embedding export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .graphs import GraphDataset, SignedGraph
from .model import ModelParams, forward


def _argmax(scores: list[float]) -> int:
    """Index of the maximum; ties go to the lowest index."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


@dataclass
class PredictionSet:
    """True labels, argmax predictions, and full score vectors per graph."""

    labels: list[int]
    scores: list[list[float]]  # each row is a probability vector

    def __post_init__(self):
        if len(self.labels) != len(self.scores):
            raise ValueError("labels and scores differ in length")
        self.predicted = [_argmax(s) for s in self.scores]

    @classmethod
    def from_model(
        cls, params: ModelParams, graphs: list[SignedGraph]
    ) -> "PredictionSet":
        labels, scores = [], []
        for g in graphs:
            labels.append(g.label)
            scores.append(forward(g, params).probs)
        return cls(labels=labels, scores=scores)


def accuracy(preds: PredictionSet) -> float:
    if not preds.labels:
        raise ValueError("accuracy over an empty prediction set")
    hits = sum(1 for t, p in zip(preds.labels, preds.predicted) if t == p)
    return hits / len(preds.labels)


def average_precision(scores: list[float], positives: list[int]) -> float:
    """Non-interpolated AP: mean of precision at every positive hit.

    Ranking is by descending score with ties broken by original index
    (stable), which makes the value deterministic.
    """
    if len(scores) != len(positives):
        raise ValueError("scores and positives differ in length")
    n_pos = sum(1 for p in positives if p)
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if positives[idx]:
            hits += 1
            total += hits / rank
    return total / n_pos


def macro_ap(preds: PredictionSet) -> tuple[float, list[float]]:
    """One-vs-rest AP per class (score = that class's probability) and mean."""
    if not preds.labels:
        raise ValueError("macro AP over an empty prediction set")
    num_classes = len(preds.scores[0])
    per_class = []
    for c in range(num_classes):
        positives = [1 if t == c else 0 for t in preds.labels]
        if sum(positives) == 0:
            raise ValueError(f"class {c} has no positives in the evaluation split")
        per_class.append(average_precision([s[c] for s in preds.scores], positives))
    return sum(per_class) / num_classes, per_class


def compute_metrics(
    params: ModelParams,
    dataset: GraphDataset,
    seed: int,
    config_hash: str,
    split: str = "test",
) -> dict:
    """The metrics.json document for one evaluation run."""
    graphs = dataset.by_split(split)
    preds = PredictionSet.from_model(params, graphs)
    macro, per_class = macro_ap(preds)
    names = dataset.class_names or [f"class_{i}" for i in range(dataset.num_classes)]
    return {
        "accuracy": accuracy(preds),
        "per_class_ap": {name: ap for name, ap in zip(names, per_class)},
        "macro_ap": macro,
        "n_test": len(graphs),
        "seed": seed,
        "config_hash": config_hash,
    }


def save_metrics(metrics: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")


def export_embeddings(params: ModelParams, dataset: GraphDataset, path: str | Path) -> int:
    """Pooled embedding per graph as CSV (graph_id, split, label, g1..gd2).

    Covers every graph in the dataset; rows are in dataset order so the file
    is byte-reproducible. Returns the row count.
    """
    d2 = params.dims.d2
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["graph_id", "split", "label"] + [f"g{i + 1}" for i in range(d2)]
        )
        for idx, g in enumerate(dataset.graphs):
            pooled = forward(g, params).pooled
            writer.writerow(
                [idx, g.split, g.label] + [repr(v) for v in pooled.row(0)]
            )
    return len(dataset.graphs)
