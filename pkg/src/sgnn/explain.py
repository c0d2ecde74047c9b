"""Global mask relevance and class-specific gradient-times-input saliency.

The global view reads the learned edge mask directly; the class view
multiplies logit gradients with the original (pre-gating) adjacency
channels, fuses both channels, symmetrizes, zeroes the diagonal, and
aggregates node relevance as weighted degree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import InvariantError
from .graphs import GraphDataset, SignedGraph
from .model import ModelParams, forward
from .numerics import Matrix
from .training import logit_input_gradients


@dataclass
class RelevanceMap:
    """Edge- and node-level importance, either global or for one class."""

    kind: str  # "global" or "class"
    edge_values: Matrix  # P x P symmetric; class maps have zero diagonal
    node_values: list[float]
    top_edges: list[tuple[int, int, float]]
    class_index: int | None = None

    def validate(self) -> None:
        p = self.edge_values.rows
        if not self.edge_values.is_symmetric(tol=0.0):
            raise InvariantError("edge_values must be symmetric")
        if len(self.node_values) != p:
            raise InvariantError("node_values length differs from parcel count")
        sums = self.edge_values.row_sums()
        for i, (have, want) in enumerate(zip(self.node_values, sums)):
            if abs(have - want) > 1e-10:
                raise InvariantError(f"node relevance {i} drifted from edge sums")
        if self.kind == "class":
            for i in range(p):
                if self.edge_values[i, i] != 0.0:
                    raise InvariantError("class map diagonal must be zero")
            if any(v < 0 for v in self.node_values):
                raise InvariantError("class relevance must be nonnegative")
        seen = set()
        for i, j, _ in self.top_edges:
            if not i < j:
                raise InvariantError(f"top edge ({i}, {j}) not in upper triangle")
            if (i, j) in seen:
                raise InvariantError(f"duplicate top edge ({i}, {j})")
            seen.add((i, j))


def _upper_triangle(values: Matrix) -> list[tuple[int, int, float]]:
    p = values.rows
    return [
        (i, j, values[i, j]) for i in range(p) for j in range(i + 1, p)
    ]


def _ranked_edges(values: Matrix) -> list[tuple[int, int, float]]:
    """All upper-triangle edges, best first; ties broken by (i, j)."""
    return sorted(_upper_triangle(values), key=lambda e: (-e[2], e[0], e[1]))


def topk_edges(rmap: RelevanceMap, k: int) -> list[tuple[int, int, float]]:
    """The k largest upper-triangle edges of a relevance map."""
    p = rmap.edge_values.rows
    limit = p * (p - 1) // 2
    if k > limit:
        raise ValueError(f"k={k} exceeds the {limit} undirected edges of P={p}")
    return _ranked_edges(rmap.edge_values)[:k]


def _zero_diagonal(m: Matrix) -> Matrix:
    buf = m._data[:]
    for i in range(m.rows):
        buf[i * m.cols + i] = 0.0
    return Matrix._wrap(m.rows, m.cols, buf)


def global_mask_relevance(m: Matrix, k: int | None = None) -> RelevanceMap:
    """Relevance read directly off the (symmetrized) learned mask."""
    m_sym = m.symmetrize()
    rmap = RelevanceMap(
        kind="global",
        edge_values=m_sym,
        node_values=m_sym.row_sums(),
        top_edges=[],
    )
    rmap.top_edges = _ranked_edges(m_sym)[: k if k is not None else None]
    rmap.validate()
    return rmap


def _saliency_matrix(params: ModelParams, graph: SignedGraph, class_idx: int) -> Matrix:
    """|d f_c / dA+ * A+| + |d f_c / dA- * A-|, symmetrized, zero diagonal."""
    d_plus, d_minus, _ = logit_input_gradients(params, graph, class_idx)
    fused = (d_plus * graph.a_plus).abs() + (d_minus * graph.a_minus).abs()
    return _zero_diagonal(fused.symmetrize())


def _as_class_map(values: Matrix, class_idx: int, k: int | None) -> RelevanceMap:
    rmap = RelevanceMap(
        kind="class",
        edge_values=values,
        node_values=values.row_sums(),
        top_edges=[],
        class_index=class_idx,
    )
    rmap.top_edges = _ranked_edges(values)[: k if k is not None else None]
    rmap.validate()
    return rmap


def class_saliency(
    params: ModelParams, graph: SignedGraph, class_idx: int, k: int | None = None
) -> RelevanceMap:
    """Gradient-times-input saliency of one class logit for one graph."""
    return _as_class_map(_saliency_matrix(params, graph, class_idx), class_idx, k)


def aggregate_class_saliency(
    params: ModelParams,
    dataset: GraphDataset,
    class_idx: int,
    split: str = "test",
    only_correct: bool = True,
    k: int | None = None,
) -> RelevanceMap:
    """Mean per-graph saliency over (correctly classified) graphs of a class."""
    graphs = [g for g in dataset.by_split(split) if g.label == class_idx]
    if only_correct:
        kept = []
        for g in graphs:
            probs = forward(g, params).probs
            pred = max(range(len(probs)), key=lambda i: (probs[i], -i))
            if pred == g.label:
                kept.append(g)
        graphs = kept
    if not graphs:
        raise ValueError(
            f"no {'correctly classified ' if only_correct else ''}{split} "
            f"graphs for class {class_idx}"
        )
    total = _saliency_matrix(params, graphs[0], class_idx)
    for g in graphs[1:]:
        total = total + _saliency_matrix(params, g, class_idx)
    return _as_class_map(total * (1.0 / len(graphs)), class_idx, k)


def consistency(maps: list[list[float]]) -> tuple[Matrix, float]:
    """Pairwise Pearson correlation of node-relevance vectors across subjects.

    A constant vector has undefined correlation; every pair involving one is
    reported as 0. Returns the full matrix and the mean upper-triangle value.
    """
    n = len(maps)
    if n < 2:
        raise ValueError("consistency needs at least two maps")
    p = len(maps[0])
    if any(len(m) != p for m in maps):
        raise ValueError("all relevance maps must have equal length")

    means = [sum(m) / p for m in maps]
    stds = []
    for m, mu in zip(maps, means):
        var = sum((x - mu) ** 2 for x in m) / p
        stds.append(var**0.5)

    buf = [0.0] * (n * n)
    for a in range(n):
        for b in range(n):
            if stds[a] == 0.0 or stds[b] == 0.0:
                r = 0.0
            elif maps[a] == maps[b]:
                r = 1.0  # exact, avoids sqrt rounding on the diagonal
            else:
                cov = (
                    sum(
                        (maps[a][i] - means[a]) * (maps[b][i] - means[b])
                        for i in range(p)
                    )
                    / p
                )
                r = cov / (stds[a] * stds[b])
                r = min(1.0, max(-1.0, r))
            buf[a * n + b] = r
    corr = Matrix(n, n, buf)
    off = [corr[a, b] for a in range(n) for b in range(a + 1, n)]
    return corr, sum(off) / len(off)


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------

def save_edge_csv(rmap: RelevanceMap, path: str | Path) -> None:
    """Top-k edges as rows (i, j, value)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "value"])
        for i, j, value in rmap.top_edges:
            writer.writerow([i, j, repr(value)])


def save_node_csv(
    rmap: RelevanceMap, path: str | Path, parcel_names: dict[int, str] | None = None
) -> None:
    names = parcel_names or {}
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_index", "parcel_name", "value"])
        for idx, value in enumerate(rmap.node_values):
            writer.writerow([idx, names.get(idx, ""), repr(value)])
