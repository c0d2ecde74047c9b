"""Signed connectivity graphs from parcellated trial time series.

Trials are grouped into fixed-size blocks within (subject, category, split),
concatenated along time, z-scored, correlated, and split into nonnegative
positive/negative channels. Dataset assembly applies the duplication counts
from the labels module and balances the training split by downsampling.
"""

from __future__ import annotations

import csv
import json
import struct
from array import array
from dataclasses import dataclass, field
from pathlib import Path

from . import _kernels as K
from .errors import DataError, InvariantError, MissingInputError, ShapeError
from .labels import SPLITS, LabelSet
from .numerics import Matrix, RngStream, f64_from_le_bytes, f64_to_le_bytes, matmul

GRAPHS_MAGIC = b"SGNN1"
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}

MAX_DUPLICATION = 10  # duplication counts are round(10 * score) <= 10


@dataclass(frozen=True)
class TrialTimeSeries:
    """One trial's parcels-by-timepoints signal plus provenance."""

    subject_id: str
    trial_id: str
    image_id: str
    data: Matrix  # P x T
    order: int = 0  # presentation order within the subject


@dataclass
class SignedGraph:
    """One sample: paired nonnegative adjacency channels plus label."""

    a_plus: Matrix
    a_minus: Matrix
    label: int
    split: str
    image_ids: tuple[str, ...] = ()
    subject_id: str = ""

    def validate(self) -> None:
        """Check every documented type invariant; raise on violation."""
        p = self.a_plus.rows
        if self.a_plus.shape != (p, p) or self.a_minus.shape != (p, p):
            raise InvariantError(
                f"adjacency shapes {self.a_plus.shape} / {self.a_minus.shape} "
                "are not square and equal"
            )
        ap, am = self.a_plus._data, self.a_minus._data
        for idx in range(p * p):
            x, y = ap[idx], am[idx]
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise InvariantError(f"adjacency entry outside [0, 1] at flat index {idx}")
            if x != 0.0 and y != 0.0:
                raise InvariantError(f"channels overlap at flat index {idx}")
        for i in range(p):
            if ap[i * p + i] != 1.0 or am[i * p + i] != 0.0:
                raise InvariantError(f"diagonal convention violated at parcel {i}")
            for j in range(i + 1, p):
                d_ij = ap[i * p + j] - am[i * p + j]
                d_ji = ap[j * p + i] - am[j * p + i]
                if d_ij != d_ji:
                    raise InvariantError(f"a_plus - a_minus asymmetric at ({i}, {j})")
        if self.split not in SPLITS:
            raise InvariantError(f"unknown split {self.split!r}")


@dataclass
class GraphDataset:
    graphs: list[SignedGraph]
    num_parcels: int
    num_classes: int
    class_names: list[str] = field(default_factory=list)

    def by_split(self, split: str) -> list[SignedGraph]:
        return [g for g in self.graphs if g.split == split]

    def class_counts(self, split: str) -> list[int]:
        counts = [0] * self.num_classes
        for g in self.by_split(split):
            counts[g.label] += 1
        return counts

    def validate(self) -> None:
        for g in self.graphs:
            if g.a_plus.rows != self.num_parcels:
                raise InvariantError("graph parcel count differs from dataset")
            if not 0 <= g.label < self.num_classes:
                raise InvariantError(f"label {g.label} outside [0, {self.num_classes})")
            g.validate()
        train_counts = self.class_counts("train")
        if len(set(train_counts)) > 1:
            raise InvariantError(f"training split unbalanced: {train_counts}")
        seen: dict[str, str] = {}
        for g in self.graphs:
            for image_id in g.image_ids:
                prev = seen.setdefault(image_id, g.split)
                if prev != g.split:
                    raise InvariantError(
                        f"image {image_id!r} appears in splits {prev} and {g.split}"
                    )


# ---------------------------------------------------------------------------
# block-level operations
# ---------------------------------------------------------------------------

def block_concat(trials: list[TrialTimeSeries], block_size: int) -> Matrix:
    """Horizontal concatenation of exactly block_size trials, in given order."""
    if len(trials) != block_size:
        raise DataError(
            f"block needs exactly {block_size} trials, got {len(trials)}"
        )
    first = trials[0]
    p, t = first.data.shape
    for trial in trials[1:]:
        if trial.data.shape != (p, t):
            raise ShapeError(
                f"trial {trial.trial_id}: shape {trial.data.shape} differs "
                f"from {first.data.shape} of trial {first.trial_id}"
            )
        if trial.subject_id != first.subject_id:
            raise DataError(
                f"block mixes subjects {first.subject_id!r} and {trial.subject_id!r}"
            )
    out = array("d", bytes(8 * p * block_size * t))
    width = block_size * t
    for k, trial in enumerate(trials):
        src = trial.data._data
        for i in range(p):
            out[i * width + k * t : i * width + (k + 1) * t] = src[i * t : (i + 1) * t]
    return Matrix._wrap(p, width, out)


def zscore_rows(x: Matrix) -> Matrix:
    """Row-wise standardization to mean 0, population std 1.

    Constant rows map to all zeros so zero-variance parcels cannot inject
    NaNs downstream.
    """
    if x.cols < 2:
        raise DataError(f"zscore_rows needs at least 2 columns, got {x.cols}")
    out = array("d", bytes(8 * x.size))
    K.zscore_rows(x._data, out, x.rows, x.cols)
    return Matrix._wrap(x.rows, x.cols, out)


def pearson(x: Matrix) -> Matrix:
    """Correlation matrix of a row-standardized signal.

    With population-std z-scored rows, (1/T) X X^T is exactly the Pearson
    matrix. Entries are clipped to [-1, 1], the diagonal is forced to 1, and
    zero-variance rows (all-zero after z-scoring) yield zero off-diagonals.
    """
    p, t = x.shape
    raw = matmul(x, x.t()) * (1.0 / t)
    buf = array("d", raw._data)
    K.clip(buf, -1.0, 1.0, buf, p * p)
    for i in range(p):
        buf[i * p + i] = 1.0
    return Matrix._wrap(p, p, buf)


def signed_split(a: Matrix) -> tuple[Matrix, Matrix]:
    """Split a signed matrix into nonnegative (positive, negative) channels."""
    n = a.size
    plus = array("d", bytes(8 * n))
    minus = array("d", bytes(8 * n))
    src = a._data
    for i in range(n):
        v = src[i]
        if v > 0.0:
            plus[i] = v
        elif v < 0.0:
            minus[i] = -v
    return (
        Matrix._wrap(a.rows, a.cols, plus),
        Matrix._wrap(a.rows, a.cols, minus),
    )


def connectivity_graph(
    trials: list[TrialTimeSeries],
    block_size: int,
    label: int,
    split: str,
) -> SignedGraph:
    """Full block pipeline: concat -> z-score -> Pearson -> signed split."""
    block = block_concat(trials, block_size)
    corr = pearson(zscore_rows(block))
    a_plus, a_minus = signed_split(corr)
    return SignedGraph(
        a_plus=a_plus,
        a_minus=a_minus,
        label=label,
        split=split,
        image_ids=tuple(sorted({t.image_id for t in trials})),
        subject_id=trials[0].subject_id,
    )


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def expand_trial_sequence(
    trials: list[TrialTimeSeries],
    duplication: dict[str, int],
) -> list[TrialTimeSeries]:
    """Duplication-aware ordering of one (subject, category, split) group.

    Round r of the result contains, in presentation order, every trial whose
    image has duplication count >= r. Copies of the same trial therefore land
    in different blocks whenever a round is at least one block long.
    """
    ordered = sorted(trials, key=lambda tr: (tr.order, tr.trial_id))
    out: list[TrialTimeSeries] = []
    for round_idx in range(1, MAX_DUPLICATION + 1):
        members = [tr for tr in ordered if duplication.get(tr.image_id, 0) >= round_idx]
        if not members:
            break
        out.extend(members)
    return out


def assemble_dataset(
    trials: list[TrialTimeSeries],
    labels: LabelSet,
    block_size: int,
    rng: RngStream,
) -> GraphDataset:
    """Build the balanced signed-graph dataset from trials and labels.

    Blocks are consecutive runs of ``block_size`` trials within each
    (subject, category, split) group after duplication expansion; leftover
    trials shorter than a block are dropped. The training split is then
    downsampled to the minimum class count.
    """
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    categories = labels.categories
    dup_by_image = {img.image_id: img.duplication for img in labels.images}

    for trial in trials:
        if trial.image_id not in labels.splits:
            raise DataError(
                f"trial {trial.trial_id}: image {trial.image_id!r} missing "
                "from the label split assignment"
            )

    p = trials[0].data.rows if trials else 0
    graphs: list[SignedGraph] = []
    per_class_split_counts: dict[tuple[int, str], int] = {}
    subjects = sorted({t.subject_id for t in trials})
    for label_idx, category in enumerate(categories):
        for split in SPLITS:
            for subject in subjects:
                group = [
                    t
                    for t in trials
                    if t.subject_id == subject
                    and labels.split_of(t.image_id) == split
                    and dup_by_image.get(t.image_id, {}).get(category, 0) > 0
                ]
                if not group:
                    continue
                dup = {t.image_id: dup_by_image[t.image_id][category] for t in group}
                sequence = expand_trial_sequence(group, dup)
                for start in range(0, len(sequence) - block_size + 1, block_size):
                    block = sequence[start : start + block_size]
                    graphs.append(
                        connectivity_graph(block, block_size, label_idx, split)
                    )
                    key = (label_idx, split)
                    per_class_split_counts[key] = per_class_split_counts.get(key, 0) + 1
        for split in SPLITS:
            if per_class_split_counts.get((label_idx, split), 0) == 0:
                raise DataError(
                    f"category {category!r} produced zero {split} blocks "
                    f"(block_size={block_size} may exceed the available trials)"
                )

    graphs = _balance_training_split(graphs, len(categories), rng)
    dataset = GraphDataset(
        graphs=graphs,
        num_parcels=p,
        num_classes=len(categories),
        class_names=list(categories),
    )
    dataset.validate()
    return dataset


def _balance_training_split(
    graphs: list[SignedGraph], num_classes: int, rng: RngStream
) -> list[SignedGraph]:
    """Downsample training graphs to the minimum per-class count."""
    train_by_class: list[list[int]] = [[] for _ in range(num_classes)]
    for idx, g in enumerate(graphs):
        if g.split == "train":
            train_by_class[g.label].append(idx)
    min_count = min(len(ids) for ids in train_by_class)
    keep: set[int] = set()
    for ids in train_by_class:
        if len(ids) == min_count:
            keep.update(ids)
        else:
            chosen = rng.sample_indices(len(ids), min_count)
            keep.update(ids[c] for c in chosen)
    return [
        g
        for idx, g in enumerate(graphs)
        if g.split != "train" or idx in keep
    ]


# ---------------------------------------------------------------------------
# time-series input files
# ---------------------------------------------------------------------------

def load_trial_csv(path: str | Path) -> Matrix:
    """Read one trial: P rows x T comma-separated columns, no header."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"trial file not found: {path}")
    rows: list[list[float]] = []
    with path.open(newline="") as fh:
        for line in csv.reader(fh):
            if not line:
                continue
            try:
                rows.append([float(v) for v in line])
            except ValueError as exc:
                raise DataError(f"trial file {path}: non-numeric value ({exc})") from exc
    if not rows:
        raise DataError(f"trial file {path} is empty")
    return Matrix.from_rows(rows)


def load_trials(manifest_path: str | Path) -> list[TrialTimeSeries]:
    """Read manifest.json and every trial CSV it references."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingInputError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
        entries = doc["trials"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"manifest {manifest_path} is malformed: {exc}") from exc

    base = manifest_path.parent
    trials = []
    for entry in entries:
        try:
            trials.append(
                TrialTimeSeries(
                    subject_id=str(entry["subject_id"]),
                    trial_id=str(entry["trial_id"]),
                    image_id=str(entry["image_id"]),
                    data=load_trial_csv(base / entry["path"]),
                    order=int(entry["order"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"manifest {manifest_path}: malformed entry ({exc})") from exc
    by_subject: dict[str, set] = {}
    for t in trials:
        by_subject.setdefault(t.subject_id, set()).add(t.data.shape)
    for subject, subject_shapes in by_subject.items():
        if len(subject_shapes) > 1:
            raise DataError(
                f"subject {subject!r} has inconsistent trial shapes {subject_shapes}"
            )
    return trials


# ---------------------------------------------------------------------------
# graphs.bin serialization
# ---------------------------------------------------------------------------

def save_dataset(dataset: GraphDataset, path: str | Path) -> None:
    """Write graphs.bin.

    Layout (little-endian): magic "SGNN1", u32 parcel count, u32 class count,
    u32 graph count; then per graph u8 label, u8 split code (0 train, 1 val,
    2 test), P*P f64 a_plus row-major, P*P f64 a_minus row-major.
    """
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(GRAPHS_MAGIC)
        fh.write(
            struct.pack(
                "<III", dataset.num_parcels, dataset.num_classes, len(dataset.graphs)
            )
        )
        for g in dataset.graphs:
            fh.write(struct.pack("<BB", g.label, _SPLIT_CODE[g.split]))
            fh.write(f64_to_le_bytes(g.a_plus._data))
            fh.write(f64_to_le_bytes(g.a_minus._data))


def load_dataset(path: str | Path, class_names: list[str] | None = None) -> GraphDataset:
    """Read graphs.bin (provenance fields are not stored in the format)."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"graphs file not found: {path}")
    blob = path.read_bytes()
    if blob[: len(GRAPHS_MAGIC)] != GRAPHS_MAGIC:
        raise DataError(f"{path} is not a graphs file (bad magic)")
    off = len(GRAPHS_MAGIC)
    p, c, count = struct.unpack_from("<III", blob, off)
    off += 12
    per_matrix = p * p * 8
    graphs = []
    for _ in range(count):
        if off + 2 + 2 * per_matrix > len(blob):
            raise DataError(f"{path} is truncated")
        label, split_code = struct.unpack_from("<BB", blob, off)
        off += 2
        if label >= c or split_code >= len(SPLITS):
            raise DataError(f"{path}: invalid label/split byte pair ({label}, {split_code})")
        plus = f64_from_le_bytes(blob[off : off + per_matrix])
        off += per_matrix
        minus = f64_from_le_bytes(blob[off : off + per_matrix])
        off += per_matrix
        graphs.append(
            SignedGraph(
                a_plus=Matrix._wrap(p, p, plus),
                a_minus=Matrix._wrap(p, p, minus),
                label=label,
                split=SPLITS[split_code],
            )
        )
    if off != len(blob):
        raise DataError(f"{path} has {len(blob) - off} trailing bytes")
    names = class_names if class_names else [f"class_{i}" for i in range(c)]
    if len(names) != c:
        raise DataError(f"expected {c} class names, got {len(names)}")
    return GraphDataset(graphs=graphs, num_parcels=p, num_classes=c, class_names=names)
