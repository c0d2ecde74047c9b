"""Image-level category evidence, fused scores, duplication counts, splits.

Converts per-image instance-mask and caption annotations into per-category
fusion scores, turns those into sample duplication counts, and assigns a
leakage-safe train/val/test split on image ids before any duplication.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, InvariantError, MissingInputError
from .numerics import RngStream

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ImageAnnotation:
    """One image's raw annotation: instance areas plus caption tokens."""

    image_id: str
    image_area: int
    instances: tuple[tuple[str, float], ...]  # (object name, pixel area)
    caption: tuple[str, ...]  # lower-cased tokens

    def __post_init__(self):
        if self.image_area <= 0:
            raise DataError(f"image {self.image_id}: image_area must be positive")
        for name, area in self.instances:
            if area < 0 or area > self.image_area:
                raise DataError(
                    f"image {self.image_id}: instance {name!r} area {area} "
                    f"outside [0, {self.image_area}]"
                )


@dataclass(frozen=True)
class CategoryLexicon:
    """Object names and caption terms that count as evidence for a category."""

    category: str
    member_object_names: frozenset[str]
    caption_terms: frozenset[str]
    alpha: float = 0.5

    def __post_init__(self):
        if not self.member_object_names or not self.caption_terms:
            raise DataError(f"lexicon for {self.category!r} has an empty term set")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"lexicon for {self.category!r}: alpha outside [0, 1]")


@dataclass
class ScoredImage:
    """Per-category evidence, fused score, and duplication count for one image."""

    image_id: str
    mask_evidence: dict[str, float]
    text_evidence: dict[str, float]
    score: dict[str, float]
    duplication: dict[str, int]


@dataclass
class LabelSet:
    """The labels.json contract consumed by the graphs module."""

    categories: list[str]
    alpha: dict[str, float]
    images: list[ScoredImage]
    splits: dict[str, str]  # image_id -> train | val | test

    def split_of(self, image_id: str) -> str:
        try:
            return self.splits[image_id]
        except KeyError:
            raise DataError(f"image {image_id!r} has no split assignment") from None

    def duplication_of(self, image_id: str) -> dict[str, int]:
        for img in self.images:
            if img.image_id == image_id:
                return img.duplication
        raise DataError(f"image {image_id!r} not present in labels")

    def check_leakage_free(self) -> None:
        """Every image id appears in exactly one split, by construction of
        the mapping; also verify all split names are valid."""
        for image_id, split in self.splits.items():
            if split not in SPLITS:
                raise InvariantError(f"image {image_id!r} has unknown split {split!r}")


# ---------------------------------------------------------------------------
# evidence and fusion
# ---------------------------------------------------------------------------

def mask_evidence(ann: ImageAnnotation, lex: CategoryLexicon) -> float:
    """Fraction of the image covered by instances of the category's objects."""
    if ann.image_area == 0:
        raise DataError(f"image {ann.image_id}: zero image_area")
    covered = sum(
        area for name, area in ann.instances if name in lex.member_object_names
    )
    frac = covered / ann.image_area
    # overlapping instances can push the raw sum past 1
    return min(max(frac, 0.0), 1.0)


def text_evidence(ann: ImageAnnotation, lex: CategoryLexicon) -> float:
    """Relative frequency of the category's terms among caption tokens."""
    if not ann.caption:
        return 0.0
    hits = sum(1 for tok in ann.caption if tok in lex.caption_terms)
    return hits / len(ann.caption)


def fuse_score(text: float, mask: float, alpha: float) -> float:
    """alpha-weighted combination of text and mask evidence."""
    for name, v in (("text", text), ("mask", mask), ("alpha", alpha)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"fuse_score: {name}={v} outside [0, 1]")
    return alpha * text + (1.0 - alpha) * mask


def duplication_count(score: float) -> int:
    """Nearest integer to 10*score, halves rounded away from zero."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"duplication_count: score {score} outside [0, 1]")
    return int(math.floor(10.0 * score + 0.5))


def score_images(
    annotations: list[ImageAnnotation],
    lexicons: list[CategoryLexicon],
    alpha_overrides: dict[str, float] | None = None,
) -> list[ScoredImage]:
    """Score every image against every category lexicon."""
    overrides = alpha_overrides or {}
    scored = []
    for ann in annotations:
        mask_ev, text_ev, score, dup = {}, {}, {}, {}
        for lex in lexicons:
            a = overrides.get(lex.category, lex.alpha)
            m = mask_evidence(ann, lex)
            t = text_evidence(ann, lex)
            s = fuse_score(t, m, a)
            mask_ev[lex.category] = m
            text_ev[lex.category] = t
            score[lex.category] = s
            dup[lex.category] = duplication_count(s)
        scored.append(ScoredImage(ann.image_id, mask_ev, text_ev, score, dup))
    return scored


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_images(
    ids: list[str],
    ratios: tuple[float, float, float],
    rng: RngStream,
) -> dict[str, str]:
    """Shuffled partition of unique image ids into train/val/test.

    Counts follow largest-remainder apportionment, so each split size is
    within one image of its exact quota.
    """
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"duplicate image ids in split input: {dupes[:5]}")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")

    n = len(ids)
    quotas = [n * r for r in ratios]
    counts = [int(math.floor(q)) for q in quotas]
    remainder = n - sum(counts)
    by_frac = sorted(range(3), key=lambda s: (-(quotas[s] - counts[s]), s))
    for s in by_frac[:remainder]:
        counts[s] += 1

    shuffled = list(ids)
    rng.shuffle(shuffled)
    assignment: dict[str, str] = {}
    start = 0
    for split, count in zip(SPLITS, counts):
        for image_id in shuffled[start : start + count]:
            assignment[image_id] = split
        start += count
    return assignment


def build_label_set(
    annotations: list[ImageAnnotation],
    lexicons: list[CategoryLexicon],
    ratios: tuple[float, float, float],
    rng: RngStream,
    alpha_overrides: dict[str, float] | None = None,
) -> LabelSet:
    overrides = alpha_overrides or {}
    scored = score_images(annotations, lexicons, overrides)
    splits = split_images([a.image_id for a in annotations], ratios, rng)
    alpha = {
        lex.category: overrides.get(lex.category, lex.alpha) for lex in lexicons
    }
    labels = LabelSet(
        categories=[lex.category for lex in lexicons],
        alpha=alpha,
        images=scored,
        splits=splits,
    )
    labels.check_leakage_free()
    return labels


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def load_annotations(path: str | Path) -> list[ImageAnnotation]:
    """Read annotations.json: [{image_id, image_area, instances, caption}]."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"annotations file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"annotations file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"annotations file {path}: expected a JSON array")
    anns = []
    seen = set()
    for entry in raw:
        try:
            ann = ImageAnnotation(
                image_id=str(entry["image_id"]),
                image_area=int(entry["image_area"]),
                instances=tuple(
                    (str(inst["category"]), float(inst["area"]))
                    for inst in entry.get("instances", [])
                ),
                caption=tuple(str(t).lower() for t in entry.get("caption", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"annotations file {path}: malformed entry ({exc})") from exc
        if ann.image_id in seen:
            raise DataError(f"annotations file {path}: duplicate image {ann.image_id!r}")
        seen.add(ann.image_id)
        anns.append(ann)
    return anns


def load_lexicons(path: str | Path) -> list[CategoryLexicon]:
    """Read lexicon.json: {category: {objects, caption_terms, alpha?}}."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"lexicon file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"lexicon file {path} is not valid JSON: {exc}") from exc
    lexicons = []
    for category, entry in raw.items():
        try:
            lexicons.append(
                CategoryLexicon(
                    category=str(category),
                    member_object_names=frozenset(
                        str(s).lower() for s in entry["objects"]
                    ),
                    caption_terms=frozenset(
                        str(s).lower() for s in entry["caption_terms"]
                    ),
                    alpha=float(entry.get("alpha", 0.5)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"lexicon file {path}: malformed entry ({exc})") from exc
    if not lexicons:
        raise DataError(f"lexicon file {path}: no categories defined")
    return lexicons


def save_label_set(labels: LabelSet, path: str | Path) -> None:
    doc = {
        "categories": labels.categories,
        "alpha": labels.alpha,
        "images": [
            {
                "image_id": img.image_id,
                "mask_evidence": img.mask_evidence,
                "text_evidence": img.text_evidence,
                "score": img.score,
                "duplication": img.duplication,
            }
            for img in labels.images
        ],
        "splits": labels.splits,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_label_set(path: str | Path) -> LabelSet:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"labels file not found: {path}")
    try:
        doc = json.loads(path.read_text())
        labels = LabelSet(
            categories=[str(c) for c in doc["categories"]],
            alpha={str(k): float(v) for k, v in doc["alpha"].items()},
            images=[
                ScoredImage(
                    image_id=str(img["image_id"]),
                    mask_evidence={k: float(v) for k, v in img["mask_evidence"].items()},
                    text_evidence={k: float(v) for k, v in img["text_evidence"].items()},
                    score={k: float(v) for k, v in img["score"].items()},
                    duplication={k: int(v) for k, v in img["duplication"].items()},
                )
                for img in doc["images"]
            ],
            splits={str(k): str(v) for k, v in doc["splits"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"labels file {path} is malformed: {exc}") from exc
    labels.check_leakage_free()
    return labels
