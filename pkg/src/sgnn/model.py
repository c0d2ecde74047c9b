"""Signed graph convolutional classifier.

Forward pass: a learned logistic edge mask gates both adjacency channels,
two signed graph-convolution layers propagate one-hot node features, global
mean pooling feeds a two-layer MLP with a softmax head. Every intermediate
is cached so the training module can run an exact hand-written backward pass.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, MissingInputError, ShapeError
from .graphs import SignedGraph
from .numerics import Matrix, RngStream, f64_from_le_bytes, f64_to_le_bytes

CHECKPOINT_MAGIC = b"SGNNCKPT"


@dataclass(frozen=True)
class ModelDims:
    d1: int = 64
    d2: int = 64
    d_hidden: int = 32


@dataclass
class ModelParams:
    """All trainable tensors, in checkpoint declaration order."""

    mask_raw: Matrix  # P x P, symmetric
    w_plus_1: Matrix  # P x d1
    w_minus_1: Matrix
    b_1: Matrix  # 1 x d1
    w_plus_2: Matrix  # d1 x d2
    w_minus_2: Matrix
    b_2: Matrix  # 1 x d2
    w_mlp_1: Matrix  # d2 x d_hidden
    b_mlp_1: Matrix  # 1 x d_hidden
    w_mlp_2: Matrix  # d_hidden x C
    b_mlp_2: Matrix  # 1 x C

    FIELDS = (
        "mask_raw",
        "w_plus_1",
        "w_minus_1",
        "b_1",
        "w_plus_2",
        "w_minus_2",
        "b_2",
        "w_mlp_1",
        "b_mlp_1",
        "w_mlp_2",
        "b_mlp_2",
    )
    # decoupled weight decay applies to weight matrices only
    DECAYED = ("w_plus_1", "w_minus_1", "w_plus_2", "w_minus_2", "w_mlp_1", "w_mlp_2")

    @property
    def num_parcels(self) -> int:
        return self.mask_raw.rows

    @property
    def num_classes(self) -> int:
        return self.w_mlp_2.cols

    @property
    def dims(self) -> ModelDims:
        return ModelDims(
            d1=self.w_plus_1.cols, d2=self.w_plus_2.cols, d_hidden=self.w_mlp_1.cols
        )

    def named(self):
        for name in self.FIELDS:
            yield name, getattr(self, name)

    def replace(self, **tensors: Matrix) -> "ModelParams":
        current = dict(self.named())
        current.update(tensors)
        return ModelParams(**current)

    def copy(self) -> "ModelParams":
        return ModelParams(**dict(self.named()))  # tensors are immutable

    def validate_shapes(self) -> None:
        p = self.num_parcels
        dims = self.dims
        c = self.num_classes
        expected = {
            "mask_raw": (p, p),
            "w_plus_1": (p, dims.d1),
            "w_minus_1": (p, dims.d1),
            "b_1": (1, dims.d1),
            "w_plus_2": (dims.d1, dims.d2),
            "w_minus_2": (dims.d1, dims.d2),
            "b_2": (1, dims.d2),
            "w_mlp_1": (dims.d2, dims.d_hidden),
            "b_mlp_1": (1, dims.d_hidden),
            "w_mlp_2": (dims.d_hidden, c),
            "b_mlp_2": (1, c),
        }
        for name, tensor in self.named():
            if tensor.shape != expected[name]:
                raise ShapeError(
                    f"{name}: expected shape {expected[name]}, got {tensor.shape}"
                )


def _glorot(rng: RngStream, fan_in: int, fan_out: int) -> Matrix:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform_matrix(fan_in, fan_out, -s, s)


def init_params(
    num_parcels: int, num_classes: int, dims: ModelDims, rng: RngStream
) -> ModelParams:
    """Glorot-uniform weights, zero biases, zero mask logits (mask = 0.5)."""
    p, c = num_parcels, num_classes
    params = ModelParams(
        mask_raw=Matrix.zeros(p, p),
        w_plus_1=_glorot(rng, p, dims.d1),
        w_minus_1=_glorot(rng, p, dims.d1),
        b_1=Matrix.zeros(1, dims.d1),
        w_plus_2=_glorot(rng, dims.d1, dims.d2),
        w_minus_2=_glorot(rng, dims.d1, dims.d2),
        b_2=Matrix.zeros(1, dims.d2),
        w_mlp_1=_glorot(rng, dims.d2, dims.d_hidden),
        b_mlp_1=Matrix.zeros(1, dims.d_hidden),
        w_mlp_2=_glorot(rng, dims.d_hidden, c),
        b_mlp_2=Matrix.zeros(1, c),
    )
    params.validate_shapes()
    return params


@dataclass
class ForwardCache:
    """Every intermediate of one forward pass, enough for exact backprop."""

    mask: Matrix  # M = logistic(sym(mask_raw))
    gated_plus: Matrix
    gated_minus: Matrix
    agg_plus_1: Matrix  # gated_plus @ h0
    agg_minus_1: Matrix
    pre_1: Matrix
    h_1: Matrix
    agg_plus_2: Matrix
    agg_minus_2: Matrix
    pre_2: Matrix
    h_2: Matrix
    pooled: Matrix  # 1 x d2
    pre_z: Matrix  # 1 x d_hidden
    z: Matrix
    logits: Matrix  # 1 x C
    probs: list[float]
    activation: str = "relu"

    def min_abs_preactivation(self) -> float:
        """Distance of the closest pre-activation to a ReLU kink."""
        m = float("inf")
        for mat in (self.pre_1, self.pre_2, self.pre_z):
            for x in mat._data:
                a = -x if x < 0.0 else x
                if a < m:
                    m = a
        return m


# ---------------------------------------------------------------------------
# forward-pass pieces
# ---------------------------------------------------------------------------

def materialize_mask(mask_raw: Matrix) -> Matrix:
    """Elementwise logistic of the (symmetrized) raw mask parameters.

    Symmetrizing first is an exact no-op for symmetric input and makes the
    mask's gradient well-defined coordinate-by-coordinate, which the finite
    difference checks rely on.
    """
    return mask_raw.symmetrize().logistic()


def gate(a_plus: Matrix, a_minus: Matrix, m: Matrix) -> tuple[Matrix, Matrix]:
    """Multiplicatively gate both adjacency channels by the mask."""
    if not (a_plus.shape == a_minus.shape == m.shape):
        raise ShapeError(
            f"gate: shapes {a_plus.shape}, {a_minus.shape}, {m.shape} differ"
        )
    return a_plus * m, a_minus * m


def _apply_activation(pre: Matrix, activation: str) -> Matrix:
    if activation == "relu":
        return pre.relu()
    if activation == "identity":
        return pre
    raise ValueError(f"unknown activation {activation!r}")


def signed_conv(
    h: Matrix,
    gated_plus: Matrix,
    gated_minus: Matrix,
    w_plus: Matrix,
    w_minus: Matrix,
    b: Matrix,
    activation: str = "relu",
) -> tuple[Matrix, Matrix]:
    """One signed graph-convolution layer.

    pre = A~+ h W+ + A~- h W- + b (bias broadcast over nodes), act = relu(pre).
    """
    _, _, pre, act = _signed_conv_full(
        h, gated_plus, gated_minus, w_plus, w_minus, b, activation
    )
    return pre, act


def _signed_conv_full(h, gated_plus, gated_minus, w_plus, w_minus, b, activation):
    if gated_plus.cols != h.rows:
        raise ShapeError(
            f"signed_conv: adjacency {gated_plus.shape} does not match "
            f"features {h.shape}"
        )
    if h.cols != w_plus.rows or w_plus.shape != w_minus.shape:
        raise ShapeError(
            f"signed_conv: features {h.shape} do not match weights "
            f"{w_plus.shape} / {w_minus.shape}"
        )
    agg_plus = gated_plus @ h
    agg_minus = gated_minus @ h
    pre = (agg_plus @ w_plus + agg_minus @ w_minus).add_rowvec(b)
    return agg_plus, agg_minus, pre, _apply_activation(pre, activation)


def softmax(logits: list[float]) -> list[float]:
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    s = sum(exps)
    return [e / s for e in exps]


def forward(graph: SignedGraph, params: ModelParams, activation: str = "relu") -> ForwardCache:
    """Full forward pass; retains every intermediate for backprop.

    The ``identity`` activation variant exists for gradient tests that need a
    kink-free model; production code always uses relu.
    """
    p = params.num_parcels
    if graph.a_plus.shape != (p, p):
        raise ShapeError(
            f"graph has {graph.a_plus.shape[0]} parcels but model expects {p}"
        )
    params.validate_shapes()

    mask = materialize_mask(params.mask_raw)
    gated_plus, gated_minus = gate(graph.a_plus, graph.a_minus, mask)
    h0 = Matrix.identity(p)
    agg_p1, agg_m1, pre1, h1 = _signed_conv_full(
        h0, gated_plus, gated_minus, params.w_plus_1, params.w_minus_1,
        params.b_1, activation,
    )
    agg_p2, agg_m2, pre2, h2 = _signed_conv_full(
        h1, gated_plus, gated_minus, params.w_plus_2, params.w_minus_2,
        params.b_2, activation,
    )
    pooled = h2.col_means()
    pre_z = (pooled @ params.w_mlp_1).add_rowvec(params.b_mlp_1)
    z = _apply_activation(pre_z, activation)
    logits = (z @ params.w_mlp_2).add_rowvec(params.b_mlp_2)
    probs = softmax(logits.row(0))
    return ForwardCache(
        mask=mask,
        gated_plus=gated_plus,
        gated_minus=gated_minus,
        agg_plus_1=agg_p1,
        agg_minus_1=agg_m1,
        pre_1=pre1,
        h_1=h1,
        agg_plus_2=agg_p2,
        agg_minus_2=agg_m2,
        pre_2=pre2,
        h_2=h2,
        pooled=pooled,
        pre_z=pre_z,
        z=z,
        logits=logits,
        probs=probs,
        activation=activation,
    )


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------

def save_checkpoint(
    params: ModelParams,
    path: str | Path,
    config_hash: str = "",
    best_epoch: int = 0,
) -> None:
    """Write a checkpoint.

    Layout (little-endian): magic "SGNNCKPT"; u32 P, C, d1, d2, d_hidden;
    u32 best epoch; u32 hash length + ascii config hash; parameter tensors
    in declaration order as raw row-major f64.
    """
    params.validate_shapes()
    dims = params.dims
    hash_bytes = config_hash.encode("ascii")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIII",
                params.num_parcels,
                params.num_classes,
                dims.d1,
                dims.d2,
                dims.d_hidden,
            )
        )
        fh.write(struct.pack("<I", best_epoch))
        fh.write(struct.pack("<I", len(hash_bytes)))
        fh.write(hash_bytes)
        for _, tensor in params.named():
            fh.write(f64_to_le_bytes(tensor._data))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    """Read a checkpoint; returns (params, {config_hash, best_epoch, ...})."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    p, c, d1, d2, dh = struct.unpack_from("<IIIII", blob, off)
    off += 20
    (best_epoch,) = struct.unpack_from("<I", blob, off)
    off += 4
    (hash_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    config_hash = blob[off : off + hash_len].decode("ascii")
    off += hash_len

    shapes = {
        "mask_raw": (p, p),
        "w_plus_1": (p, d1),
        "w_minus_1": (p, d1),
        "b_1": (1, d1),
        "w_plus_2": (d1, d2),
        "w_minus_2": (d1, d2),
        "b_2": (1, d2),
        "w_mlp_1": (d2, dh),
        "b_mlp_1": (1, dh),
        "w_mlp_2": (dh, c),
        "b_mlp_2": (1, c),
    }
    tensors = {}
    for name in ModelParams.FIELDS:
        rows, cols = shapes[name]
        nbytes = rows * cols * 8
        if off + nbytes > len(blob):
            raise DataError(f"{path} is truncated in tensor {name}")
        buf = f64_from_le_bytes(blob[off : off + nbytes])
        off += nbytes
        tensors[name] = Matrix._wrap(rows, cols, buf)
    if off != len(blob):
        raise DataError(f"{path} has {len(blob) - off} trailing bytes")
    params = ModelParams(**tensors)
    params.validate_shapes()
    meta = {
        "config_hash": config_hash,
        "best_epoch": best_epoch,
        "num_parcels": p,
        "num_classes": c,
        "dims": ModelDims(d1=d1, d2=d2, d_hidden=dh),
    }
    return params, meta


def config_sha256(doc) -> str:
    """Canonical hash of a JSON-serializable configuration document."""
    import json

    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
