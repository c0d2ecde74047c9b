"""Loss, exact reverse-mode gradients, AdamW, and the training loop.

The backward pass is the hand-written adjoint of the forward equations:
softmax cross-entropy head, MLP, mean pooling, both signed convolutions,
the mask gating, and the logistic mask reparameterization, including the
sparsity/near-binary mask penalty. ``grad_check`` verifies every coordinate
against central finite differences; this is the load-bearing correctness
test for the whole package.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import InvariantError, ShapeError
from .graphs import GraphDataset, SignedGraph
from .model import (
    ForwardCache,
    ModelDims,
    ModelParams,
    forward,
    init_params,
)
from .numerics import Matrix, RngStream

_LOG_CLAMP = 1e-12


@dataclass
class LossConfig:
    label_smoothing: float = 0.1
    class_weights: list[float] = field(default_factory=lambda: [1.0])
    lambda_sparsity: float = 0.0  # L1 pressure on the mask
    lambda_binary: float = 0.0  # pushes mask entries toward {0, 1}

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing {self.label_smoothing} outside [0, 1)")
        if any(w <= 0 for w in self.class_weights):
            raise ValueError("class weights must be positive")
        if self.lambda_sparsity < 0 or self.lambda_binary < 0:
            raise ValueError("mask penalty coefficients must be nonnegative")


def smoothed_target(label: int, num_classes: int, eps: float) -> list[float]:
    t = [eps / num_classes] * num_classes
    t[label] += 1.0 - eps
    return t


def ce_loss(probs, label: int, cfg: LossConfig) -> float:
    """Class-weighted cross-entropy against the label-smoothed target."""
    c = len(cfg.class_weights)
    if len(probs) != c:
        raise ShapeError(f"got {len(probs)} probabilities for {c} classes")
    if not 0 <= label < c:
        raise ValueError(f"label {label} outside [0, {c})")
    target = smoothed_target(label, c, cfg.label_smoothing)
    acc = 0.0
    for t, p in zip(target, probs):
        acc += t * math.log(max(p, _LOG_CLAMP))
    return -cfg.class_weights[label] * acc


def _ce_logit_grad(probs, label: int, cfg: LossConfig) -> list[float]:
    """d(ce_loss)/d(logits) through the softmax, clamp-exact.

    With no clamping active this reduces to weight * (probs - target).
    """
    c = len(cfg.class_weights)
    w = cfg.class_weights[label]
    target = smoothed_target(label, c, cfg.label_smoothing)
    dprob = [
        (-w * t / p if p > _LOG_CLAMP else 0.0) for t, p in zip(target, probs)
    ]
    inner = sum(d * p for d, p in zip(dprob, probs))
    return [p * (d - inner) for p, d in zip(probs, dprob)]


def mask_penalty(m: Matrix, lambda_sparsity: float, lambda_binary: float) -> float:
    """Mean-reduced sparsity plus near-binary pressure on the mask."""
    ones = Matrix.full(m.rows, m.cols, 1.0)
    return (
        lambda_sparsity * m.abs().mean()
        + lambda_binary * (m * (ones - m)).mean()
    )


def _mask_penalty_grad(m: Matrix, lambda_sparsity: float, lambda_binary: float) -> Matrix:
    # d/dM of mean(|M|) is sign(M)/P^2; the logistic keeps M in (0,1), so
    # sign is identically 1. d/dM of mean(M(1-M)) is (1-2M)/P^2.
    inv_n = 1.0 / m.size
    ones = Matrix.full(m.rows, m.cols, 1.0)
    return (
        ones * (lambda_sparsity * inv_n)
        + (ones - m * 2.0) * (lambda_binary * inv_n)
    )


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

@dataclass
class Gradients:
    """Parameter gradients plus input gradients for one sample (or batch)."""

    mask_raw: Matrix
    w_plus_1: Matrix
    w_minus_1: Matrix
    b_1: Matrix
    w_plus_2: Matrix
    w_minus_2: Matrix
    b_2: Matrix
    w_mlp_1: Matrix
    b_mlp_1: Matrix
    w_mlp_2: Matrix
    b_mlp_2: Matrix
    d_a_plus: Matrix
    d_a_minus: Matrix

    def named_params(self):
        for name in ModelParams.FIELDS:
            yield name, getattr(self, name)

    def add(self, other: "Gradients") -> "Gradients":
        parts = {n: g + getattr(other, n) for n, g in self.named_params()}
        return Gradients(
            d_a_plus=self.d_a_plus + other.d_a_plus,
            d_a_minus=self.d_a_minus + other.d_a_minus,
            **parts,
        )

    def scaled(self, s: float) -> "Gradients":
        parts = {n: g * s for n, g in self.named_params()}
        return Gradients(
            d_a_plus=self.d_a_plus * s, d_a_minus=self.d_a_minus * s, **parts
        )

    def check_finite(self) -> None:
        for name, g in self.named_params():
            if not g.all_finite():
                raise InvariantError(f"non-finite gradient in {name}")


def sample_loss(
    params: ModelParams,
    graph: SignedGraph,
    label: int,
    cfg: LossConfig,
    activation: str = "relu",
) -> tuple[float, ForwardCache]:
    """Per-sample total loss (weighted smoothed CE + mask penalty)."""
    cache = forward(graph, params, activation=activation)
    loss = ce_loss(cache.probs, label, cfg) + mask_penalty(
        cache.mask, cfg.lambda_sparsity, cfg.lambda_binary
    )
    return loss, cache


def _act_grad(pre: Matrix, upstream: Matrix, activation: str) -> Matrix:
    if activation == "relu":
        return pre.relu_grad(upstream)
    if activation == "identity":
        return upstream
    raise ValueError(f"unknown activation {activation!r}")


def _backprop(
    cache: ForwardCache,
    graph: SignedGraph,
    params: ModelParams,
    dlogits: Matrix,
    cfg: LossConfig | None,
) -> Gradients:
    """Exact adjoint of the forward pass from a logit seed.

    When ``cfg`` is given, the mask-penalty gradient is folded into the
    mask_raw gradient; with ``cfg=None`` the result is the gradient of the
    seeded logit combination alone (used for saliency).
    """
    act = cache.activation
    p = params.num_parcels

    # MLP head
    dz = dlogits @ params.w_mlp_2.t()
    d_w_mlp_2 = cache.z.t() @ dlogits
    d_b_mlp_2 = dlogits
    dpre_z = _act_grad(cache.pre_z, dz, act)
    d_w_mlp_1 = cache.pooled.t() @ dpre_z
    d_b_mlp_1 = dpre_z
    dpooled = dpre_z @ params.w_mlp_1.t()

    # mean pooling: every node row receives dpooled / P
    ones_col = Matrix.full(p, 1, 1.0)
    dh2 = ones_col @ (dpooled * (1.0 / p))

    # conv layer 2
    dpre2 = _act_grad(cache.pre_2, dh2, act)
    d_w_plus_2 = cache.agg_plus_2.t() @ dpre2
    d_w_minus_2 = cache.agg_minus_2.t() @ dpre2
    d_b_2 = dpre2.col_sums()
    dagg_p2 = dpre2 @ params.w_plus_2.t()
    dagg_m2 = dpre2 @ params.w_minus_2.t()
    h1_t = cache.h_1.t()
    d_gated_plus = dagg_p2 @ h1_t
    d_gated_minus = dagg_m2 @ h1_t
    dh1 = cache.gated_plus.t() @ dagg_p2 + cache.gated_minus.t() @ dagg_m2

    # conv layer 1 (input features are the identity, so dA~ = dagg directly)
    dpre1 = _act_grad(cache.pre_1, dh1, act)
    d_w_plus_1 = cache.agg_plus_1.t() @ dpre1
    d_w_minus_1 = cache.agg_minus_1.t() @ dpre1
    d_b_1 = dpre1.col_sums()
    d_gated_plus = d_gated_plus + dpre1 @ params.w_plus_1.t()
    d_gated_minus = d_gated_minus + dpre1 @ params.w_minus_1.t()

    # gating: A~+- = A+- * M
    d_a_plus = d_gated_plus * cache.mask
    d_a_minus = d_gated_minus * cache.mask
    d_mask = d_gated_plus * graph.a_plus + d_gated_minus * graph.a_minus
    if cfg is not None:
        d_mask = d_mask + _mask_penalty_grad(
            cache.mask, cfg.lambda_sparsity, cfg.lambda_binary
        )

    # logistic reparameterization, then the symmetrization adjoint
    sigma_prime = cache.mask * (Matrix.full(p, p, 1.0) - cache.mask)
    d_mask_raw = (d_mask * sigma_prime).symmetrize()

    return Gradients(
        mask_raw=d_mask_raw,
        w_plus_1=d_w_plus_1,
        w_minus_1=d_w_minus_1,
        b_1=d_b_1,
        w_plus_2=d_w_plus_2,
        w_minus_2=d_w_minus_2,
        b_2=d_b_2,
        w_mlp_1=d_w_mlp_1,
        b_mlp_1=d_b_mlp_1,
        w_mlp_2=d_w_mlp_2,
        b_mlp_2=d_b_mlp_2,
        d_a_plus=d_a_plus,
        d_a_minus=d_a_minus,
    )


def backward(
    cache: ForwardCache,
    graph: SignedGraph,
    label: int,
    params: ModelParams,
    cfg: LossConfig,
) -> Gradients:
    """Exact gradients of the per-sample total loss."""
    if len(cache.probs) != len(cfg.class_weights):
        raise ShapeError(
            f"cache has {len(cache.probs)} classes, loss config "
            f"{len(cfg.class_weights)}"
        )
    dlogits = Matrix(1, len(cache.probs), _ce_logit_grad(cache.probs, label, cfg))
    return _backprop(cache, graph, params, dlogits, cfg)


def logit_gradients(
    params: ModelParams,
    graph: SignedGraph,
    class_idx: int,
    activation: str = "relu",
) -> tuple[Gradients, ForwardCache]:
    """Exact gradients of one raw logit w.r.t. all parameters and inputs."""
    cache = forward(graph, params, activation=activation)
    c = len(cache.probs)
    if not 0 <= class_idx < c:
        raise ValueError(f"class index {class_idx} outside [0, {c})")
    seed = [0.0] * c
    seed[class_idx] = 1.0
    return _backprop(cache, graph, params, Matrix(1, c, seed), None), cache


def logit_input_gradients(
    params: ModelParams, graph: SignedGraph, class_idx: int
) -> tuple[Matrix, Matrix, ForwardCache]:
    """d(logit_c)/dA+ and d(logit_c)/dA- for one graph (saliency path)."""
    grads, cache = logit_gradients(params, graph, class_idx)
    return grads.d_a_plus, grads.d_a_minus, cache


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 3e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Matrix] = field(default_factory=dict)
    v: dict[str, Matrix] = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: ModelParams, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for name, tensor in params.named():
            state.m[name] = Matrix.zeros(*tensor.shape)
            state.v[name] = Matrix.zeros(*tensor.shape)
        return state


def adamw_step(
    params: ModelParams, grads: Gradients, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One decoupled-weight-decay Adam update.

    Decay applies to convolution and MLP weight matrices only; biases and
    mask_raw are decay-free. mask_raw is re-symmetrized after the update
    (an exact no-op given symmetric gradients, kept as a guard).
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 / (1.0 - state.beta1**t)
    bc2 = 1.0 / (1.0 - state.beta2**t)
    updated: dict[str, Matrix] = {}
    for name, theta in params.named():
        g = getattr(grads, name)
        m = state.m[name] * state.beta1 + g * (1.0 - state.beta1)
        v = state.v[name] * state.beta2 + (g * g) * (1.0 - state.beta2)
        state.m[name] = m
        state.v[name] = v
        step_dir = (m * bc1) / (v * bc2).sqrt().add_scalar(state.eps)
        new_theta = theta - step_dir * state.lr
        if name in ModelParams.DECAYED:
            new_theta = new_theta - theta * (state.lr * state.weight_decay)
        if name == "mask_raw":
            new_theta = new_theta.symmetrize()
        updated[name] = new_theta
    return ModelParams(**updated), state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    dims: ModelDims = field(default_factory=ModelDims)
    label_smoothing: float = 0.1
    lambda_sparsity: float = 1e-3
    lambda_binary: float = 1e-3
    class_weight_mode: str = "inverse_frequency"  # or "uniform"
    lr: float = 3e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stop_reason: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def validate(self) -> None:
        if self.val_loss:
            best = min(range(len(self.val_loss)), key=lambda i: self.val_loss[i]) + 1
            if self.val_loss[self.best_epoch - 1] != self.val_loss[best - 1]:
                raise InvariantError("best_epoch does not hold the minimal val loss")


def class_weights_for(dataset: GraphDataset, mode: str) -> list[float]:
    """Per-class CE weights; inverse train frequency normalized to mean 1."""
    if mode == "uniform":
        return [1.0] * dataset.num_classes
    if mode != "inverse_frequency":
        raise ValueError(f"unknown class_weight_mode {mode!r}")
    counts = dataset.class_counts("train")
    if any(c == 0 for c in counts):
        raise ValueError(f"empty training class in counts {counts}")
    inv = [1.0 / c for c in counts]
    norm = len(inv) / sum(inv)
    return [w * norm for w in inv]


def _thread_count() -> int:
    raw = os.environ.get("SGNN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _batch_gradients(
    params: ModelParams,
    batch: list[SignedGraph],
    cfg: LossConfig,
    threads: int,
) -> tuple[Gradients, float]:
    """Mean gradient and mean loss over a minibatch.

    Per-sample gradients may be computed in parallel; the reduction is a
    fixed-order sum, so results do not depend on the thread count.
    """

    def one(graph: SignedGraph) -> tuple[Gradients, float]:
        loss, cache = sample_loss(params, graph, graph.label, cfg)
        return backward(cache, graph, graph.label, params, cfg), loss

    if threads > 1 and len(batch) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, batch))
    else:
        results = [one(g) for g in batch]

    total_grad = results[0][0]
    total_loss = results[0][1]
    for grad, loss in results[1:]:
        total_grad = total_grad.add(grad)
        total_loss += loss
    inv = 1.0 / len(batch)
    return total_grad.scaled(inv), total_loss * inv


def evaluate_split(
    params: ModelParams, graphs: list[SignedGraph], cfg: LossConfig
) -> tuple[float, float]:
    """(mean total loss, accuracy) over a list of graphs."""
    if not graphs:
        raise ValueError("cannot evaluate an empty split")
    ce_total = 0.0
    correct = 0
    penalty = None
    for g in graphs:
        cache = forward(g, params)
        ce_total += ce_loss(cache.probs, g.label, cfg)
        if penalty is None:
            penalty = mask_penalty(cache.mask, cfg.lambda_sparsity, cfg.lambda_binary)
        pred = max(range(len(cache.probs)), key=lambda i: (cache.probs[i], -i))
        if pred == g.label:
            correct += 1
    return ce_total / len(graphs) + penalty, correct / len(graphs)


def train(dataset: GraphDataset, cfg: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Minibatch AdamW training with early stopping on validation loss.

    Returns the parameters from the best validation epoch, not the last one.
    """
    train_graphs = dataset.by_split("train")
    val_graphs = dataset.by_split("val")
    if not train_graphs or not val_graphs:
        raise ValueError(
            f"training needs non-empty train and val splits, got "
            f"{len(train_graphs)}/{len(val_graphs)}"
        )
    loss_cfg = LossConfig(
        label_smoothing=cfg.label_smoothing,
        class_weights=class_weights_for(dataset, cfg.class_weight_mode),
        lambda_sparsity=cfg.lambda_sparsity,
        lambda_binary=cfg.lambda_binary,
    )
    rng = RngStream(cfg.seed)
    params = init_params(
        dataset.num_parcels, dataset.num_classes, cfg.dims, rng.child("init")
    )
    shuffle_rng = rng.child("shuffle")
    state = OptimizerState.fresh(
        params,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
    )
    threads = _thread_count()

    history = TrainHistory()
    best_params = params
    best_val = math.inf
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = list(range(len(train_graphs)))
        shuffle_rng.shuffle(order)
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_graphs[i] for i in order[start : start + cfg.batch_size]]
            grads, batch_loss = _batch_gradients(params, batch, loss_cfg, threads)
            params, state = adamw_step(params, grads, state)
            loss_sum += batch_loss * len(batch)
        history.train_loss.append(loss_sum / len(order))

        val_loss, val_acc = evaluate_split(params, val_graphs, loss_cfg)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)

        if val_loss < best_val:
            best_val = val_loss
            best_params = params
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                history.stop_reason = "early_stopping"
                break
    if not history.stop_reason:
        history.stop_reason = "max_epochs"
    history.validate()
    return best_params, history


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_coord: str
    checked: int
    skipped: int


def _graph_with(graph: SignedGraph, **channels: Matrix) -> SignedGraph:
    return SignedGraph(
        a_plus=channels.get("a_plus", graph.a_plus),
        a_minus=channels.get("a_minus", graph.a_minus),
        label=graph.label,
        split=graph.split,
        image_ids=graph.image_ids,
        subject_id=graph.subject_id,
    )


def grad_check(
    params: ModelParams,
    graph: SignedGraph,
    label: int,
    cfg: LossConfig,
    h: float = 1e-5,
    kink_tol: float = 1e-6,
    include_inputs: bool = True,
    activation: str = "relu",
) -> GradCheckResult:
    """Compare backward() against central differences, coordinate by coordinate.

    Coordinates whose perturbed forward passes bring any pre-activation
    within ``kink_tol`` of a ReLU kink are skipped (the loss is not twice
    differentiable there, so the O(h^2) error model does not apply).
    Relative error uses max(|fd|, |analytic|, 1e-6) in the denominator so
    near-zero gradients are compared at absolute scale.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    _, base_cache = sample_loss(params, graph, label, cfg, activation)
    analytic = backward(base_cache, graph, label, params, cfg)
    base_margin = base_cache.min_abs_preactivation()

    worst = 0.0
    worst_coord = "none"
    checked = 0
    skipped = 0

    def compare(an_value: float, coord: str, loss_at) -> None:
        nonlocal worst, worst_coord, checked, skipped
        lp, cp = loss_at(h)
        lm, cm = loss_at(-h)
        margin = min(
            base_margin, cp.min_abs_preactivation(), cm.min_abs_preactivation()
        )
        if activation == "relu" and margin < kink_tol:
            skipped += 1
            return
        fd = (lp - lm) / (2.0 * h)
        rel = abs(fd - an_value) / max(abs(fd), abs(an_value), 1e-6)
        checked += 1
        if rel > worst:
            worst = rel
            worst_coord = coord

    for name, tensor in params.named():
        an_tensor = getattr(analytic, name)
        for i in range(tensor.rows):
            for j in range(tensor.cols):

                def loss_at(delta, name=name, tensor=tensor, i=i, j=j):
                    p2 = params.replace(**{name: tensor.perturbed(i, j, delta)})
                    return sample_loss(p2, graph, label, cfg, activation)

                compare(an_tensor[i, j], f"{name}[{i},{j}]", loss_at)

    if include_inputs:
        for channel, an_tensor in (
            ("a_plus", analytic.d_a_plus),
            ("a_minus", analytic.d_a_minus),
        ):
            tensor = getattr(graph, channel)
            for i in range(tensor.rows):
                for j in range(tensor.cols):

                    def loss_at(delta, channel=channel, tensor=tensor, i=i, j=j):
                        g2 = _graph_with(
                            graph, **{channel: tensor.perturbed(i, j, delta)}
                        )
                        return sample_loss(params, g2, label, cfg, activation)

                    compare(an_tensor[i, j], f"{channel}[{i},{j}]", loss_at)

    return GradCheckResult(
        max_rel_error=worst, worst_coord=worst_coord, checked=checked, skipped=skipped
    )
