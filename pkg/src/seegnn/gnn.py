"""Two-layer graph convolutional network with analytic gradients.

The architecture is fixed: two graph convolutions with ReLU, global mean
pooling over nodes, and a linear head. Propagation uses the symmetric
normalization D^{-1/2} (A + I) D^{-1/2} over nonnegative edge weights, so an
isolated node reduces to its self-loop. Everything runs in double precision;
forward/backward are pure functions of (model, inputs), and the optimizer is
the only mutator.

Because the adjacency and node features of a sample never change during
training, ``forward`` accepts the precomputed product ``ax = a_hat @ x`` and
the first layer is evaluated as ``(a_hat @ x) @ w1`` in both cases, keeping
results bit-identical whether or not the product was cached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidDims,
    IoFailure,
    LabelOutOfRange,
    NegativeWeight,
    NonFiniteInput,
    NonSymmetric,
    SchemaViolation,
    ShapeMismatch,
    StaleCache,
    VersionMismatch,
)

CHECKPOINT_VERSION = 1

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w_out", "b_out")


@dataclass(eq=False)
class GcnModel:
    w1: np.ndarray  # (in_dim, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray  # (hidden,)
    w_out: np.ndarray  # (hidden, n_classes)
    b_out: np.ndarray  # (n_classes,)
    hidden: int
    n_classes: int
    in_dim: int
    init_seed: int

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass(eq=False)
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    x: np.ndarray | None = None  # input gradient, only on request

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


@dataclass(eq=False)
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: GcnModel, lr: float) -> "AdamState":
        state = cls(lr=lr)
        for name, value in model.params().items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state


@dataclass(eq=False)
class ForwardCache:
    a_hat: np.ndarray
    ax: np.ndarray
    z1: np.ndarray
    m1: np.ndarray
    z2: np.ndarray
    g: np.ndarray
    n_nodes: int
    keep1: np.ndarray | None = None  # dropout keep masks, already scaled
    keep2: np.ndarray | None = None


def init_model(
    hidden: int, n_classes: int, seed: int, in_dim: int = 5000
) -> GcnModel:
    """Glorot-uniform weights from a seeded PRNG; zero biases."""
    if hidden < 1 or in_dim < 1:
        raise InvalidDims(f"hidden and in_dim must be >= 1, got {hidden}, {in_dim}")
    if n_classes not in (2, 3):
        raise InvalidDims(f"n_classes must be 2 or 3, got {n_classes}")
    rng = np.random.default_rng(seed)

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return GcnModel(
        w1=glorot(in_dim, hidden),
        b1=np.zeros(hidden),
        w2=glorot(hidden, hidden),
        b2=np.zeros(hidden),
        w_out=glorot(hidden, n_classes),
        b_out=np.zeros(n_classes),
        hidden=hidden,
        n_classes=n_classes,
        in_dim=in_dim,
        init_seed=seed,
    )


def normalize_adjacency(weights: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^{-1/2} (A + I) D^{-1/2} with self-loops."""
    a = np.asarray(weights, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise NonSymmetric("adjacency must be exactly symmetric")
    if (a < 0).any():
        raise NegativeWeight("adjacency entries must be nonnegative")
    a = a.copy()
    np.fill_diagonal(a, 0.0)
    a += np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def forward(
    model: GcnModel,
    a_hat: np.ndarray,
    x: np.ndarray | None = None,
    *,
    ax: np.ndarray | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on one graph; returns (logits, cache for backward).

    Either ``x`` (node features) or the precomputed ``ax = a_hat @ x`` must be
    given. ``dropout`` > 0 applies inverted dropout after each ReLU and
    requires ``rng``; leave it at 0 for evaluation.
    """
    if ax is None:
        if x is None:
            raise ShapeMismatch("forward needs x or ax")
        if x.ndim != 2 or x.shape[0] != a_hat.shape[0]:
            raise ShapeMismatch(
                f"x has shape {x.shape}, adjacency is {a_hat.shape}"
            )
        ax = a_hat @ x
    if ax.shape != (a_hat.shape[0], model.in_dim):
        raise ShapeMismatch(
            f"ax has shape {ax.shape}, expected ({a_hat.shape[0]}, {model.in_dim})"
        )
    if not np.isfinite(ax).all():
        raise NonFiniteInput("node features contain NaN or Inf")

    n = a_hat.shape[0]
    keep1 = keep2 = None
    if dropout > 0.0:
        if rng is None:
            raise ShapeMismatch("dropout requires an rng")
        keep1 = (rng.random((n, model.hidden)) >= dropout) / (1.0 - dropout)
        keep2 = (rng.random((n, model.hidden)) >= dropout) / (1.0 - dropout)

    z1 = ax @ model.w1 + model.b1
    h1 = np.maximum(z1, 0.0)
    if keep1 is not None:
        h1 = h1 * keep1
    m1 = a_hat @ h1
    z2 = m1 @ model.w2 + model.b2
    h2 = np.maximum(z2, 0.0)
    if keep2 is not None:
        h2 = h2 * keep2
    g = h2.mean(axis=0)
    logits = g @ model.w_out + model.b_out
    cache = ForwardCache(
        a_hat=a_hat, ax=ax, z1=z1, m1=m1, z2=z2, g=g, n_nodes=n,
        keep1=keep1, keep2=keep2,
    )
    return logits, cache


def softmax_cross_entropy(
    logits: np.ndarray, label: int
) -> tuple[float, np.ndarray]:
    """Stable cross-entropy of softmax(logits) against a class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.size:
        raise LabelOutOfRange(f"label {label} for {logits.size} classes")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[label])
    dlogits = exp / total
    dlogits[label] -= 1.0
    return loss, dlogits


def backward(
    model: GcnModel,
    cache: ForwardCache,
    dlogits: np.ndarray,
    need_input_grad: bool = False,
) -> Gradients:
    """Exact gradients of the loss w.r.t. every parameter (and optionally x)."""
    if (
        cache.z1.shape != (cache.n_nodes, model.hidden)
        or cache.ax.shape != (cache.n_nodes, model.in_dim)
        or cache.g.shape != (model.hidden,)
        or dlogits.shape != (model.n_classes,)
    ):
        raise StaleCache("cache does not match this model's dimensions")

    d_w_out = np.outer(cache.g, dlogits)
    d_b_out = dlogits.copy()
    dg = model.w_out @ dlogits

    dh2 = np.broadcast_to(dg / cache.n_nodes, (cache.n_nodes, model.hidden))
    if cache.keep2 is not None:
        dh2 = dh2 * cache.keep2
    dz2 = np.where(cache.z2 > 0.0, dh2, 0.0)

    d_w2 = cache.m1.T @ dz2
    d_b2 = dz2.sum(axis=0)

    dm1 = dz2 @ model.w2.T
    dh1 = cache.a_hat @ dm1  # a_hat is symmetric
    if cache.keep1 is not None:
        dh1 = dh1 * cache.keep1
    dz1 = np.where(cache.z1 > 0.0, dh1, 0.0)

    d_w1 = cache.ax.T @ dz1
    d_b1 = dz1.sum(axis=0)

    dx = cache.a_hat @ (dz1 @ model.w1.T) if need_input_grad else None
    return Gradients(
        w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2, w_out=d_w_out, b_out=d_b_out, x=dx
    )


def adam_step(
    model: GcnModel, grads: Gradients, state: AdamState
) -> tuple[GcnModel, AdamState]:
    """One bias-corrected Adam update, in place; returns (model, state)."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, param in model.params().items():
        g = getattr(grads, name)
        if g.shape != param.shape:
            raise ShapeMismatch(
                f"gradient {name} has shape {g.shape}, parameter is {param.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return model, state


# --- checkpointing ----------------------------------------------------------

def save_checkpoint(
    model: GcnModel, state: AdamState | None, path: str | Path
) -> None:
    """Versioned JSON checkpoint with full double-precision parameters."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "in_dim": model.in_dim,
        "hidden": model.hidden,
        "n_classes": model.n_classes,
        "init_seed": model.init_seed,
        "params": {k: v.tolist() for k, v in model.params().items()},
        "adam": None
        if state is None
        else {
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "t": state.t,
            "m": {k: v.tolist() for k, v in state.m.items()},
            "v": {k: v.tolist() for k, v in state.v.items()},
        },
    }
    try:
        Path(path).write_text(
            json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def _param_shapes(in_dim: int, hidden: int, n_classes: int) -> dict[str, tuple]:
    return {
        "w1": (in_dim, hidden),
        "b1": (hidden,),
        "w2": (hidden, hidden),
        "b2": (hidden,),
        "w_out": (hidden, n_classes),
        "b_out": (n_classes,),
    }


def load_checkpoint(path: str | Path) -> tuple[GcnModel, AdamState | None]:
    path = Path(path)
    if not path.exists():
        raise IoFailure(f"{path}: no such file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"{path}: not a valid checkpoint ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{path}: checkpoint root must be an object")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{path}: checkpoint version {doc.get('version')!r}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    for key in ("in_dim", "hidden", "n_classes", "init_seed", "params"):
        if key not in doc:
            raise SchemaViolation(f"{path}: missing field {key!r}")
    shapes = _param_shapes(doc["in_dim"], doc["hidden"], doc["n_classes"])
    params: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name not in doc["params"]:
            raise SchemaViolation(f"{path}: missing parameter {name!r}")
        arr = np.asarray(doc["params"][name], dtype=np.float64)
        if arr.shape != shape:
            raise SchemaViolation(
                f"{path}: parameter {name} has shape {arr.shape}, expected {shape}"
            )
        params[name] = arr
    model = GcnModel(
        **params,
        hidden=doc["hidden"],
        n_classes=doc["n_classes"],
        in_dim=doc["in_dim"],
        init_seed=doc["init_seed"],
    )
    state = None
    raw = doc.get("adam")
    if raw is not None:
        try:
            state = AdamState(
                lr=raw["lr"], beta1=raw["beta1"], beta2=raw["beta2"],
                eps=raw["eps"], t=raw["t"],
            )
            for name, shape in shapes.items():
                state.m[name] = np.asarray(raw["m"][name], dtype=np.float64)
                state.v[name] = np.asarray(raw["v"][name], dtype=np.float64)
                if state.m[name].shape != shape or state.v[name].shape != shape:
                    raise SchemaViolation(f"{path}: optimizer state shape mismatch")
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"{path}: malformed optimizer state ({exc})") from exc
    return model, state
