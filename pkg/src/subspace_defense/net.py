"""Feedforward extractor + subspace defense layers + linear classifier, with exact backprop.

Shapes follow the batch-major convention: a batch ``x`` is ``n x input_dim`` and
each affine layer stores ``W`` as ``out x in`` so that ``y = x @ W.T + b``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .matcore import DimensionError, RngStream, ValidationError, as_mat

DEFENSE_VARIANTS = ("two_layer_linear", "two_layer_relu", "one_layer_linear", "one_layer_relu", "none")
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 20
    hidden: tuple[int, ...] = (64,)
    feature_dim: int = 32
    subspace_dim: int = 4
    classes: int = 4
    defense_variant: str = "two_layer_linear"
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        self.validate()

    def validate(self) -> None:
        if self.defense_variant not in DEFENSE_VARIANTS:
            raise ValidationError(f"unknown defense_variant {self.defense_variant!r}; expected one of {DEFENSE_VARIANTS}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.classes < 2:
            raise ValidationError("need at least two classes")
        if min((self.input_dim, self.feature_dim, *self.hidden), default=1) < 1:
            raise ValidationError("layer widths must be positive")
        if self.has_defense and not 1 <= self.subspace_dim <= self.feature_dim:
            raise ValidationError(f"subspace_dim {self.subspace_dim} outside [1, {self.feature_dim}]")

    @property
    def has_defense(self) -> bool:
        return self.defense_variant != "none"

    def replace(self, **changes) -> "Architecture":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _layer_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    widths = [arch.input_dim, *arch.hidden, arch.feature_dim]
    for i in range(len(widths) - 1):
        shapes[f"h{i}.W"] = (widths[i + 1], widths[i])
        shapes[f"h{i}.b"] = (widths[i + 1],)
    d, r = arch.feature_dim, arch.subspace_dim
    if arch.defense_variant.startswith("two_layer"):
        shapes.update({"proj.W": (r, d), "proj.b": (r,), "back.W": (d, r), "back.b": (d,)})
    elif arch.defense_variant.startswith("one_layer"):
        shapes.update({"filter.W": (d, d), "filter.b": (d,)})
    shapes["cls.W"] = (arch.classes, d)
    shapes["cls.b"] = (arch.classes,)
    return shapes


@dataclass
class DefenseNet:
    arch: Architecture
    params: dict[str, np.ndarray]
    seed: int | None = None

    def copy(self) -> "DefenseNet":
        return DefenseNet(self.arch, {k: v.copy() for k, v in self.params.items()}, self.seed)

    @property
    def n_extractor_layers(self) -> int:
        return len(self.arch.hidden) + 1


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list[np.ndarray]  # extractor pre-activations, one per layer
    acts: list[np.ndarray]  # extractor layer inputs; acts[0] is x
    h: np.ndarray
    defense_pre: np.ndarray | None
    h_r: np.ndarray | None
    h_hat: np.ndarray
    logits: np.ndarray
    defended: bool = field(default=True)


def init_params(arch: Architecture, rng: RngStream) -> DefenseNet:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases.

    Extractor, defense and classifier draw from separate substreams so adding a
    defense leaves the other parameters unchanged for a given seed.
    """
    params = {}
    for name, shape in _layer_shapes(arch).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        group = "defense" if name.split(".")[0] in ("proj", "back", "filter") else name.split(".")[0]
        fan_in = shape[1]
        params[name] = rng.child(f"init/{group}/{name}").normal_matrix(*shape) / np.sqrt(fan_in)
    return DefenseNet(arch=arch, params=params, seed=rng.seed)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def forward(net: DefenseNet, x, bypass_defense: bool = False) -> ForwardCache:
    """Run ``x -> h -> (Proj, Proj_b) -> logits``.

    ``bypass_defense`` feeds ``h`` straight to the classifier, which is the
    undefended path used by non-adaptive attacks.
    """
    arch, p = net.arch, net.params
    x = as_mat(x, "input batch")
    if x.shape[1] != arch.input_dim:
        raise DimensionError(f"input has {x.shape[1]} columns, network expects {arch.input_dim}")
    pre, acts = [], [x]
    a = x
    last = net.n_extractor_layers - 1
    for i in range(net.n_extractor_layers):
        z = a @ p[f"h{i}.W"].T + p[f"h{i}.b"]
        pre.append(z)
        if i < last:
            a = _act(z, arch.activation)
            acts.append(a)
    h = pre[-1]

    variant = "none" if bypass_defense else arch.defense_variant
    defense_pre = h_r = None
    if variant.startswith("two_layer"):
        defense_pre = h @ p["proj.W"].T + p["proj.b"]
        h_r = np.maximum(defense_pre, 0.0) if variant == "two_layer_relu" else defense_pre
        h_hat = h_r @ p["back.W"].T + p["back.b"]
    elif variant.startswith("one_layer"):
        defense_pre = h @ p["filter.W"].T + p["filter.b"]
        h_hat = np.maximum(defense_pre, 0.0) if variant == "one_layer_relu" else defense_pre
        h_r = h_hat
    else:
        h_hat = h
    logits = h_hat @ p["cls.W"].T + p["cls.b"]
    return ForwardCache(x=x, pre=pre, acts=acts, h=h, defense_pre=defense_pre, h_r=h_r,
                        h_hat=h_hat, logits=logits, defended=variant != "none")


def predict(net: DefenseNet, x, bypass_defense: bool = False) -> np.ndarray:
    return np.argmax(forward(net, x, bypass_defense).logits, axis=1)


def loss_ce(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValidationError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    probs = np.exp(shifted - log_norm[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / n


def per_row_ce(logits: np.ndarray, labels) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(len(labels)), labels]


def loss_recon(h: np.ndarray, h_hat: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch mean of squared reconstruction error; returns (loss, d/dh, d/dh_hat)."""
    if h.shape != h_hat.shape:
        raise DimensionError(f"h {h.shape} and h_hat {h_hat.shape} differ")
    diff = h - h_hat
    n = h.shape[0]
    loss = float(np.sum(diff * diff) / n)
    g = 2.0 * diff / n
    return loss, g, -g


def backward(net: DefenseNet, cache: ForwardCache, dlogits=None, dh_hat=None, dh=None):
    """Reverse pass for any loss whose upstream gradients enter at logits, h_hat and h.

    Returns ``(param_grads, dx)``.
    """
    arch, p = net.arch, net.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    n = cache.x.shape[0]
    g_hat = np.zeros_like(cache.h_hat) if dh_hat is None else np.array(dh_hat, dtype=np.float64)
    if dlogits is not None:
        grads["cls.W"] = dlogits.T @ cache.h_hat
        grads["cls.b"] = dlogits.sum(axis=0)
        g_hat = g_hat + dlogits @ p["cls.W"]

    variant = arch.defense_variant if cache.defended else "none"
    if variant.startswith("two_layer"):
        grads["back.W"] = g_hat.T @ cache.h_r
        grads["back.b"] = g_hat.sum(axis=0)
        g_r = g_hat @ p["back.W"]
        if variant == "two_layer_relu":
            g_r = g_r * (cache.defense_pre > 0)
        grads["proj.W"] = g_r.T @ cache.h
        grads["proj.b"] = g_r.sum(axis=0)
        g_h = g_r @ p["proj.W"]
    elif variant.startswith("one_layer"):
        g_pre = g_hat * (cache.defense_pre > 0) if variant == "one_layer_relu" else g_hat
        grads["filter.W"] = g_pre.T @ cache.h
        grads["filter.b"] = g_pre.sum(axis=0)
        g_h = g_pre @ p["filter.W"]
    else:
        g_h = g_hat
    if dh is not None:
        g_h = g_h + dh

    g = g_h
    for i in range(net.n_extractor_layers - 1, -1, -1):
        if i < net.n_extractor_layers - 1:
            g = g * _act_grad(cache.pre[i], cache.acts[i + 1], arch.activation)
        grads[f"h{i}.W"] = g.T @ cache.acts[i]
        grads[f"h{i}.b"] = g.sum(axis=0)
        g = g @ p[f"h{i}.W"]
    assert g.shape == (n, arch.input_dim)
    return grads, g


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(net: DefenseNet, grads: dict[str, np.ndarray], state: AdamState | None = None,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``net.params`` in place."""
    if state is None:
        state = AdamState.zeros_like(net.params)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, w in net.params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return net, state
