"""Desk-scale classifier with manually derived gradients and an Adam optimizer.

The default network is ``x -> ReLU((W + dW) x + b0) -> W_head (.) + b1`` where
``W`` (d x d) is the matrix under study. In PEFT mode only the adapter on
``W`` trains; in Full-FT mode every weight and bias trains and there is no
adapter.
"""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import adapters as ad
from .errors import ShapeError
from .linalg import RngStream

ACTIVATIONS = ("identity", "relu")


@dataclass
class Layer:
    w: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    adapter: Optional[ad.Adapter] = None
    adaptable: bool = False

    def effective_weight(self) -> np.ndarray:
        if self.adapter is None:
            return self.w
        return self.w + self.adapter.delta_w()

    def pre_activation(self, x):
        if self.adapter is None:
            z = self.w @ x
        else:
            z = self.adapter.forward(self.w, x)
        return z + self.bias[:, None]


@dataclass
class ToyModel:
    layers: List[Layer]
    n_classes: int
    full_ft: bool = False

    def __post_init__(self):
        if self.layers[-1].w.shape[0] != self.n_classes:
            raise ShapeError("final layer width must equal n_classes")
        if self.full_ft and any(layer.adapter is not None for layer in self.layers):
            raise ValueError("Full-FT models carry no adapters")

    @property
    def d_in(self) -> int:
        return self.layers[0].w.shape[1]

    def adapted_index(self) -> int:
        for i, layer in enumerate(self.layers):
            if layer.adaptable:
                return i
        raise ValueError("model has no adaptable layer")

    def adapted_layer(self) -> Layer:
        return self.layers[self.adapted_index()]

    def clone(self) -> "ToyModel":
        return copy.deepcopy(self)


def build_toy_model(d: int, n_classes: int, stream: RngStream, n_layers: int = 2,
                    full_ft: bool = False) -> ToyModel:
    """Random backbone: adapted d x d ReLU layer followed by a fixed classifier head.

    ``n_layers=1`` gives a single adaptable linear layer (n_classes x d).
    """
    if n_layers == 1:
        w = stream.standard_normal((n_classes, d)) / np.sqrt(d)
        layers = [Layer(w, np.zeros(n_classes), "identity", adaptable=True)]
    elif n_layers == 2:
        w0 = stream.standard_normal((d, d)) * np.sqrt(2.0 / d)
        w1 = stream.standard_normal((n_classes, d)) / np.sqrt(d)
        layers = [
            Layer(w0, np.zeros(d), "relu", adaptable=True),
            Layer(w1, np.zeros(n_classes), "identity"),
        ]
    else:
        raise ValueError("n_layers must be 1 or 2")
    return ToyModel(layers, n_classes, full_ft=full_ft)


def forward_logits(model: ToyModel, x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != model.d_in:
        raise ShapeError(f"input has shape {a.shape}, expected ({model.d_in}, batch)")
    for layer in model.layers:
        z = layer.pre_activation(a)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a


def trainable_params(model: ToyModel) -> Dict[str, np.ndarray]:
    params = {}
    for i, layer in enumerate(model.layers):
        if model.full_ft:
            params[f"{i}.w"] = layer.w
            params[f"{i}.bias"] = layer.bias
        elif layer.adapter is not None:
            for name, value in layer.adapter.trainable_params().items():
                params[f"{i}.adapter.{name}"] = value
    return params


def param_masks(model: ToyModel) -> Dict[str, np.ndarray]:
    masks = {}
    if model.full_ft:
        return masks
    for i, layer in enumerate(model.layers):
        if layer.adapter is not None:
            for name, value in layer.adapter.param_masks().items():
                masks[f"{i}.adapter.{name}"] = value
    return masks


def set_params(model: ToyModel, params: Dict[str, np.ndarray]) -> None:
    grouped: Dict[int, Dict[str, np.ndarray]] = {}
    for key, value in params.items():
        idx, rest = key.split(".", 1)
        layer = model.layers[int(idx)]
        if rest == "w":
            layer.w = value
        elif rest == "bias":
            layer.bias = value
        else:
            grouped.setdefault(int(idx), {})[rest.split(".", 1)[1]] = value
    for idx, group in grouped.items():
        model.layers[idx].adapter.set_params(group)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0))
    batch = logits.shape[1]
    cols = np.arange(batch)
    loss = float(np.mean(log_z - shifted[labels, cols]))
    probs = np.exp(shifted - log_z)
    probs[labels, cols] -= 1.0
    return loss, probs / batch


@dataclass
class Backprop:
    loss: float
    grads: Dict[str, np.ndarray]
    # per layer: (layer input, dL/d pre-activation)
    taps: List[tuple]


def backprop(model: ToyModel, x, labels) -> Backprop:
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != model.d_in:
        raise ShapeError(f"input has shape {x.shape}, expected ({model.d_in}, batch)")
    if labels.shape != (x.shape[1],):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for batch of {x.shape[1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= model.n_classes):
        raise ValueError(f"labels must lie in [0, {model.n_classes})")

    inputs, pre = [], []
    a = x
    for layer in model.layers:
        inputs.append(a)
        z = layer.pre_activation(a)
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z

    loss, upstream = softmax_cross_entropy(a, labels)
    grads: Dict[str, np.ndarray] = {}
    taps: List[tuple] = [None] * len(model.layers)
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if layer.activation == "relu":
            upstream = upstream * (pre[i] > 0)
        taps[i] = (inputs[i], upstream)
        if model.full_ft:
            grads[f"{i}.w"] = upstream @ inputs[i].T
            grads[f"{i}.bias"] = upstream.sum(axis=1)
        elif layer.adapter is not None:
            for name, g in layer.adapter.backward(layer.w, inputs[i], upstream).items():
                grads[f"{i}.adapter.{name}"] = g
        if i > 0:
            upstream = layer.effective_weight().T @ upstream
    return Backprop(loss, grads, taps)


def loss_and_grads(model: ToyModel, x, labels):
    out = backprop(model, x, labels)
    return out.loss, out.grads


def evaluate(model: ToyModel, x, labels):
    """(mean cross-entropy, accuracy) on a full dataset."""
    logits = forward_logits(model, x)
    loss, _ = softmax_cross_entropy(logits, np.asarray(labels))
    acc = float(np.mean(np.argmax(logits, axis=0) == labels))
    return loss, acc


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    # optional per-parameter learning rates, keyed by a suffix of the parameter name
    lr_overrides: Dict[str, float] = field(default_factory=dict)

    def lr_for(self, name: str) -> float:
        for suffix, lr in self.lr_overrides.items():
            if name.endswith(suffix):
                return lr
        return self.learning_rate


def adam_step(state: AdamState, params, grads, masks=None):
    """One bias-corrected Adam update.

    Entries where ``masks[name]`` is False keep both their value and their
    moment estimates. Returns ``(new_params, state)``; ``state`` is updated in
    place.
    """
    masks = masks or {}
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    new_params = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m_new = state.beta1 * m + (1.0 - state.beta1) * g
        v_new = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p_new = p - state.lr_for(name) * (m_new / c1) / (np.sqrt(v_new / c2) + state.epsilon)
        mask = masks.get(name)
        if mask is not None:
            m_new = np.where(mask, m_new, m)
            v_new = np.where(mask, v_new, v)
            p_new = np.where(mask, p_new, p)
        state.first_moment[name] = m_new
        state.second_moment[name] = v_new
        new_params[name] = p_new
    return new_params, state


def sgd_step(params, grads, lr, masks=None):
    masks = masks or {}
    out = {}
    for name, p in params.items():
        p_new = p - lr * grads[name]
        mask = masks.get(name)
        out[name] = np.where(mask, p_new, p) if mask is not None else p_new
    return out


def train_steps(model: ToyModel, x, labels, n_steps: int, state: AdamState, stream: RngStream,
                batch_size: int = 32, optimizer: str = "adam") -> List[float]:
    """Run ``n_steps`` minibatch steps (sampled with replacement). Returns the step losses."""
    n = x.shape[1]
    losses = []
    masks = param_masks(model)
    for _ in range(n_steps):
        idx = stream.integers(0, n, size=batch_size)
        loss, grads = loss_and_grads(model, x[:, idx], labels[idx])
        params = trainable_params(model)
        if optimizer == "adam":
            new_params, _ = adam_step(state, params, grads, masks)
        elif optimizer == "sgd":
            new_params = sgd_step(params, grads, state.learning_rate, masks)
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
        set_params(model, new_params)
        losses.append(loss)
    return losses


def full_ft_delta(model_before: ToyModel, model_after: ToyModel) -> Dict[int, np.ndarray]:
    """W_after - W_before for every adaptable layer."""
    if len(model_before.layers) != len(model_after.layers):
        raise ShapeError("architecture mismatch: different layer counts")
    out = {}
    for i, (lb, la) in enumerate(zip(model_before.layers, model_after.layers)):
        if lb.w.shape != la.w.shape or lb.adaptable != la.adaptable:
            raise ShapeError(f"architecture mismatch at layer {i}")
        if lb.adaptable:
            out[i] = la.effective_weight() - lb.effective_weight()
    return out


_CKPT_MAGIC = b"FRCK"
_CKPT_VERSION = 1


def save_checkpoint(model: ToyModel, path) -> None:
    parts = [_CKPT_MAGIC, struct.pack("<HIIB", _CKPT_VERSION, len(model.layers), model.n_classes,
                                      int(model.full_ft))]
    for layer in model.layers:
        blob = ad.serialize(layer.adapter) if layer.adapter is not None else b""
        parts.append(struct.pack("<BBI", ACTIVATIONS.index(layer.activation), int(layer.adaptable),
                                 len(blob)))
        parts.append(ad.pack_matrix(layer.w))
        parts.append(ad.pack_matrix(layer.bias[None, :]))
        parts.append(blob)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> ToyModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, n_layers, n_classes, full_ft = struct.unpack_from("<HIIB", buf, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<HIIB")
    layers = []
    for _ in range(n_layers):
        act, adaptable, blob_len = struct.unpack_from("<BBI", buf, offset)
        offset += struct.calcsize("<BBI")
        w, offset = ad.unpack_matrix(buf, offset)
        bias, offset = ad.unpack_matrix(buf, offset)
        adapter = ad.deserialize(buf[offset:offset + blob_len]) if blob_len else None
        offset += blob_len
        layers.append(Layer(w, bias[0].copy(), ACTIVATIONS[act], adapter, bool(adaptable)))
    return ToyModel(layers, n_classes, bool(full_ft))
