"""Small fully-connected networks with exact backprop and Adam.

Only the fixed MLP topology the toy task needs: a chain of affine layers, each
followed by an elementwise activation. Weights are stored ``[out, in]`` and
everything runs in float64.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DatasetFormatError, DimensionError, NumericalError
from .rng import Rng

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, a):
    """Derivative of the activation at pre-activation ``z`` (output ``a``)."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionError(
                f"bias has {self.bias.shape[0]} entries but weight has {self.weight.shape[0]} rows"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpModel:
    """Feed-forward network as an ordered list of layers."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MlpModel needs at least one layer")
        for k in range(len(self.layers) - 1):
            if self.layers[k].out_dim != self.layers[k + 1].in_dim:
                raise DimensionError(
                    f"layer {k} outputs {self.layers[k].out_dim} values "
                    f"but layer {k + 1} expects {self.layers[k + 1].in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def __call__(self, x):
        return forward(self, x)


def init_mlp(sizes, activations, rng: Rng) -> MlpModel:
    """Glorot-uniform initialised MLP.

    ``sizes`` lists layer widths including input and output, e.g. ``[2, 64, 2]``;
    ``activations`` has one entry per affine layer.
    """
    sizes = list(sizes)
    activations = list(activations)
    if len(activations) != len(sizes) - 1:
        raise ValueError("need exactly one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), act))
    return MlpModel(layers)


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.input_dim:
        raise DimensionError(
            f"expected input of dimension {model.input_dim}, got shape {x.shape}"
        )
    return xb, single


def _forward_cache(model, xb):
    acts = [xb]
    pre = []
    a = xb
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = _activate(layer.activation, z)
        pre.append(z)
        acts.append(a)
    return pre, acts


def forward(model: MlpModel, x) -> np.ndarray:
    """Network output for a point ``(L,)`` or a batch ``(n, L)``."""
    xb, single = _as_batch(model, x)
    a = xb
    for layer in model.layers:
        a = _activate(layer.activation, a @ layer.weight.T + layer.bias)
    return a[0] if single else a


def backward(model: MlpModel, x, loss_grad, *, return_input_grad=False, from_preactivation=False):
    """Gradients of a loss w.r.t. every weight and bias.

    ``loss_grad`` is dL/d(output), same leading shape as ``x``. For a batch the
    parameter gradients are summed over rows. With ``from_preactivation=True``
    the gradient is taken w.r.t. the last layer's pre-activation instead,
    which is how a sigmoid output is paired with a logit-space loss.

    Returns a list ``[dW0, db0, dW1, db1, ...]`` aligned with
    :meth:`MlpModel.params`; with ``return_input_grad`` also dL/dx.
    """
    xb, single = _as_batch(model, x)
    g = np.asarray(loss_grad, dtype=np.float64)
    g = g[None, :] if single else g
    if g.shape != (xb.shape[0], model.output_dim):
        raise DimensionError(
            f"loss_grad must have shape {(xb.shape[0], model.output_dim)}, got {np.shape(loss_grad)}"
        )
    pre, acts = _forward_cache(model, xb)
    grads = [None] * (2 * len(model.layers))
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if not (from_preactivation and k == len(model.layers) - 1):
            g = g * _activation_grad(layer.activation, pre[k], acts[k + 1])
        grads[2 * k] = g.T @ acts[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ layer.weight
    if return_input_grad:
        return grads, (g[0] if single else g)
    return grads


@dataclass
class AdamState:
    """Adam moment accumulators for one model."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_model(cls, model: MlpModel, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        params = model.params()
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(model: MlpModel, state: AdamState, grads):
    """Apply one Adam update in place; returns ``(model, state)``.

    Raises NumericalError, leaving model and state untouched, if a gradient is
    non-finite or the update would make any parameter non-finite.
    """
    params = model.params()
    if len(grads) != len(params):
        raise DimensionError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise DimensionError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient passed to adam_step")

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            new_p.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
            new_m.append(m)
            new_v.append(v)
    if not all(np.all(np.isfinite(p)) for p in new_p):
        raise NumericalError("Adam update would produce non-finite parameters")

    for p, upd in zip(params, new_p):
        p[...] = upd
    state.m, state.v, state.step = new_m, new_v, t
    return model, state


# -- checkpoints ------------------------------------------------------------


def model_to_dict(model: MlpModel) -> dict:
    return {
        "architecture": {
            "input_dim": model.input_dim,
            "output_dim": model.output_dim,
            "layers": [
                {"in": l.in_dim, "out": l.out_dim, "activation": l.activation}
                for l in model.layers
            ],
        },
        # row-major; json writes floats with repr so the round trip is exact
        "weights": [l.weight.ravel().tolist() for l in model.layers],
        "biases": [l.bias.tolist() for l in model.layers],
    }


def model_from_dict(doc: dict) -> MlpModel:
    try:
        arch = doc["architecture"]["layers"]
        layers = []
        for spec, w, b in zip(arch, doc["weights"], doc["biases"], strict=True):
            weight = np.asarray(w, dtype=np.float64).reshape(spec["out"], spec["in"])
            layers.append(Layer(weight, np.asarray(b, dtype=np.float64), spec["activation"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed model checkpoint: {exc}") from exc
    return MlpModel(layers)


def save_checkpoint(path, model: MlpModel, **extra) -> None:
    """Write a model as one JSON document; ``extra`` keys (e.g. sigma_sq) are added."""
    doc = model_to_dict(model)
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> tuple[MlpModel, dict]:
    """Return ``(model, doc)`` so callers can read extra fields."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc), doc


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
