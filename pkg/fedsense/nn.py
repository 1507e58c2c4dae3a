"""
Feedforward classifier used by every sensor: 32 -> 128 -> 64 -> 32 -> 2, ReLU hidden
layers, softmax output, crossentropy loss, inverted dropout and RMSprop.

Gradients are derived by hand for this layer family; there is no autodiff.
"""

import math
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from fedsense.signal import FeatureDataset
from fedsense.sim_models import TrainConfig

LAYER_SIZES: Tuple[int, ...] = (32, 128, 64, 32, 2)

MODEL_MAGIC = b"FDSN"
MODEL_FORMAT_VERSION = 1
# magic, version, layer count, reserved
MODEL_HEADER = struct.Struct("<4sIII")
FLOAT_BYTES = 4

PROB_FLOOR = 1e-12

ForwardMode = Literal["train", "inference"]


@dataclass
class ModelParams:
    """Per-layer weight matrices (fan_in, fan_out) and bias vectors."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("a model needs the same non-zero number of weight matrices and bias vectors")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weights {w.shape} and biases {b.shape} do not fit")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} expects {w.shape[0]} inputs, previous layer gives {self.weights[i - 1].shape[1]}")

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> List[np.ndarray]:
        """All parameter arrays in serialization order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def same_shape(self, other: "ModelParams") -> bool:
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams) or not self.same_shape(other):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class OptimizerState:
    """RMSprop moving averages of squared gradients, shaped like the model."""

    weights_sq: List[np.ndarray]
    biases_sq: List[np.ndarray]

    def copy(self) -> "OptimizerState":
        return OptimizerState([v.copy() for v in self.weights_sq], [v.copy() for v in self.biases_sq])


def init_model(rng: np.random.Generator, layer_sizes: Sequence[int] = LAYER_SIZES) -> ModelParams:
    """
    Draw a fresh model: He-style uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases.

    Args:
        rng: Random source
        layer_sizes: Input size, hidden sizes, output size

    Returns:
        New ModelParams
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output size")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases)


def init_optimizer(model: ModelParams) -> OptimizerState:
    return OptimizerState([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])


def count_parameters(model: ModelParams) -> int:
    return sum(a.size for a in model.arrays())


# === FORWARD / BACKWARD ===

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _as_batch(model: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.layer_sizes[0]:
        raise ValueError(f"expected {model.layer_sizes[0]} features per sample, got shape {x.shape}")
    return x.reshape(-1, model.layer_sizes[0])


def _forward_pass(
    model: ModelParams,
    x: np.ndarray,
    dropout_rate: float,
    rng: Optional[np.random.Generator],
):
    inputs = []  # input of each layer, after dropout
    pre_activations = []
    masks = []
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(model.layers):
        inputs.append(a)
        z = a @ w + b
        if i == last:
            return softmax(z), (inputs, pre_activations, masks)
        a = np.maximum(z, 0.0)
        mask = None
        if dropout_rate > 0:
            keep = 1.0 - dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        pre_activations.append(z)
        masks.append(mask)


def forward(
    model: ModelParams,
    features: np.ndarray,
    mode: ForwardMode = "inference",
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Class probabilities for one sample (shape (32,)) or a batch (shape (n, 32)).

    Args:
        model: Model parameters
        features: Feature vector or matrix
        mode: "inference" never drops units; "train" applies inverted dropout
        dropout_rate: Drop probability for hidden units in train mode
        rng: Random source for the dropout mask (train mode only)

    Returns:
        Probabilities with the same leading shape as features
    """
    x = _as_batch(model, features)
    rate = dropout_rate if mode == "train" else 0.0
    if rate > 0 and rng is None:
        raise ValueError("train mode with dropout needs a random source")
    probs, _ = _forward_pass(model, x, rate, rng)
    return probs[0] if np.ndim(features) == 1 else probs


def crossentropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.clip(picked, PROB_FLOOR, 1.0))))


def loss_and_gradients(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, ModelParams]:
    """
    Mean crossentropy over a batch and its gradient for every parameter.

    Returns:
        (loss, gradients shaped like the model)
    """
    x = _as_batch(model, features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) != len(x):
        raise ValueError(f"{len(x)} samples but {len(y)} labels")
    if dropout_rate > 0 and rng is None:
        raise ValueError("dropout needs a random source")

    probs, (inputs, pre_activations, masks) = _forward_pass(model, x, dropout_rate, rng)
    loss = crossentropy(probs, y)

    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)

    n_layers = len(model.weights)
    grad_w: List[np.ndarray] = [None] * n_layers
    grad_b: List[np.ndarray] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        upstream = delta @ model.weights[i].T
        if masks[i - 1] is not None:
            upstream = upstream * masks[i - 1]
        delta = upstream * (pre_activations[i - 1] > 0)

    return loss, ModelParams(grad_w, grad_b)


def _rmsprop_step(model: ModelParams, opt: OptimizerState, grads: ModelParams, cfg: TrainConfig) -> None:
    params = model.weights + model.biases
    squares = opt.weights_sq + opt.biases_sq
    for p, v, g in zip(params, squares, grads.weights + grads.biases):
        v *= cfg.rmsprop_decay
        v += (1.0 - cfg.rmsprop_decay) * g * g
        p -= cfg.learning_rate * g / (np.sqrt(v) + cfg.rmsprop_epsilon)


def train_local(
    model: ModelParams,
    opt: OptimizerState,
    data: FeatureDataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Tuple[ModelParams, OptimizerState]:
    """
    Run cfg.local_epochs epochs of shuffled mini-batch RMSprop on local data.

    The inputs are left untouched; updated copies are returned.

    Args:
        model: Starting model
        opt: Starting optimizer state
        data: Local training data
        cfg: Training hyperparameters
        rng: Random source for shuffling and dropout masks

    Returns:
        (updated model, updated optimizer state)
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")

    model = model.copy()
    opt = opt.copy()
    n = len(data)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, grads = loss_and_gradients(
                model, data.features[batch], data.labels[batch], cfg.dropout_rate, rng
            )
            _rmsprop_step(model, opt, grads, cfg)
    return model, opt


def predict(model: ModelParams, features: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, np.atleast_2d(features)), axis=1)


def evaluate(model: ModelParams, data: FeatureDataset) -> float:
    """Fraction of samples whose most probable class equals the label (no dropout)."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, data.features) == data.labels))


# === SERIALIZATION ===

def packet_size_bytes(model: ModelParams) -> int:
    """Size of the model as one packet: header plus float32 parameters."""
    return MODEL_HEADER.size + FLOAT_BYTES * count_parameters(model)


def model_to_bytes(model: ModelParams) -> bytes:
    header = MODEL_HEADER.pack(MODEL_MAGIC, MODEL_FORMAT_VERSION, len(model.weights), 0)
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in model.arrays())
    return header + body


def model_from_bytes(data: bytes, layer_sizes: Sequence[int] = LAYER_SIZES) -> ModelParams:
    """
    Decode a model packet.

    Args:
        data: Bytes produced by model_to_bytes
        layer_sizes: Architecture the packet was encoded from

    Returns:
        ModelParams (float64)
    """
    if len(data) < MODEL_HEADER.size:
        raise ValueError("model packet shorter than its header")
    magic, version, n_layers, _ = MODEL_HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ValueError(f"bad model magic {magic!r}")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    if n_layers != len(layer_sizes) - 1:
        raise ValueError(f"packet has {n_layers} layers, architecture {tuple(layer_sizes)} has {len(layer_sizes) - 1}")

    values = np.frombuffer(data, dtype="<f4", offset=MODEL_HEADER.size).astype(np.float64)
    expected = sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
    if values.size != expected:
        raise ValueError(f"packet holds {values.size} parameters, expected {expected}")

    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(values[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out))
        pos += fan_in * fan_out
        biases.append(values[pos:pos + fan_out].copy())
        pos += fan_out
    return ModelParams(weights, biases)


def model_to_json(model: ModelParams) -> Dict[str, Any]:
    return {
        "layer_sizes": list(model.layer_sizes),
        "layers": [{"weights": w.tolist(), "biases": b.tolist()} for w, b in model.layers],
    }


def model_from_json(data: Dict[str, Any]) -> ModelParams:
    layers = data["layers"]
    return ModelParams(
        [np.asarray(layer["weights"], dtype=np.float64) for layer in layers],
        [np.asarray(layer["biases"], dtype=np.float64) for layer in layers],
    )
