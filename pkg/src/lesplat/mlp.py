"""Small MLPs for the semantic pipeline, with hand-written backprop.

``DecoderMLP`` maps a compact per-Gaussian feature to a distribution over
codebook indices (ReLU hidden layer, softmax output). ``SmoothingMLP`` maps
a sinusoidally encoded 3D position to a compact feature and provides the
spatially smoothed target used by the smoothing loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN_UNITS = 64
ENCODING_FREQUENCIES = 4
ENCODED_DIM = 3 + 3 * 2 * ENCODING_FREQUENCIES  # raw xyz + sin/cos octaves


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def positional_encoding(positions: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Encode (n, 3) positions as (n, 27): raw xyz plus 4 sin/cos octaves.

    ``scale`` normalizes scene units so encoded coordinates stay O(1);
    pass the scene radius for well-conditioned smoother training.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=np.float64)) / scale
    parts = [p]
    for i in range(ENCODING_FREQUENCIES):
        parts.append(np.sin((2.0**i) * p))
        parts.append(np.cos((2.0**i) * p))
    return np.concatenate(parts, axis=1)


def _init_layer(rng, fan_in, fan_out, zero=False):
    # The smoother's output layer starts at zero so the smoothed field
    # begins at the origin (near the freshly initialized features) instead
    # of oscillating through the first training steps.
    if zero:
        return np.zeros((fan_in, fan_out)), np.zeros(fan_out)
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    b = np.full(fan_out, 0.01)
    return w, b


@dataclass
class DecoderMLP:
    """feature_dim -> hidden -> k, ReLU hidden, softmax output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, feature_dim: int, k: int, hidden: int = HIDDEN_UNITS, seed: int = 0):
        rng = np.random.default_rng(seed)
        w1, b1 = _init_layer(rng, feature_dim, hidden)
        w2, b2 = _init_layer(rng, hidden, k)
        return cls(w1=w1, b1=b1, w2=w2, b2=b2)

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def k(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def to_json_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.params().items()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "DecoderMLP":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in ("w1", "b1", "w2", "b2")})


def decode(mlp: DecoderMLP, features: np.ndarray) -> np.ndarray:
    """Distribution over the k indices; rows sum to 1, entries positive."""
    probs, _ = decoder_forward(mlp.params(), np.atleast_2d(features))
    return probs[0] if np.asarray(features).ndim == 1 else probs


def decoder_forward(params: dict, features: np.ndarray):
    """Returns (probs, cache). ``features`` is (n, feature_dim)."""
    z1 = features @ params["w1"] + params["b1"]
    h = np.maximum(z1, 0.0)
    logits = h @ params["w2"] + params["b2"]
    probs = softmax(logits)
    return probs, (features, z1, h, probs)


def decoder_backward(params: dict, cache, dprobs: np.ndarray):
    """Gradients for a loss in terms of softmax output.

    Returns (param gradients, gradient w.r.t. the input features).
    """
    features, z1, h, probs = cache
    # softmax Jacobian applied row-wise
    dlogits = probs * (dprobs - np.sum(dprobs * probs, axis=1, keepdims=True))
    grads = {
        "w2": h.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    dh = dlogits @ params["w2"].T
    dz1 = dh * (z1 > 0)
    grads["w1"] = features.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    dfeatures = dz1 @ params["w1"].T
    return grads, dfeatures


@dataclass
class SmoothingMLP:
    """encoded position (27) -> hidden -> feature_dim.

    ``position_scale`` records the normalization the network was trained
    with, so saved models reproduce the same field.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    position_scale: float = 1.0

    @classmethod
    def init(cls, feature_dim: int, hidden: int = HIDDEN_UNITS, seed: int = 0,
             position_scale: float = 1.0):
        rng = np.random.default_rng(seed)
        w1, b1 = _init_layer(rng, ENCODED_DIM, hidden)
        w2, b2 = _init_layer(rng, hidden, feature_dim, zero=True)
        return cls(w1=w1, b1=b1, w2=w2, b2=b2, position_scale=position_scale)

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def to_json_dict(self) -> dict:
        d = {k: v.tolist() for k, v in self.params().items()}
        d["position_scale"] = self.position_scale
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SmoothingMLP":
        arrays = {k: np.asarray(d[k], dtype=np.float64) for k in ("w1", "b1", "w2", "b2")}
        return cls(position_scale=float(d.get("position_scale", 1.0)), **arrays)


def smooth_features(mlp: SmoothingMLP, positions: np.ndarray) -> np.ndarray:
    out, _ = smoother_forward(mlp.params(), positional_encoding(positions, mlp.position_scale))
    return out


def smoother_forward(params: dict, encoded: np.ndarray):
    z1 = encoded @ params["w1"] + params["b1"]
    h = np.maximum(z1, 0.0)
    out = h @ params["w2"] + params["b2"]
    return out, (encoded, z1, h)


def smoother_backward(params: dict, cache, dout: np.ndarray):
    encoded, z1, h = cache
    grads = {
        "w2": h.T @ dout,
        "b2": dout.sum(axis=0),
    }
    dh = dout @ params["w2"].T
    dz1 = dh * (z1 > 0)
    grads["w1"] = encoded.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads
