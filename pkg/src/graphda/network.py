"""Small from-scratch feature extractor and classifier.

Manual forward/backward passes over a declarative layer spec. The same
network instance is used for both streams of a Siamese setup, so weight
sharing holds by construction; parameter gradients from the two streams
are summed by the caller.

Layer spec entries (dicts):
    {"type": "conv", "kernel": 5, "filters": 6, "stride": 1}
    {"type": "maxpool", "window": 2}
    {"type": "relu"}
    {"type": "flatten"}
    {"type": "dense", "units": 120}
    {"type": "dropout", "keep_prob": 0.5}

A full network spec is {"input_shape": [...], "features": [...], "classes": K}.
Images are NCHW; embeddings are d x N (column per sample); class
probabilities are N x K rows.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from . import kernels

CHECKPOINT_MAGIC = b"GDK1"
CHECKPOINT_VERSION = 1


def spec_hash(spec: dict) -> bytes:
    """SHA-256 of the canonical JSON encoding of a network spec."""
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class _Layer:
    params: list

    def forward(self, x, training, rng):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError


class Dense(_Layer):
    def __init__(self, rng, in_dim, units):
        self.w = _glorot(rng, (units, in_dim), in_dim, units)
        self.b = np.zeros(units)
        self.params = [self.w, self.b]

    def forward(self, x, training, rng):
        return x @ self.w.T + self.b, x

    def backward(self, dout, cache):
        x = cache
        return dout @ self.w, [dout.T @ x, dout.sum(axis=0)]


class Conv2D(_Layer):
    def __init__(self, rng, in_channels, filters, kernel, stride):
        fan_in = in_channels * kernel * kernel
        fan_out = filters * kernel * kernel
        self.w = _glorot(rng, (filters, in_channels, kernel, kernel), fan_in, fan_out)
        self.b = np.zeros(filters)
        self.stride = stride
        self.params = [self.w, self.b]

    def forward(self, x, training, rng):
        return kernels.conv2d_forward(x, self.w, self.b, self.stride), x

    def backward(self, dout, cache):
        x = cache
        dx, dw, db = kernels.conv2d_backward(x, self.w, dout, self.stride)
        return dx, [dw, db]


class MaxPool2D(_Layer):
    params = []

    def __init__(self, window):
        self.window = window

    def forward(self, x, training, rng):
        y, argmax = kernels.maxpool2d_forward(x, self.window)
        return y, (x, argmax)

    def backward(self, dout, cache):
        x, argmax = cache
        return kernels.maxpool2d_backward(x, self.window, dout, argmax), []


class ReLU(_Layer):
    params = []

    def forward(self, x, training, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, cache):
        return dout * cache, []


class Flatten(_Layer):
    params = []

    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), []


class Dropout(_Layer):
    """Inverted dropout: activations scaled by 1/keep_prob at train time."""

    params = []

    def __init__(self, keep_prob):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError("keep_prob must be in (0, 1]")
        self.keep_prob = keep_prob

    def forward(self, x, training, rng):
        if not training or self.keep_prob >= 1.0:
            return x, None
        if rng is None:
            raise ValueError("training forward pass through dropout needs an rng")
        mask = (rng.random(x.shape) < self.keep_prob) / self.keep_prob
        return x * mask, mask

    def backward(self, dout, cache):
        if cache is None:
            return dout, []
        return dout * cache, []


def _build_layers(rng, spec):
    shape = tuple(spec["input_shape"])
    layers = []
    for entry in spec["features"]:
        kind = entry["type"]
        if kind == "conv":
            if len(shape) != 3:
                raise ValueError("conv layer needs a C,H,W input, got shape "
                                 f"{shape}")
            k = entry["kernel"]
            stride = entry.get("stride", 1)
            c, h, w = shape
            oh = (h - k) // stride + 1
            ow = (w - k) // stride + 1
            if oh <= 0 or ow <= 0:
                raise ValueError(f"kernel {k} does not fit input {h}x{w}")
            layers.append(Conv2D(rng, c, entry["filters"], k, stride))
            shape = (entry["filters"], oh, ow)
        elif kind == "maxpool":
            c, h, w = shape
            window = entry["window"]
            if h % window or w % window:
                raise ValueError(f"pool window {window} does not divide {h}x{w}")
            layers.append(MaxPool2D(window))
            shape = (c, h // window, w // window)
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "flatten":
            layers.append(Flatten())
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ValueError("dense layer needs flattened input")
            layers.append(Dense(rng, shape[0], entry["units"]))
            shape = (entry["units"],)
        elif kind == "dropout":
            layers.append(Dropout(entry["keep_prob"]))
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    if len(shape) != 1 or shape[0] <= 0:
        raise ValueError("feature stack must end in a flat, positive-dimensional output")
    return layers, shape[0]


def softmax(logits):
    """Row-wise softmax with max subtraction for overflow safety."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Network:
    """Feature extractor plus softmax classifier built from a spec dict."""

    def __init__(self, spec, seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.feature_layers, self.embed_dim = _build_layers(rng, spec)
        self.classes = spec["classes"]
        self.classifier = Dense(rng, self.embed_dim, self.classes)

    def parameters(self):
        """All parameter arrays (live references), feature layers first."""
        out = []
        for layer in self.feature_layers:
            out.extend(layer.params)
        out.extend(self.classifier.params)
        return out

    def embed(self, x, training=False, rng=None):
        """Run the feature extractor; returns (phi d x N, caches)."""
        h = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.feature_layers:
            h, cache = layer.forward(h, training, rng)
            caches.append(cache)
        return h.T, caches

    def classify(self, phi):
        """Class probabilities for an embedding batch; returns (probs N x K, cache)."""
        logits, cache = self.classifier.forward(phi.T, False, None)
        return softmax(logits), cache

    def backward_classifier(self, dlogits, cache):
        """Returns (dphi d x N, classifier parameter gradients)."""
        dx, grads = self.classifier.backward(dlogits, cache)
        return dx.T, grads

    def backward_features(self, dphi, caches):
        """Backpropagate an embedding gradient; returns feature parameter gradients."""
        dout = dphi.T
        grads = []
        for layer, cache in zip(reversed(self.feature_layers), reversed(caches)):
            dout, layer_grads = layer.backward(dout, cache)
            grads = layer_grads + grads
        return grads

    def predict(self, x):
        """Class probabilities straight from inputs (inference path)."""
        phi, _ = self.embed(x, training=False)
        probs, _ = self.classify(phi)
        return probs


class SGD:
    """SGD with momentum, multiplicative learning-rate decay, and L2.

    v <- mu*v - eta_t*(g + l2*theta); theta <- theta + v;
    eta_t = lr / (1 + decay * t) with t counting completed steps.
    """

    def __init__(self, lr, momentum=0.0, decay=0.0, l2=0.0):
        if lr <= 0:
            raise ValueError("learning rate must be > 0")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if decay < 0 or l2 < 0:
            raise ValueError("decay and l2 must be >= 0")
        self.lr = lr
        self.momentum = momentum
        self.decay = decay
        self.l2 = l2
        self.step_count = 0
        self.velocity = None

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("parameter/gradient count mismatch")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise ValueError("non-finite gradient; step rejected")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        eta = self.lr / (1.0 + self.decay * self.step_count)
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v -= eta * (g + self.l2 * p)
            p += v
        self.step_count += 1


def save_checkpoint(net: Network, path):
    """Versioned binary checkpoint: header, spec JSON, little-endian f8 tensors."""
    spec_blob = json.dumps(net.spec, sort_keys=True, separators=(",", ":")).encode()
    params = net.parameters()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(spec_hash(net.spec))
        f.write(struct.pack("<I", len(spec_blob)))
        f.write(spec_blob)
        f.write(struct.pack("<I", len(params)))
        for p in params:
            f.write(struct.pack("<I", p.ndim))
            f.write(struct.pack(f"<{p.ndim}I", *p.shape))
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a Network from a checkpoint written by `save_checkpoint`."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        stored_hash = f.read(32)
        (spec_len,) = struct.unpack("<I", f.read(4))
        spec = json.loads(f.read(spec_len).decode())
        if spec_hash(spec) != stored_hash:
            raise ValueError("checkpoint spec hash mismatch")
        net = Network(spec, seed=0)
        params = net.parameters()
        (count,) = struct.unpack("<I", f.read(4))
        if count != len(params):
            raise ValueError(f"checkpoint holds {count} tensors, spec needs {len(params)}")
        for p in params:
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            if shape != p.shape:
                raise ValueError(f"tensor shape {shape} does not match spec shape {p.shape}")
            data = np.frombuffer(f.read(8 * int(np.prod(shape))), dtype="<f8")
            p[...] = data.reshape(shape)
    return net


def lenet_like_spec(keep_prob=0.5, input_hw=28, classes=10):
    """Two 5x5 conv layers (6 and 16 filters) with 2x2 pooling, then dense
    layers of 120 and 84 units; 84-dimensional embedding."""
    return {
        "input_shape": [1, input_hw, input_hw],
        "features": [
            {"type": "conv", "kernel": 5, "filters": 6, "stride": 1},
            {"type": "relu"},
            {"type": "maxpool", "window": 2},
            {"type": "conv", "kernel": 5, "filters": 16, "stride": 1},
            {"type": "relu"},
            {"type": "maxpool", "window": 2},
            {"type": "flatten"},
            {"type": "dense", "units": 120},
            {"type": "relu"},
            {"type": "dropout", "keep_prob": keep_prob},
            {"type": "dense", "units": 84},
            {"type": "relu"},
        ],
        "classes": classes,
    }


def mlp_spec(input_dim, hidden, classes, keep_prob=1.0):
    """Small dense feature extractor for vector data."""
    features = []
    for units in hidden:
        features.append({"type": "dense", "units": units})
        features.append({"type": "relu"})
        if keep_prob < 1.0:
            features.append({"type": "dropout", "keep_prob": keep_prob})
    return {"input_shape": [input_dim], "features": features, "classes": classes}


def linear_spec(input_dim, embed_dim, classes):
    """Single dense layer, no activation: the linear embedding case."""
    return {
        "input_shape": [input_dim],
        "features": [{"type": "dense", "units": embed_dim}],
        "classes": classes,
    }
