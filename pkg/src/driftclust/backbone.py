"""Frozen feature extractors mapping raw samples to the trainable head's input.

Three kinds are supported: ``flatten`` (raw values), ``randproj`` (fixed
Gaussian projection with unit-norm rows), and ``tinyconv`` (two frozen 3x3
conv layers with ReLU and 2x2 mean pooling, then a fixed projection).
Parameters are drawn once from the spec seed and never trained.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import SeededRng

BACKBONE_KINDS = ("flatten", "randproj", "tinyconv")

_CONV1_CHANNELS = 8
_CONV2_CHANNELS = 16


@dataclass(frozen=True)
class BackboneSpec:
    kind: str
    input_shape: tuple  # (height, width, channels)
    output_dim: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if len(self.input_shape) != 3 or any(int(d) <= 0 for d in self.input_shape):
            raise ValueError(f"input_shape must be (height, width, channels) > 0, got {self.input_shape}")
        if self.output_dim <= 0:
            raise ValueError("output_dim must be positive")
        h, w, c = self.input_shape
        if self.kind == "flatten" and self.output_dim != h * w * c:
            raise ValueError(f"flatten output_dim must equal h*w*c = {h * w * c}, got {self.output_dim}")
        if self.kind == "tinyconv" and (_conv_stack_dim(h, w) is None):
            raise ValueError(f"input {h}x{w} too small for two 3x3 conv + pool stages")

    @property
    def flat_dim(self) -> int:
        h, w, c = self.input_shape
        return h * w * c


def _conv_stack_dim(h, w):
    """Flattened size after conv3x3(valid) -> pool2 -> conv3x3 -> pool2, or None."""
    for _ in range(2):
        h, w = h - 2, w - 2
        if h < 1 or w < 1:
            return None
        h = h // 2 if h >= 2 else h
        w = w // 2 if w >= 2 else w
    return h * w * _CONV2_CHANNELS


def _mean_pool2(x):
    """2x2 stride-2 mean pooling, per axis; axes shorter than 2 pass through."""
    h, w, c = x.shape
    if h >= 2:
        ph = h // 2
        x = x[: ph * 2].reshape(ph, 2, w, c).mean(axis=1)
        h = ph
    if w >= 2:
        pw = w // 2
        x = x[:, : pw * 2].reshape(h, pw, 2, c).mean(axis=2)
    return x


def to_float(sample: np.ndarray) -> np.ndarray:
    """Image bytes scaled to [0, 1]; float inputs pass through as float64."""
    if sample.dtype == np.uint8:
        return sample.astype(np.float64) / 255.0
    return np.asarray(sample, dtype=np.float64)


def _unit_rows(rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    p = np.empty((rows, cols))
    for r in range(rows):
        for c in range(cols):
            p[r, c] = rng.gauss()
        norm = np.sqrt(np.dot(p[r], p[r]))
        while norm == 0.0:  # measure-zero, but keep the row well defined
            for c in range(cols):
                p[r, c] = rng.gauss()
            norm = np.sqrt(np.dot(p[r], p[r]))
        p[r] /= norm
    return p


class Backbone:
    """Base class; concrete kinds implement _transform on a float sample."""

    def __init__(self, spec: BackboneSpec):
        self.spec = spec

    def extract(self, sample: np.ndarray) -> np.ndarray:
        if tuple(sample.shape) != tuple(self.spec.input_shape):
            raise ValueError(
                f"sample shape {sample.shape} does not match backbone input {self.spec.input_shape}"
            )
        return self._transform(to_float(sample))

    def extract_batch(self, samples: np.ndarray) -> np.ndarray:
        """Stacked extract over the leading axis."""
        self._check_batch(samples)
        out = np.empty((samples.shape[0], self.spec.output_dim))
        for i in range(samples.shape[0]):
            out[i] = self._transform(to_float(samples[i]))
        return out

    def _check_batch(self, samples):
        if tuple(samples.shape[1:]) != tuple(self.spec.input_shape):
            raise ValueError(
                f"sample shape {samples.shape[1:]} does not match backbone input {self.spec.input_shape}"
            )

    def _transform(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class FlattenBackbone(Backbone):
    def _transform(self, x):
        return x.reshape(-1)

    def extract_batch(self, samples):
        self._check_batch(samples)
        return to_float(samples).reshape(samples.shape[0], -1)


class RandomProjectionBackbone(Backbone):
    """Fixed Gaussian projection; rows normalised to unit Euclidean norm."""

    def __init__(self, spec):
        super().__init__(spec)
        rng = SeededRng(spec.seed)
        self.projection = _unit_rows(spec.output_dim, spec.flat_dim, rng)

    def _transform(self, x):
        return self.projection @ x.reshape(-1)

    def extract_batch(self, samples):
        self._check_batch(samples)
        flat = to_float(samples).reshape(samples.shape[0], -1)
        return flat @ self.projection.T


class TinyConvBackbone(Backbone):
    """Two frozen 3x3 valid convs (uniform weights in [-1, 1], no bias), each
    followed by ReLU and 2x2 stride-2 mean pooling, then a unit-row projection
    to output_dim."""

    def __init__(self, spec):
        super().__init__(spec)
        h, w, c = spec.input_shape
        rng = SeededRng(spec.seed)
        self.w1 = self._draw_conv(_CONV1_CHANNELS, c, rng)
        self.w2 = self._draw_conv(_CONV2_CHANNELS, _CONV1_CHANNELS, rng)
        self.projection = _unit_rows(spec.output_dim, _conv_stack_dim(h, w), rng)

    @staticmethod
    def _draw_conv(c_out, c_in, rng):
        w = np.empty((c_out, c_in, 3, 3))
        for idx in np.ndindex(w.shape):
            w[idx] = rng.uniform(-1.0, 1.0)
        return w

    @staticmethod
    def _conv_relu_pool(x, w):
        h, wd, c_in = x.shape
        c_out = w.shape[0]
        out = np.zeros((h - 2, wd - 2, c_out))
        for dy in range(3):
            for dx in range(3):
                patch = x[dy:h - 2 + dy, dx:wd - 2 + dx, :]
                out += patch @ w[:, :, dy, dx].T
        return _mean_pool2(np.maximum(out, 0.0))

    def _transform(self, x):
        y = self._conv_relu_pool(x, self.w1)
        y = self._conv_relu_pool(y, self.w2)
        return self.projection @ y.reshape(-1)


def build_backbone(spec: BackboneSpec) -> Backbone:
    if spec.kind == "flatten":
        return FlattenBackbone(spec)
    if spec.kind == "randproj":
        return RandomProjectionBackbone(spec)
    return TinyConvBackbone(spec)
