"""Trainable two-layer ReLU head trained with an SSE objective.

The head maps a backbone vector x through a hidden layer (the clustering
feature h) and an output layer scored against one-hot pseudo-labels:

    u_hidden = W1 @ x        h = relu(u_hidden)
    u_out    = W2 @ h        y = relu(u_out)
    loss     = 1/2 * sum_j (y_j - t_j)^2

Gradients are hand-derived with the ReLU derivative taken as the indicator
1[u > 0] (zero at u == 0). Each SGD step records the raw gradients it
applied, so the hidden feature under the previous weights can be
reconstructed later as relu((W1 + eta * last_delta1) @ x); that rollback is
what keeps centroid updates consistent with the features they were assigned
under.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, SeededRng, matrix


class NoHistoryError(RuntimeError):
    """Rollback requested before any SGD step was taken."""


@dataclass
class ForwardTrace:
    x: np.ndarray
    u_hidden: np.ndarray
    h: np.ndarray
    u_out: np.ndarray
    y: np.ndarray


def one_hot(k: int, label: int) -> np.ndarray:
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    t = np.zeros(k)
    t[label] = 1.0
    return t


def _check_one_hot(t: np.ndarray):
    if t.ndim != 1:
        raise ValueError("target must be a 1-D one-hot vector")
    ones = np.count_nonzero(t == 1.0)
    if ones != 1 or np.count_nonzero(t) != ones:
        raise ValueError("target must be one-hot (exactly one 1, rest 0)")


def sse_loss(y: np.ndarray, t: np.ndarray) -> float:
    """Half the sum of squared errors between prediction and one-hot target."""
    if y.shape != t.shape:
        raise DimensionError(f"loss dimension mismatch: {y.shape} vs {t.shape}")
    _check_one_hot(t)
    d = y - t
    return 0.5 * float(np.dot(d, d))


class FeatureHead:
    def __init__(self, w_hidden, w_out, eta, last_delta_hidden=None, last_delta_out=None):
        self.w_hidden = matrix(w_hidden)
        self.w_out = matrix(w_out)
        if self.w_out.shape[1] != self.w_hidden.shape[0]:
            raise DimensionError(
                f"output layer expects {self.w_out.shape[1]} hidden units, head has {self.w_hidden.shape[0]}"
            )
        if eta < 0:
            raise ValueError("learning rate must be nonnegative")
        self.eta = float(eta)
        self.last_delta_hidden = None if last_delta_hidden is None else matrix(last_delta_hidden)
        self.last_delta_out = None if last_delta_out is None else matrix(last_delta_out)
        for delta, w in ((self.last_delta_hidden, self.w_hidden), (self.last_delta_out, self.w_out)):
            if delta is not None and delta.shape != w.shape:
                raise DimensionError(f"stored delta shape {delta.shape} does not match weights {w.shape}")

    @property
    def input_dim(self):
        return self.w_hidden.shape[1]

    @property
    def hidden_dim(self):
        return self.w_hidden.shape[0]

    @property
    def k(self):
        return self.w_out.shape[0]

    def copy(self):
        return FeatureHead(
            self.w_hidden.copy(),
            self.w_out.copy(),
            self.eta,
            None if self.last_delta_hidden is None else self.last_delta_hidden.copy(),
            None if self.last_delta_out is None else self.last_delta_out.copy(),
        )

    def forward(self, x: np.ndarray) -> ForwardTrace:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise DimensionError(f"input shape {x.shape} does not match head input dim {self.input_dim}")
        u_hidden = self.w_hidden @ x
        h = np.maximum(u_hidden, 0.0)
        u_out = self.w_out @ h
        y = np.maximum(u_out, 0.0)
        return ForwardTrace(x=x, u_hidden=u_hidden, h=h, u_out=u_out, y=y)

    def hidden_batch(self, xs: np.ndarray) -> np.ndarray:
        """Hidden features for a stack of inputs (rows), read-only weights."""
        return np.maximum(xs @ self.w_hidden.T, 0.0)

    def backward(self, trace: ForwardTrace, t: np.ndarray):
        """Loss gradients w.r.t. both weight matrices for one sample.

        grad_out[j, i]  = (y_j - t_j) * 1[u_out_j > 0] * h_i
        grad_hidden[i, m]  = sum_j[(y_j - t_j) * 1[u_out_j > 0] * w_out[j, i]]
                          * 1[u_hidden_i > 0] * x_m
        """
        if trace.x.shape[0] != self.input_dim or trace.h.shape[0] != self.hidden_dim \
                or trace.y.shape[0] != self.k:
            raise DimensionError("trace does not match this head's shapes")
        if t.shape != trace.y.shape:
            raise DimensionError(f"target shape {t.shape} does not match output dim {self.k}")
        _check_one_hot(t)
        delta_out = (trace.y - t) * (trace.u_out > 0.0)
        grad_out = np.outer(delta_out, trace.h)
        delta_hidden = (self.w_out.T @ delta_out) * (trace.u_hidden > 0.0)
        grad_hidden = np.outer(delta_hidden, trace.x)
        return grad_hidden, grad_out

    def sgd_step(self, grad_hidden: np.ndarray, grad_out: np.ndarray) -> None:
        """w <- w - eta * grad on both layers; the raw gradients are kept as
        the rollback deltas for the next step."""
        if grad_hidden.shape != self.w_hidden.shape or grad_out.shape != self.w_out.shape:
            raise DimensionError("gradient shapes do not match weights")
        self.w_hidden -= self.eta * grad_hidden
        self.w_out -= self.eta * grad_out
        if not (np.all(np.isfinite(self.w_hidden)) and np.all(np.isfinite(self.w_out))):
            raise FloatingPointError("weights became non-finite during SGD step")
        self.last_delta_hidden = np.array(grad_hidden, dtype=np.float64)
        self.last_delta_out = np.array(grad_out, dtype=np.float64)

    def rollback_features(self, x: np.ndarray) -> np.ndarray:
        """Hidden feature under the pre-step weights W + eta * last_delta.

        Only the first layer enters h, but the rollback is defined on both
        layers; the head itself is left untouched.
        """
        if self.last_delta_hidden is None or self.last_delta_out is None:
            raise NoHistoryError("no SGD step recorded yet, nothing to roll back")
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise DimensionError(f"input shape {x.shape} does not match head input dim {self.input_dim}")
        w_prev = self.w_hidden + self.eta * self.last_delta_hidden
        return np.maximum(w_prev @ x, 0.0)

    def rollback_hidden_batch(self, xs: np.ndarray) -> np.ndarray:
        if self.last_delta_hidden is None or self.last_delta_out is None:
            raise NoHistoryError("no SGD step recorded yet, nothing to roll back")
        w_prev = self.w_hidden + self.eta * self.last_delta_hidden
        return np.maximum(xs @ w_prev.T, 0.0)


def predicted_distribution(trace: ForwardTrace) -> np.ndarray:
    """Read-only probability view of the output scores, for reporting only.

    Never used in gradients; a dead (all-zero) output maps to uniform.
    """
    total = float(trace.y.sum())
    if total <= 0.0:
        return np.full(trace.y.shape[0], 1.0 / trace.y.shape[0])
    return trace.y / total


def init_head(input_dim: int, hidden_dim: int, k: int, eta: float, rng: SeededRng) -> FeatureHead:
    """Fresh head with uniform weights in [-s, s], s = sqrt(6/(fan_in+fan_out)).

    Weights are drawn row-major, first layer then output layer, so the same
    seed always yields the same head. No step history yet.
    """
    if input_dim <= 0 or hidden_dim <= 0 or k <= 0:
        raise ValueError("all head dimensions must be positive")
    w_hidden = _uniform_matrix(hidden_dim, input_dim, rng)
    w_out = _uniform_matrix(k, hidden_dim, rng)
    return FeatureHead(w_hidden, w_out, eta)


def _uniform_matrix(rows, cols, rng):
    s = np.sqrt(6.0 / (rows + cols))
    w = np.empty((rows, cols))
    for r in range(rows):
        for c in range(cols):
            w[r, c] = rng.uniform(-s, s)
    return w
