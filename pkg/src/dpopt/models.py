"""Desk-scale differentiable tasks with analytic per-example gradients.

Three model kinds, all with closed-form gradients so no autodiff dependency
is needed:

* ``linear-regression``   prediction x.w, per-example loss (x.w - y)^2 / 2
* ``logistic-regression`` binary sigmoid, cross-entropy loss, labels in {0,1}
* ``mlp-1-hidden``        d -> hidden (tanh) -> k softmax, cross-entropy

Linear and logistic models carry no bias term; synthetic classification data
is separable through the origin by construction, so none is needed. The MLP
uses tanh so central finite differences are clean everywhere (documented in
``Model.activation``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .numerics import DOMAIN_BATCH, DOMAIN_DATA, rng_stream, stream_key

MODEL_KINDS = ("linear-regression", "logistic-regression", "mlp-1-hidden")

# Margin enforced between synthetic classification points and the true
# separating hyperplane; keeps full-batch logistic regression solvable to
# ~100% train accuracy at noise=0.
SYNTH_MARGIN = 0.25


@dataclass
class Dataset:
    """Feature matrix plus aligned labels.

    Labels are class indices for classification tasks and real targets for
    regression; the model kind decides the interpretation.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise InvalidArgumentError("features must be a 2-D matrix")
        if not np.isfinite(self.features).all():
            raise InvalidArgumentError("features contain non-finite values")
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise InvalidArgumentError("labels must align with feature rows")

    @property
    def n_examples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class Model:
    """Model kind plus the sizes that fix its parameter layout."""

    kind: str
    n_features: int
    hidden: int = 0
    n_classes: int = 2
    activation: str = "tanh"  # fixed; recorded for provenance

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidArgumentError(f"unknown model kind: {self.kind!r}")
        if self.n_features < 1:
            raise InvalidArgumentError("n_features must be >= 1")
        if self.kind == "mlp-1-hidden":
            if self.hidden < 1:
                raise InvalidArgumentError("mlp-1-hidden needs hidden >= 1")
            if self.n_classes < 2:
                raise InvalidArgumentError("mlp-1-hidden needs n_classes >= 2")

    @property
    def param_dim(self) -> int:
        if self.kind in ("linear-regression", "logistic-regression"):
            return self.n_features
        # layout: [W1 (h,d), b1 (h), W2 (k,h), b2 (k)], row-major
        h, d, k = self.hidden, self.n_features, self.n_classes
        return h * d + h + k * h + k

    @property
    def is_classifier(self) -> bool:
        return self.kind != "linear-regression"


@dataclass
class GradientBatch:
    """Per-example gradients for one sampled mini-batch."""

    per_example: np.ndarray  # (B, param_dim)
    batch_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        self.per_example = np.asarray(self.per_example, dtype=float)
        self.batch_indices = np.asarray(self.batch_indices, dtype=int)

    @property
    def size(self) -> int:
        return self.per_example.shape[0]


def _check_indices(dataset: Dataset, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= dataset.n_examples):
        raise InvalidArgumentError("index out of range")
    return idx


def _unpack_mlp(model: Model, theta: np.ndarray):
    h, d, k = model.hidden, model.n_features, model.n_classes
    o = 0
    w1 = theta[o:o + h * d].reshape(h, d); o += h * d
    b1 = theta[o:o + h]; o += h
    w2 = theta[o:o + k * h].reshape(k, h); o += k * h
    b2 = theta[o:o + k]
    return w1, b1, w2, b2


def _mlp_forward(model: Model, theta: np.ndarray, x: np.ndarray):
    w1, b1, w2, b2 = _unpack_mlp(model, theta)
    a1 = np.tanh(x @ w1.T + b1)
    logits = a1 @ w2.T + b2
    return a1, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(model: Model, theta: np.ndarray, dataset: Dataset, indices) -> float:
    """Mean per-example loss over ``indices``."""
    idx = _check_indices(dataset, indices)
    if idx.size == 0:
        raise InvalidArgumentError("loss needs a nonempty index set")
    x = dataset.features[idx]
    y = dataset.labels[idx]
    theta = np.asarray(theta, dtype=float)

    if model.kind == "linear-regression":
        r = x @ theta - y.astype(float)
        return float(0.5 * np.mean(r * r))
    if model.kind == "logistic-regression":
        s = x @ theta
        # log(1 + e^s) - y*s, computed stably
        return float(np.mean(np.logaddexp(0.0, s) - y * s))
    _, logits = _mlp_forward(model, theta, x)
    logp = _log_softmax(logits)
    return float(-np.mean(logp[np.arange(len(idx)), y.astype(int)]))


def per_example_grads(model: Model, theta: np.ndarray, dataset: Dataset, indices) -> GradientBatch:
    """Analytic gradient of each example's loss at ``theta``.

    Returns one flat gradient row per example, in the model's parameter
    layout.
    """
    idx = _check_indices(dataset, indices)
    if idx.size == 0:
        raise InvalidArgumentError("per_example_grads needs a nonempty index set")
    x = dataset.features[idx]
    y = dataset.labels[idx]
    theta = np.asarray(theta, dtype=float)

    if model.kind == "linear-regression":
        r = x @ theta - y.astype(float)
        return GradientBatch(r[:, None] * x, idx)
    if model.kind == "logistic-regression":
        p = 1.0 / (1.0 + np.exp(-(x @ theta)))
        return GradientBatch((p - y)[:, None] * x, idx)

    a1, logits = _mlp_forward(model, theta, x)
    w1, b1, w2, b2 = _unpack_mlp(model, theta)
    b = len(idx)
    probs = np.exp(_log_softmax(logits))
    delta2 = probs
    delta2[np.arange(b), y.astype(int)] -= 1.0          # (B, k)
    g_w2 = delta2[:, :, None] * a1[:, None, :]           # (B, k, h)
    g_b2 = delta2
    delta1 = (delta2 @ w2) * (1.0 - a1 * a1)             # (B, h)
    g_w1 = delta1[:, :, None] * x[:, None, :]            # (B, h, d)
    g_b1 = delta1
    flat = np.concatenate(
        [g_w1.reshape(b, -1), g_b1, g_w2.reshape(b, -1), g_b2], axis=1
    )
    return GradientBatch(flat, idx)


def finite_diff_grad(model: Model, theta: np.ndarray, dataset: Dataset, indices,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the mean loss; the package's gradient oracle."""
    if h <= 0:
        raise InvalidArgumentError("h must be positive")
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy(); up[i] += h
        dn = theta.copy(); dn[i] -= h
        grad[i] = (loss(model, up, dataset, indices) - loss(model, dn, dataset, indices)) / (2 * h)
    return grad


def accuracy(model: Model, theta: np.ndarray, dataset: Dataset) -> float:
    """Fraction of argmax-correct predictions; score ties go to the lowest class."""
    if not model.is_classifier:
        raise InvalidArgumentError("accuracy is undefined for regression models")
    theta = np.asarray(theta, dtype=float)
    if model.kind == "logistic-regression":
        # score 0 is a tie; strict > sends it to class 0
        pred = (dataset.features @ theta > 0).astype(int)
    else:
        _, logits = _mlp_forward(model, theta, dataset.features)
        pred = np.argmax(logits, axis=1)  # argmax takes the first max: lowest index
    return float(np.mean(pred == dataset.labels.astype(int)))


def make_synthetic(kind: str, n_examples: int, n_features: int, seed: int,
                   noise: float = 0.0) -> Dataset:
    """Reproducible synthetic task.

    ``classification``: x ~ N(0, I); a random unit direction w* labels points
    by the sign of x.w*; points closer than SYNTH_MARGIN to the boundary are
    pushed out along w*, so the data is linearly separable through the origin
    with that margin; ``noise`` is the independent label-flip probability.

    ``regression``: y = x.w* + noise * e with e ~ N(0, 1), so noise=0 admits
    an exact zero-loss solution.

    Draws come from the (seed, DATA) stream in a fixed order: w*, then X,
    then the noise draws.
    """
    if n_examples < 1 or n_features < 1:
        raise InvalidArgumentError("need n_examples >= 1 and n_features >= 1")
    if kind not in ("classification", "regression"):
        raise InvalidArgumentError(f"unknown synthetic kind: {kind!r}")
    gen = rng_stream(seed, stream_key(DOMAIN_DATA, 0))
    w = gen.standard_normal(n_features)
    w /= np.linalg.norm(w)
    x = gen.standard_normal((n_examples, n_features))

    if kind == "regression":
        y = x @ w
        if noise > 0:
            y = y + noise * gen.standard_normal(n_examples)
        return Dataset(x, y)

    s = x @ w
    sign = np.where(s >= 0, 1.0, -1.0)
    push = np.maximum(SYNTH_MARGIN - np.abs(s), 0.0)
    x = x + (push * sign)[:, None] * w[None, :]
    labels = (sign > 0).astype(int)
    if noise > 0:
        flips = gen.random(n_examples) < noise
        labels = np.where(flips, 1 - labels, labels)
    return Dataset(x, labels)


def sample_batch(n_examples: int, batch_size: int, seed: int, step: int,
                 mode: str = "poisson") -> np.ndarray:
    """Mini-batch indices for one training step.

    ``poisson`` includes each example independently with probability
    batch_size / n_examples (may be empty); ``fixed`` draws exactly
    batch_size examples without replacement, for debugging and exact
    reductions. Indices are ascending either way. Each step reads its own
    (seed, BATCH+step) stream, so steps are independent and replayable.
    """
    if not 1 <= batch_size <= n_examples:
        raise InvalidArgumentError("need 1 <= batch_size <= n_examples")
    gen = rng_stream(seed, stream_key(DOMAIN_BATCH, step))
    if mode == "poisson":
        mask = gen.random(n_examples) < batch_size / n_examples
        return np.flatnonzero(mask)
    if mode == "fixed":
        return np.sort(gen.choice(n_examples, size=batch_size, replace=False))
    raise InvalidArgumentError(f"unknown batch mode: {mode!r}")
