"""Incremental quantile neural network (IQNN).

A fully connected ReLU network whose output layer also uses ReLU, so every
output is a non-negative increment between consecutive quantiles. With
``R = y_max - y_min``::

    Q_1 = y_min + R * a_1
    Q_o = Q_{o-1} + R * a_o        (o >= 2)

which makes the predicted quantile ladder non-decreasing for every input.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConfigurationError, FormatError, TrainingError
from .sample_factory import ScalingSpec, target_bounds


@dataclass(frozen=True)
class QuantileLadder:
    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if not taus:
            raise ConfigurationError("quantile ladder is empty")
        if any(not 0 < t < 1 for t in taus):
            raise ConfigurationError("quantile levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigurationError("quantile levels must be strictly increasing")
        object.__setattr__(self, "taus", taus)

    def __len__(self):
        return len(self.taus)

    def as_array(self):
        return np.array(self.taus)


def default_ladder():
    """55 levels: 0.05 and 0.1-steps up to the median, then 0.01-steps to 0.99."""
    lower = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
    upper = [round(0.5 + 0.01 * k, 2) for k in range(1, 50)]
    return QuantileLadder(tuple(lower + upper))


@dataclass(eq=False)
class IqnnModel:
    """Layer weights (``W[l]`` has shape ``(n_out, n_in)``), biases, ladder and scaler."""

    weights: list
    biases: list
    ladder: QuantileLadder
    scaler: ScalingSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        _check_shapes(self.layers_from_weights(), self.weights, self.biases,
                      self.ladder, self.scaler)

    def layers_from_weights(self):
        if not self.weights:
            raise FormatError("model has no layers")
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def layers(self):
        return self.layers_from_weights()

    @property
    def n_outputs(self):
        return self.weights[-1].shape[0]

    def copy(self):
        return IqnnModel(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            self.ladder, self.scaler, dict(self.meta),
        )

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def fingerprint(self):
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p).tobytes())
        h.update(json.dumps(self.ladder.taus).encode())
        h.update(json.dumps(self.scaler.to_dict()).encode())
        return h.hexdigest()[:16]


def _check_shapes(layers, weights, biases, ladder, scaler):
    if len(weights) != len(biases) or len(weights) != len(layers) - 1:
        raise FormatError("layer count mismatch between weights, biases and sizes")
    for l, (w, b) in enumerate(zip(weights, biases)):
        if w.ndim != 2 or w.shape != (layers[l + 1], layers[l]):
            raise FormatError(f"layer {l + 1}: weight shape {w.shape} inconsistent")
        if b.shape != (layers[l + 1],):
            raise FormatError(f"layer {l + 1}: bias shape {b.shape} inconsistent")
    if len(ladder) != layers[-1]:
        raise FormatError(
            f"ladder length {len(ladder)} differs from output width {layers[-1]}"
        )
    if scaler.x_min.shape != (layers[0],):
        raise FormatError("scaler width differs from input layer")


def init_model(layers, ladder=None, scaler=None, seed=0):
    """He-initialised hidden layers; the output layer starts with small
    weights and positive biases so every increment begins active."""
    ladder = ladder or default_ladder()
    layers = [int(n) for n in layers]
    if len(layers) < 2 or layers[-1] != len(ladder):
        raise ConfigurationError("layers must end with the ladder length")
    if scaler is None:
        scaler = ScalingSpec(np.zeros(layers[0]), np.ones(layers[0]), 0.0, 1.0)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l in range(len(layers) - 1):
        n_in, n_out = layers[l], layers[l + 1]
        if l < len(layers) - 2:
            weights.append(rng.normal(0, math.sqrt(2.0 / n_in), (n_out, n_in)))
            biases.append(np.full(n_out, 0.01))
        else:
            weights.append(rng.normal(0, 0.1 / math.sqrt(n_in), (n_out, n_in)))
            biases.append(np.full(n_out, 0.5 / n_out))
    return IqnnModel(weights, biases, ladder, scaler, {"seed": int(seed)})


def _forward_trace(weights, biases, Xs):
    zs, acts = [], [Xs]
    a = Xs
    for w, b in zip(weights, biases):
        z = a @ w.T + b
        a = np.maximum(z, 0.0)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward_trace(model, x_scaled):
    """Pre-activations and activations of every layer (2-D input)."""
    Xs = np.atleast_2d(np.asarray(x_scaled, dtype=float))
    return _forward_trace(model.weights, model.biases, Xs)


def increments_to_quantiles(a_out, scaler):
    return scaler.y_min + scaler.y_range * np.cumsum(a_out, axis=-1)


def forward(model, x_scaled):
    """Quantiles in MW for scaled input(s); shape ``(O,)`` or ``(n, O)``."""
    x = np.asarray(x_scaled, dtype=float)
    _, acts = _forward_trace(model.weights, model.biases, np.atleast_2d(x))
    Q = increments_to_quantiles(acts[-1], model.scaler)
    return Q[0] if x.ndim == 1 else Q


def predict(model, X):
    """Quantiles for raw (unscaled) features."""
    return forward(model, model.scaler.apply(X))


def pinball_loss(pred, y, ladder):
    """Multi-quantile pinball loss averaged over levels (and rows for 2-D ``pred``)."""
    taus = ladder.as_array() if isinstance(ladder, QuantileLadder) else np.asarray(ladder)
    pred = np.asarray(pred, dtype=float)
    if pred.shape[-1] != taus.size:
        raise ValueError("prediction width differs from ladder length")
    y = np.asarray(y, dtype=float)
    eps = (y[..., None] if pred.ndim > 1 else y) - pred
    loss = taus * np.maximum(eps, 0) + (1 - taus) * np.maximum(-eps, 0)
    return float(loss.mean())


def loss_and_grad(weights, biases, Xs, y, taus, scaler):
    """Pinball loss and its gradient with respect to every weight and bias.

    Subgradients: ReLU'(0) = 0 and the pinball derivative at a zero residual
    is taken as 0.
    """
    zs, acts = _forward_trace(weights, biases, Xs)
    Q = increments_to_quantiles(acts[-1], scaler)
    eps = y[:, None] - Q
    n, O = Q.shape
    loss = float((taus * np.maximum(eps, 0) + (1 - taus) * np.maximum(-eps, 0)).mean())
    dQ = (np.where(eps > 0, -taus, 0.0) + np.where(eps < 0, 1 - taus, 0.0)) / (n * O)
    # Q_j depends on every increment a_o with o <= j
    da = scaler.y_range * np.cumsum(dQ[:, ::-1], axis=1)[:, ::-1]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        dz = da * (zs[l] > 0)
        gw[l] = dz.T @ acts[l]
        gb[l] = dz.sum(axis=0)
        if l:
            da = dz @ weights[l]
    return loss, gw, gb


@dataclass
class TrainConfig:
    batch_size: int = 512
    learning_rate: float = 1e-3
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _xy(data):
    if hasattr(data, "X") and hasattr(data, "y"):
        return np.asarray(data.X, float), np.asarray(data.y, float)
    X, y = data
    return np.asarray(X, float), np.asarray(y, float)


def train(model, train_data, val_data, hyper=None):
    """Fit ``model`` with mini-batch Adam on the pinball loss.

    ``train_data``/``val_data`` are :class:`SampleSet` objects or ``(X, y)``
    pairs with raw features. Returns ``(best_model, history)`` where
    ``best_model`` is the snapshot with the lowest validation loss (the
    initial parameters count as epoch 0).
    """
    hyper = hyper or TrainConfig()
    X, y = _xy(train_data)
    Xv, yv = _xy(val_data)
    if len(y) == 0 or len(yv) == 0:
        raise ConfigurationError("training and validation sets must be non-empty")
    scaler = model.scaler
    Xs, Xvs = scaler.apply(X), scaler.apply(Xv)
    taus = model.ladder.as_array()
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(hyper.seed)

    def val_loss():
        _, acts = _forward_trace(weights, biases, Xvs)
        return pinball_loss(increments_to_quantiles(acts[-1], scaler), yv, taus)

    best = val_loss()
    best_params = [p.copy() for p in params]
    history = {"train_loss": [], "val_loss": [best], "best_epoch": 0}
    step = 0
    n = len(y)
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            loss, gw, gb = loss_and_grad(weights, biases, Xs[idx], y[idx], taus, scaler)
            running += loss * idx.size
            step += 1
            c1 = 1 - hyper.beta1**step
            c2 = 1 - hyper.beta2**step
            for k, g in enumerate(gw + gb):
                m[k] *= hyper.beta1
                m[k] += (1 - hyper.beta1) * g
                v[k] *= hyper.beta2
                v[k] += (1 - hyper.beta2) * g * g
                params[k] -= hyper.learning_rate * (m[k] / c1) / (np.sqrt(v[k] / c2) + hyper.eps)
        current = val_loss()
        if not math.isfinite(current):
            raise TrainingError("validation loss is not finite", epoch=epoch)
        history["train_loss"].append(running / n)
        history["val_loss"].append(current)
        if current < best:
            best = current
            best_params = [p.copy() for p in params]
            history["best_epoch"] = epoch
    L = len(weights)
    out = IqnnModel(best_params[:L], best_params[L:], model.ladder, scaler, dict(model.meta))
    out.meta["train"] = {
        "seed": hyper.seed, "epochs": hyper.epochs, "batch_size": hyper.batch_size,
        "learning_rate": hyper.learning_rate, "best_val_loss": best,
        "best_epoch": history["best_epoch"],
    }
    return out, history


def save(model, path):
    """Write the model as JSON; floats use shortest round-trip repr."""
    doc = {
        "layers": model.layers,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "taus": list(model.ladder.taus),
        "scaler": model.scaler.to_dict(),
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(doc))
    return path


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    missing = {"layers", "weights", "biases", "taus", "scaler"} - set(doc)
    if missing:
        raise FormatError(f"{path}: missing fields {sorted(missing)}")
    try:
        weights = [np.array(w, dtype=float) for w in doc["weights"]]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        ladder = QuantileLadder(tuple(doc["taus"]))
        scaler = ScalingSpec.from_dict(doc["scaler"])
    except (ValueError, TypeError, ConfigurationError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    layers = [int(n) for n in doc["layers"]]
    _check_shapes(layers, weights, biases, ladder, scaler)
    return IqnnModel(weights, biases, ladder, scaler, doc.get("meta", {}))


class IqnnRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`train`.

    ``predict`` returns an ``(n_samples, n_quantiles)`` array of
    non-decreasing quantiles. Fixed input bounds ``x_min``/``x_max``
    (e.g. the decision domain) override the data range.
    """

    def __init__(self, hidden_layer_sizes=(64, 64), taus=None, learning_rate=1e-3,
                 batch_size=512, epochs=50, x_min=None, x_max=None, y_headroom=0.05,
                 validation_fraction=0.15, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.taus = taus
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.x_min = x_min
        self.x_max = x_max
        self.y_headroom = y_headroom
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if eval_set is None:
            rng = np.random.default_rng(self.random_state)
            perm = rng.permutation(len(y))
            n_val = max(1, int(round(self.validation_fraction * len(y))))
            val_idx, tr_idx = perm[:n_val], perm[n_val:]
            Xv, yv = X[val_idx], y[val_idx]
            X, y = X[tr_idx], y[tr_idx]
        else:
            Xv, yv = check_X_y(*eval_set, y_numeric=True)
        lo = X.min(axis=0) if self.x_min is None else np.asarray(self.x_min, float)
        hi = X.max(axis=0) if self.x_max is None else np.asarray(self.x_max, float)
        y_lo, y_hi = target_bounds(np.concatenate([y, yv]), self.y_headroom)
        scaler = ScalingSpec(lo, hi, y_lo, y_hi)
        ladder = default_ladder() if self.taus is None else QuantileLadder(tuple(self.taus))
        layers = [X.shape[1], *self.hidden_layer_sizes, len(ladder)]
        model = init_model(layers, ladder, scaler, seed=self.random_state)
        hyper = TrainConfig(self.batch_size, self.learning_rate, self.epochs,
                            self.random_state)
        self.model_, self.history_ = train(model, (X, y), (Xv, yv), hyper)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def quantiles_(self):
        check_is_fitted(self, "model_")
        return self.model_.ladder.as_array()

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return predict(self.model_, X)

    def score(self, X, y, sample_weight=None):
        """Negative pinball loss (higher is better)."""
        return -pinball_loss(self.predict(X), np.asarray(y, float), self.model_.ladder)
