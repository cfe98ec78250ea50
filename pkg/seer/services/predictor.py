"""
Next-cycle demand forecasting.

The AE-GRU model encodes each flattened (M·N) request matrix with a ReLU
layer, runs a GRU over the encoded window and decodes the final hidden state
with a ReLU layer, so forecasts are never negative::

    e_t = relu(We x_t + be)
    z_t = sigmoid(Wz e_t + Uz h_{t-1} + bz)
    r_t = sigmoid(Wr e_t + Ur h_{t-1} + br)
    c_t = tanh(Wh e_t + Uh (r_t * h_{t-1}) + bh)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t
    y   = relu(Wd h_T + bd)

Counts are divided by a per-cell scale (the training maximum, at least 1)
before encoding and multiplied back after decoding. Training minimises the
mean squared error in that normalised space with plain mini-batch SGD and
global-norm gradient clipping; gradients are exact backpropagation through
time, written out by hand so they can be checked against finite differences.

Forecasts stay real-valued; rounding happens where the pre-scheduler consumes
them.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from seer.errors import InsufficientHistoryError, ShapeMismatchError
from seer.models import RequestMatrix
from seer.rng import substream
from seer.schema import PredictorConfig

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("We", "be", "Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "Wd", "bd")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True, eq=False)
class PredictorParams:
    """Trained AE-GRU weights plus the shapes and normalisation they assume."""

    locations: int
    categories: int
    latent: int
    window: int
    scale: np.ndarray
    weights: dict[str, np.ndarray]
    loss_history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        d = self.locations * self.categories
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        for name, shape in _shapes(d, self.latent).items():
            if name not in self.weights or self.weights[name].shape != shape:
                got = self.weights[name].shape if name in self.weights else None
                raise ShapeMismatchError(f"parameter {name} must have shape {shape}, got {got}")
            if not np.all(np.isfinite(self.weights[name])):
                raise ValueError(f"parameter {name} has non-finite entries")
        if np.asarray(self.scale).shape != (d,):
            raise ShapeMismatchError(f"scale must have shape ({d},)")

    @property
    def input_dim(self) -> int:
        return self.locations * self.categories

    @classmethod
    def zeros(cls, locations: int, categories: int, latent: int, window: int) -> "PredictorParams":
        d = locations * categories
        shapes = _shapes(d, latent)
        return cls(locations, categories, latent, window, np.ones(d),
                   {name: np.zeros(shape) for name, shape in shapes.items()})

    def replace_weights(self, weights: dict[str, np.ndarray], loss_history=None) -> "PredictorParams":
        return PredictorParams(
            self.locations, self.categories, self.latent, self.window, self.scale, weights,
            self.loss_history if loss_history is None else tuple(loss_history),
        )

    def to_dict(self) -> dict:
        return {
            "locations": self.locations,
            "categories": self.categories,
            "latent": self.latent,
            "window": self.window,
            "scale": self.scale.tolist(),
            "loss_history": list(self.loss_history),
            "weights": {name: self.weights[name].tolist() for name in PARAMETER_NAMES},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PredictorParams":
        return cls(
            locations=int(data["locations"]),
            categories=int(data["categories"]),
            latent=int(data["latent"]),
            window=int(data["window"]),
            scale=np.asarray(data["scale"], dtype=float),
            weights={name: np.asarray(data["weights"][name], dtype=float) for name in PARAMETER_NAMES},
            loss_history=tuple(float(v) for v in data.get("loss_history", ())),
        )


def _shapes(d: int, h: int) -> dict[str, tuple[int, ...]]:
    return {
        "We": (h, d), "be": (h,),
        "Wz": (h, h), "Uz": (h, h), "bz": (h,),
        "Wr": (h, h), "Ur": (h, h), "br": (h,),
        "Wh": (h, h), "Uh": (h, h), "bh": (h,),
        "Wd": (d, h), "bd": (d,),
    }


def _initial_weights(d: int, h: int, rng: np.random.Generator, target_mean: np.ndarray) -> dict[str, np.ndarray]:
    recurrent = 1.0 / np.sqrt(h)
    return {
        "We": rng.normal(0.0, np.sqrt(2.0 / d), size=(h, d)),
        "be": np.full(h, 0.01),
        "Wz": rng.normal(0.0, recurrent, size=(h, h)),
        "Uz": rng.normal(0.0, recurrent, size=(h, h)),
        "bz": np.zeros(h),
        "Wr": rng.normal(0.0, recurrent, size=(h, h)),
        "Ur": rng.normal(0.0, recurrent, size=(h, h)),
        "br": np.zeros(h),
        "Wh": rng.normal(0.0, recurrent, size=(h, h)),
        "Uh": rng.normal(0.0, recurrent, size=(h, h)),
        "bh": np.zeros(h),
        "Wd": rng.normal(0.0, 0.1 * recurrent, size=(d, h)),
        "bd": np.asarray(target_mean, dtype=float).copy(),
    }


# -- forward / backward ------------------------------------------------------


def _forward(weights: dict[str, np.ndarray], inputs: np.ndarray):
    """``inputs`` is (B, T, D) normalised. Returns (prediction, cache)."""
    batch, steps, _ = inputs.shape
    latent = weights["be"].shape[0]
    h = np.zeros((batch, latent))
    cache = []
    for t in range(steps):
        x = inputs[:, t, :]
        pre_e = x @ weights["We"].T + weights["be"]
        e = np.maximum(pre_e, 0.0)
        z = _sigmoid(e @ weights["Wz"].T + h @ weights["Uz"].T + weights["bz"])
        r = _sigmoid(e @ weights["Wr"].T + h @ weights["Ur"].T + weights["br"])
        c = np.tanh(e @ weights["Wh"].T + (r * h) @ weights["Uh"].T + weights["bh"])
        cache.append((x, pre_e, e, h, z, r, c))
        h = (1.0 - z) * h + z * c
    pre_y = h @ weights["Wd"].T + weights["bd"]
    return np.maximum(pre_y, 0.0), (cache, h, pre_y)


def _batch_loss_and_gradients(weights: dict[str, np.ndarray], inputs: np.ndarray, targets: np.ndarray):
    prediction, (cache, h_last, pre_y) = _forward(weights, inputs)
    batch, dim = targets.shape
    diff = prediction - targets
    loss = float(np.mean(diff * diff))

    grads = {name: np.zeros_like(value) for name, value in weights.items()}
    d_pre_y = (2.0 / (batch * dim)) * diff * (pre_y > 0)
    grads["Wd"] = d_pre_y.T @ h_last
    grads["bd"] = d_pre_y.sum(axis=0)
    dh = d_pre_y @ weights["Wd"]

    for x, pre_e, e, h_prev, z, r, c in reversed(cache):
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        d_pre_c = dc * (1.0 - c * c)
        grads["Wh"] += d_pre_c.T @ e
        grads["Uh"] += d_pre_c.T @ (r * h_prev)
        grads["bh"] += d_pre_c.sum(axis=0)
        d_rh = d_pre_c @ weights["Uh"]
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        d_pre_z = dz * z * (1.0 - z)
        d_pre_r = dr * r * (1.0 - r)
        grads["Wz"] += d_pre_z.T @ e
        grads["Uz"] += d_pre_z.T @ h_prev
        grads["bz"] += d_pre_z.sum(axis=0)
        grads["Wr"] += d_pre_r.T @ e
        grads["Ur"] += d_pre_r.T @ h_prev
        grads["br"] += d_pre_r.sum(axis=0)
        dh_prev += d_pre_z @ weights["Uz"] + d_pre_r @ weights["Ur"]

        de = d_pre_z @ weights["Wz"] + d_pre_r @ weights["Wr"] + d_pre_c @ weights["Wh"]
        d_pre_e = de * (pre_e > 0)
        grads["We"] += d_pre_e.T @ x
        grads["be"] += d_pre_e.sum(axis=0)
        dh = dh_prev

    return loss, grads


def _as_batch(params: PredictorParams, window, target=None):
    window = np.asarray(window, dtype=float)
    if window.ndim == 2:
        window = window[None]
    if window.shape[1:] != (params.window, params.input_dim):
        raise ShapeMismatchError(
            f"window must be (T={params.window}, D={params.input_dim}), got {window.shape[1:]}"
        )
    if target is None:
        return window, None
    target = np.asarray(target, dtype=float).reshape(len(window), params.input_dim)
    return window, target


def loss_and_gradients(params: PredictorParams, window, target) -> tuple[float, dict[str, np.ndarray]]:
    """
    MSE and its exact gradient for normalised inputs.

    ``window`` is (T, D) or (B, T, D) with D = M·N, already divided by
    ``params.scale``; ``target`` is (D,) or (B, D).
    """
    inputs, targets = _as_batch(params, window, target)
    return _batch_loss_and_gradients(params.weights, inputs, targets)


# -- training ----------------------------------------------------------------


def _stack(matrices: Sequence[RequestMatrix]) -> np.ndarray:
    shapes = {m.shape for m in matrices}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"history matrices disagree on shape: {sorted(shapes)}")
    return np.stack([np.asarray(m.counts, dtype=float).ravel() for m in matrices])


def _clip(grads: dict[str, np.ndarray], limit: float) -> dict[str, np.ndarray]:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= limit:
        return grads
    factor = limit / norm
    return {name: g * factor for name, g in grads.items()}


def train_predictor(history: Sequence[RequestMatrix], config: PredictorConfig | None = None, seed: int = 0) -> PredictorParams:
    """
    Fit the AE-GRU on sliding windows of ``history``.

    The returned weights are the ones with the lowest full-data loss seen,
    the initial weights included, so the final loss never exceeds the
    initial one. ``loss_history[0]`` is the initial loss and entry ``k`` the
    loss after epoch ``k``.
    """
    config = config or PredictorConfig()
    steps = config.window
    if len(history) <= steps:
        raise InsufficientHistoryError(f"need more than {steps} matrices to train, got {len(history)}")
    series = _stack(history)
    locations, categories = history[0].shape
    dim = locations * categories
    scale = np.maximum(series.max(axis=0), 1.0)
    normalised = series / scale

    starts = np.arange(len(series) - steps)
    if len(starts) > config.max_windows:
        starts = np.unique(np.linspace(0, len(starts) - 1, config.max_windows).round().astype(np.int64))
    inputs = np.stack([normalised[s:s + steps] for s in starts])
    targets = np.stack([normalised[s + steps] for s in starts])

    rng = substream(seed, "training")
    weights = _initial_weights(dim, config.latent, rng, targets.mean(axis=0))
    best_loss, _ = _batch_loss_and_gradients(weights, inputs, targets)
    best = {name: value.copy() for name, value in weights.items()}
    losses = [best_loss]

    for epoch in range(config.epochs):
        order = rng.permutation(len(starts))
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            _, grads = _batch_loss_and_gradients(weights, inputs[batch], targets[batch])
            grads = _clip(grads, config.clip_norm)
            for name, grad in grads.items():
                weights[name] = weights[name] - config.learning_rate * grad
        loss, _ = _batch_loss_and_gradients(weights, inputs, targets)
        losses.append(loss)
        if loss < best_loss:
            best_loss = loss
            best = {name: value.copy() for name, value in weights.items()}
        logger.debug("predictor epoch %d: loss %.6g", epoch + 1, loss)

    logger.info("trained predictor on %d windows: loss %.5g -> %.5g", len(starts), losses[0], best_loss)
    return PredictorParams(locations, categories, config.latent, steps, scale, best, tuple(losses))


def predict_next(params: PredictorParams, window: Sequence[RequestMatrix] | np.ndarray) -> RequestMatrix:
    """Forecast the matrix following ``window`` (oldest first, length T)."""
    if isinstance(window, np.ndarray):
        stacked = np.asarray(window, dtype=float).reshape(len(window), -1)
    else:
        if window and window[0].shape != (params.locations, params.categories):
            raise ShapeMismatchError(
                f"window matrices are {window[0].shape}, params expect {(params.locations, params.categories)}"
            )
        stacked = _stack(window) if window else np.zeros((0, params.input_dim))
    if len(stacked) != params.window:
        raise ShapeMismatchError(f"window length must be {params.window}, got {len(stacked)}")
    if stacked.shape[1] != params.input_dim:
        raise ShapeMismatchError(f"window entries must have {params.input_dim} cells, got {stacked.shape[1]}")
    prediction, _ = _forward(params.weights, (stacked / params.scale)[None])
    counts = (prediction[0] * params.scale).reshape(params.locations, params.categories)
    return RequestMatrix(counts)


def seasonal_naive_predict(history: Sequence[RequestMatrix], period: int) -> RequestMatrix:
    """The matrix observed ``period`` cycles ago."""
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    if len(history) < period:
        raise InsufficientHistoryError(f"need {period} matrices of history, got {len(history)}")
    return history[-period]


# -- forecasters ---------------------------------------------------------------


class AeGruForecaster:
    """Forecasts from the last T observed matrices."""

    name = "aegru"

    def __init__(self, params: PredictorParams):
        self.params = params

    def forecast(self, history: Sequence[RequestMatrix], cycle: int) -> RequestMatrix:
        if len(history) < self.params.window:
            raise InsufficientHistoryError(
                f"need {self.params.window} matrices of history, got {len(history)}"
            )
        prediction = predict_next(self.params, list(history[-self.params.window:]))
        return RequestMatrix(prediction.counts, cycle)


class SeasonalNaiveForecaster:
    name = "seasonal"

    def __init__(self, period: int):
        self.period = period

    def forecast(self, history: Sequence[RequestMatrix], cycle: int) -> RequestMatrix:
        return RequestMatrix(seasonal_naive_predict(history, self.period).counts, cycle)


class OracleForecaster:
    """Returns the realised matrix itself; used to check the perfect-prediction path."""

    name = "oracle"

    def __init__(self, actual: Callable[[int], RequestMatrix]):
        self.actual = actual

    def forecast(self, history: Sequence[RequestMatrix], cycle: int) -> RequestMatrix:
        return self.actual(cycle)
