import numpy as np
import pytest

from seer.errors import InsufficientHistoryError, ShapeMismatchError
from seer.models import RequestMatrix
from seer.schema import PredictorConfig
from seer.services.predictor import (
    PARAMETER_NAMES,
    AeGruForecaster,
    OracleForecaster,
    PredictorParams,
    SeasonalNaiveForecaster,
    loss_and_gradients,
    predict_next,
    seasonal_naive_predict,
    train_predictor,
)


def matrices(values, shape=(2, 2)):
    return [RequestMatrix(np.asarray(v, dtype=np.int64).reshape(shape), n) for n, v in enumerate(values)]


def periodic_history(length=20):
    pattern = np.array([[1, 5, 9, 5], [9, 5, 1, 5], [5, 9, 5, 1], [5, 1, 5, 9]])
    return matrices([pattern[t % 4] for t in range(length)])


@pytest.fixture
def tiny_params():
    """M=2, N=2, H=3, T=2 with weights away from the ReLU kinks."""
    rng = np.random.default_rng(5)
    params = PredictorParams.zeros(2, 2, 3, 2)
    weights = {name: rng.normal(0, 0.5, size=w.shape) for name, w in params.weights.items()}
    weights["We"] = np.abs(weights["We"])
    weights["be"] = np.full(3, 0.5)
    weights["bd"] = np.full(4, 2.0)
    return params.replace_weights(weights)


class TestForward:
    def test_zero_weights_give_zero(self):
        params = PredictorParams.zeros(2, 3, 4, 2)
        prediction = predict_next(params, matrices([np.ones(6), np.ones(6) * 3], shape=(2, 3)))
        assert prediction.shape == (2, 3)
        assert np.all(prediction.counts == 0)

    def test_never_negative(self, tiny_params):
        weights = {name: -np.abs(w) for name, w in tiny_params.weights.items()}
        params = tiny_params.replace_weights(weights)
        prediction = predict_next(params, matrices([[4, 0, 2, 1], [3, 3, 0, 0]]))
        assert np.all(prediction.counts >= 0)

    def test_pure_function_of_inputs(self, tiny_params):
        window = matrices([[4, 0, 2, 1], [3, 3, 0, 0]])
        assert np.array_equal(predict_next(tiny_params, window).counts, predict_next(tiny_params, window).counts)

    def test_wrong_window_length(self, tiny_params):
        with pytest.raises(ShapeMismatchError, match="window length"):
            predict_next(tiny_params, matrices([[1, 1, 1, 1]]))

    def test_wrong_matrix_shape(self, tiny_params):
        with pytest.raises(ShapeMismatchError):
            predict_next(tiny_params, matrices([[1, 1, 1], [1, 1, 1]], shape=(1, 3)))

    def test_bad_parameter_shape(self):
        params = PredictorParams.zeros(2, 2, 3, 2)
        weights = dict(params.weights, Wd=np.zeros((3, 3)))
        with pytest.raises(ShapeMismatchError, match="Wd"):
            params.replace_weights(weights)


class TestGradients:
    def test_matches_central_differences(self, tiny_params):
        rng = np.random.default_rng(8)
        window = rng.random((3, 2, 4)) + 0.1
        target = rng.random((3, 4)) * 3
        _, analytic = loss_and_gradients(tiny_params, window, target)

        eps = 1e-6
        for name in PARAMETER_NAMES:
            base = tiny_params.weights[name]
            numeric = np.zeros_like(base)
            for index in np.ndindex(base.shape):
                up, down = base.copy(), base.copy()
                up[index] += eps
                down[index] -= eps
                loss_up, _ = loss_and_gradients(
                    tiny_params.replace_weights(dict(tiny_params.weights, **{name: up})), window, target
                )
                loss_down, _ = loss_and_gradients(
                    tiny_params.replace_weights(dict(tiny_params.weights, **{name: down})), window, target
                )
                numeric[index] = (loss_up - loss_down) / (2 * eps)
            assert np.allclose(analytic[name], numeric, rtol=1e-4, atol=1e-8), name


class TestTraining:
    def test_constant_history_is_learnt(self):
        r0 = np.array([[12, 3], [7, 20]])
        history = [RequestMatrix(r0, t) for t in range(20)]
        config = PredictorConfig(latent=4, window=3, epochs=200, learning_rate=0.1, batch_size=8)
        params = train_predictor(history, config, seed=1)
        prediction = predict_next(params, history[-3:]).counts
        assert np.linalg.norm(prediction - r0) / np.linalg.norm(r0) <= 0.05

    def test_loss_halves_on_a_toy_signal(self):
        config = PredictorConfig(latent=8, window=3, epochs=200, learning_rate=0.1, batch_size=4)
        params = train_predictor(periodic_history(), config, seed=3)
        losses = params.loss_history
        assert len(losses) == 201
        assert min(losses) <= 0.5 * losses[0]

    def test_fits_ten_windows(self):
        # Window 3 over 13 matrices: ten training samples.
        history = periodic_history(13)
        config = PredictorConfig(latent=16, window=3, epochs=2000, learning_rate=0.1, batch_size=2)
        params = train_predictor(history, config, seed=7)
        series = np.stack([np.asarray(m.counts, float).ravel() for m in history]) / params.scale
        variance = float(np.var(series[3:]))
        assert min(params.loss_history) <= 0.01 * variance

    def test_final_loss_never_above_initial(self):
        config = PredictorConfig(latent=3, window=2, epochs=3, learning_rate=0.5, batch_size=2)
        params = train_predictor(periodic_history(10), config, seed=4)
        window = np.stack([np.asarray(m.counts, float).ravel() for m in periodic_history(10)])
        inputs = np.stack([window[s:s + 2] for s in range(8)]) / params.scale
        targets = np.stack([window[s + 2] for s in range(8)]) / params.scale
        loss, _ = loss_and_gradients(params, inputs, targets)
        assert loss <= params.loss_history[0] + 1e-12

    def test_same_seed_same_weights(self):
        config = PredictorConfig(latent=3, window=2, epochs=5)
        a = train_predictor(periodic_history(), config, seed=9)
        b = train_predictor(periodic_history(), config, seed=9)
        for name in PARAMETER_NAMES:
            assert np.array_equal(a.weights[name], b.weights[name])

    def test_scale_is_the_training_maximum(self):
        params = train_predictor(periodic_history(), PredictorConfig(latent=2, window=2, epochs=0), seed=0)
        assert params.scale.tolist() == [9.0, 9.0, 9.0, 9.0]

    def test_history_must_exceed_window(self):
        with pytest.raises(InsufficientHistoryError):
            train_predictor(periodic_history(3), PredictorConfig(window=3, epochs=1))

    def test_mixed_shapes(self):
        history = periodic_history(4) + matrices([[1, 2, 3]], shape=(1, 3))
        with pytest.raises(ShapeMismatchError):
            train_predictor(history, PredictorConfig(window=2, epochs=1))


class TestSeasonalNaive:
    def test_period_one_is_the_last_matrix(self):
        history = periodic_history(6)
        assert seasonal_naive_predict(history, 1) is history[-1]

    def test_periodic_history_is_exact(self):
        history = periodic_history(12)
        forecaster = SeasonalNaiveForecaster(period=4)
        upcoming = periodic_history(13)[-1]
        forecast = forecaster.forecast(history, cycle=12)
        assert np.array_equal(forecast.counts, upcoming.counts)
        assert forecast.cycle == 12

    def test_short_history(self):
        with pytest.raises(InsufficientHistoryError):
            seasonal_naive_predict(periodic_history(3), 4)


class TestForecasters:
    def test_aegru_needs_a_full_window(self, tiny_params):
        with pytest.raises(InsufficientHistoryError):
            AeGruForecaster(tiny_params).forecast(periodic_history(1), cycle=1)

    def test_aegru_uses_the_latest_window(self, tiny_params):
        history = periodic_history(7)
        forecast = AeGruForecaster(tiny_params).forecast(history, cycle=7)
        assert forecast.cycle == 7
        assert np.array_equal(forecast.counts, predict_next(tiny_params, history[-2:]).counts)

    def test_oracle(self):
        actual = periodic_history(5)
        assert OracleForecaster(lambda c: actual[c]).forecast([], 3) is actual[3]
