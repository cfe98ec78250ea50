"""Synthetic QoS response of a server to its utilization."""

import numpy as np

from seer.schema import QoSModelParams


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def expected_qos(utilization, params: QoSModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free (startup latency, error rate); both non-decreasing in U."""
    u = np.asarray(utilization, dtype=float)
    latency = params.latency_base + params.latency_slope * u
    error = _logistic(params.error_steepness * (u - params.error_knee))
    return latency, error


def qos_sample(utilization: float, params: QoSModelParams, rng: np.random.Generator) -> tuple[float, float]:
    """One (startup latency, error rate) draw. Latency never drops below the base; error rate is clamped to [0, 1]."""
    if utilization < 0:
        raise ValueError(f"utilization must be >= 0, got {utilization}")
    latency, error = qos_samples(np.array([utilization]), params, rng)
    return float(latency[0]), float(error[0])


def qos_samples(utilization: np.ndarray, params: QoSModelParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``qos_sample``; draws latency noise for all servers, then error noise."""
    latency, error = expected_qos(utilization, params)
    size = np.shape(latency)
    latency = np.maximum(latency + rng.normal(0.0, params.latency_noise, size=size), params.latency_base)
    error = np.clip(error + rng.normal(0.0, params.error_noise, size=size), 0.0, 1.0)
    return latency, error

