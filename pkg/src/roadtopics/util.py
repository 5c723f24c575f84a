"""Shared numeric helpers."""

from __future__ import annotations

import numpy as np


def wrap_angle(h):
    """Wrap angles into (-pi, pi]."""
    return np.pi - (np.pi - np.asarray(h)) % (2.0 * np.pi)


def stable_rng(seed: int, *key: int) -> np.random.Generator:
    """Deterministic per-(seed, key...) random stream.

    Built on SeedSequence spawn keys, so streams for different keys are
    independent and identical regardless of the order they are created in.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def sample_dirichlet(rng: np.random.Generator, conc: np.ndarray, axis: int = -1) -> np.ndarray:
    """Dirichlet draw via gamma variates; tolerates zero concentrations
    (a zero-concentration component comes back exactly 0)."""
    g = rng.gamma(np.asarray(conc, dtype=float))
    total = g.sum(axis=axis, keepdims=True)
    # all-zero row would divide 0/0; keep it at zero
    safe = np.where(total > 0, total, 1.0)
    return g / safe


def sample_categorical_cols(rng: np.random.Generator, weights: np.ndarray) -> np.ndarray:
    """One categorical draw per column of a (K, n) nonnegative weight matrix."""
    c = np.cumsum(weights, axis=0)
    u = rng.random(weights.shape[1]) * c[-1]
    return (c < u[None, :]).sum(axis=0)
