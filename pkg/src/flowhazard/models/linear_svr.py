"""Linear support vector regression trained by averaged subgradient descent.

Per-sample subgradients of the epsilon-insensitive objective
``||w||^2 / 2 + C * sum_i max(0, |y_i - w.x_i - b| - eps)`` are applied in
a seeded shuffle order; the returned weights are the running average of
all iterates (Polyak averaging), which smooths the non-smooth loss.
"""

from __future__ import annotations

import numpy as np

from ..seeding import rng_from
from .bayes_ridge import LinearState


def fit_linear_svr(X: np.ndarray, y: np.ndarray, params, seed_key) -> LinearState:
    n, n_features = X.shape
    reg = 1.0 / (params.C * n)
    eta = params.learning_rate
    eps = params.epsilon
    rng = rng_from(*seed_key)

    w = np.zeros(n_features)
    b = 0.0
    w_sum = np.zeros(n_features)
    b_sum = 0.0
    steps = 0
    for _ in range(params.epochs):
        for i in rng.permutation(n):
            resid = y[i] - (X[i] @ w + b)
            w *= 1.0 - eta * reg
            if resid > eps:
                w += eta * X[i]
                b += eta
            elif resid < -eps:
                w -= eta * X[i]
                b -= eta
            w_sum += w
            b_sum += b
            steps += 1
    return LinearState(weights=w_sum / steps, intercept=b_sum / steps)
