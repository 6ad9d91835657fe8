"""Reference predictors used by smoke tests: last-value repeat and ridge regression."""

from __future__ import annotations

import numpy as np

from .dataset import WindowedDataset
from .training import fold_channels, metrics_from_predictions


def naive_last_value(x: np.ndarray, horizon: int) -> np.ndarray:
    """(n, I, C) -> (n, O, C) repeating each window's final observation."""
    return np.repeat(x[:, -1:, :], horizon, axis=1)


class RidgeForecaster:
    """Channel-shared linear map from the I inputs (plus intercept) to the O outputs."""

    def __init__(self, penalty: float = 1.0):
        self.penalty = penalty
        self.coef: np.ndarray | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RidgeForecaster":
        a = fold_channels(x)
        b = fold_channels(y)
        a1 = np.hstack([a, np.ones((len(a), 1))])
        reg = self.penalty * np.eye(a1.shape[1])
        reg[-1, -1] = 0.0  # intercept is not penalized
        self.coef = np.linalg.solve(a1.T @ a1 + reg, a1.T @ b)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        n, _, c = x.shape
        a = fold_channels(x)
        out = np.hstack([a, np.ones((len(a), 1))]) @ self.coef
        return out.reshape(n, c, -1).transpose(0, 2, 1)


def fit_ridge(dataset: WindowedDataset, penalties=(1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)) -> RidgeForecaster:
    """Fit on train, pick the penalty with the lowest validation MSE."""
    x_tr, y_tr = dataset.windows("train")
    x_va, y_va = dataset.windows("val")
    best = None
    for lam in penalties:
        model = RidgeForecaster(lam).fit(x_tr, y_tr)
        mse = metrics_from_predictions(model.predict(x_va), y_va)[0]
        if best is None or mse < best[0]:
            best = (mse, model)
    return best[1]


def baseline_mse(dataset: WindowedDataset, split: str = "val") -> dict[str, float]:
    x, y = dataset.windows(split)
    naive = metrics_from_predictions(naive_last_value(x, dataset.horizon), y)[0]
    ridge = metrics_from_predictions(fit_ridge(dataset).predict(x), y)[0]
    return {"naive": naive, "ridge": ridge}
