"""Correlation coefficient, MSE and RMSE between real and predicted values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError


@dataclass(frozen=True)
class PairedSeries:
    real: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        x = np.array(self.real, dtype=np.float64).ravel()
        y = np.array(self.predicted, dtype=np.float64).ravel()
        if x.size != y.size:
            raise ShapeError(f"series lengths differ: {x.size} vs {y.size}")
        if x.size == 0:
            raise EmptyInputError("series are empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("series must be finite")
        object.__setattr__(self, "real", x)
        object.__setattr__(self, "predicted", y)

    def __len__(self):
        return self.real.size


def _paired(series, predicted):
    if predicted is None:
        if not isinstance(series, PairedSeries):
            raise TypeError("pass a PairedSeries or both real and predicted values")
        return series
    return PairedSeries(series, predicted)


def correlation(series, predicted=None) -> float | None:
    """Pearson correlation; None when either series has zero variance.

    The second mean is the mean of the predicted values.
    """
    s = _paired(series, predicted)
    if len(s) < 2:
        raise ShapeError("correlation needs at least two points")
    dx = s.real - s.real.mean()
    dy = s.predicted - s.predicted.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    # rounding can push |r| a hair past 1
    return min(1.0, max(-1.0, r))


def mse(series, predicted=None) -> float:
    s = _paired(series, predicted)
    d = s.real - s.predicted
    return float(np.dot(d, d)) / len(s)


def rmse(series, predicted=None) -> float:
    return math.sqrt(mse(series, predicted))


@dataclass(frozen=True)
class Metrics:
    r: float | None
    mse: float
    rmse: float

    @property
    def r_defined(self) -> bool:
        return self.r is not None

    def to_text(self) -> str:
        r = "undefined" if self.r is None else repr(self.r)
        return f"r={r}\nmse={self.mse!r}\nrmse={self.rmse!r}\n"

    def to_dict(self):
        return {"r": self.r, "mse": self.mse, "rmse": self.rmse}

    @classmethod
    def from_text(cls, text):
        kv = dict(line.split("=", 1) for line in text.split() if "=" in line)
        r = None if kv["r"] == "undefined" else float(kv["r"])
        return cls(r, float(kv["mse"]), float(kv["rmse"]))


def evaluate(series, predicted=None) -> Metrics:
    s = _paired(series, predicted)
    m = mse(s)
    return Metrics(correlation(s) if len(s) >= 2 else None, m, math.sqrt(m))
