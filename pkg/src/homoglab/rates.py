"""Log-log rate fits."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InvalidInputError


@dataclass(frozen=True)
class RateFit:
    x: tuple
    y: tuple
    slope: float
    intercept: float
    r2: float

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "y": [float(v) for v in self.y],
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def fit_rate(x, y) -> RateFit:
    """Ordinary least squares of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidInputError("x and y must have equal length")
    if x.size < 3:
        raise InvalidInputError("a rate fit needs at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidInputError("rate fits need positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise InvalidInputError("x values must not all coincide")
    res = stats.linregress(lx, ly)
    r2 = 1.0 if np.ptp(ly) == 0 else float(res.rvalue**2)
    return RateFit(tuple(x), tuple(y), float(res.slope), float(res.intercept), r2)
