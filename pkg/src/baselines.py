"""
Comparison ranging methods: RSS path-loss inversion and constant-bias calibration
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import ConfigurationError, DatasetError

logger = logging.getLogger(__name__)

# Path-loss curve fitted on a mixed LOS/NLOS campaign.
DEFAULT_D0 = 1.0
DEFAULT_P0 = -20.6
DEFAULT_ETA = 4.0

BIAS_GRID_STEP = 0.01


@dataclass(frozen=True)
class PathLossParams:
    d0: float = DEFAULT_D0
    p0: float = DEFAULT_P0
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.d0 <= 0 or self.eta <= 0:
            raise ConfigurationError(f"Path-loss d0 and eta must be positive, got d0={self.d0}, eta={self.eta}")

    def to_dict(self) -> dict:
        return {"d0": self.d0, "p0": self.p0, "eta": self.eta}

    @classmethod
    def from_dict(cls, data: dict) -> "PathLossParams":
        return cls(
            d0=float(data.get("d0", DEFAULT_D0)),
            p0=float(data.get("p0", DEFAULT_P0)),
            eta=float(data.get("eta", DEFAULT_ETA)),
        )


def path_loss_distance(p: float, params: PathLossParams) -> float:
    """Distance predicted from an RSS reading by the log-distance curve."""
    return params.d0 * 10.0 ** ((params.p0 - p) / (10.0 * params.eta))


def _path_loss_sse(p0: float, eta: float, rss: np.ndarray, d_true: np.ndarray, d0: float) -> float:
    d_hat = d0 * np.power(10.0, (p0 - rss) / (10.0 * eta))
    return float(np.sum((d_hat - d_true) ** 2))


def fit_path_loss(samples: Iterable[tuple[float, float]], d0: float = DEFAULT_D0) -> PathLossParams:
    """Least-squares (p0, eta) in distance space, d0 fixed.

    A coarse grid picks the basin, Nelder-Mead refines it.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or len(data) < 2:
        raise DatasetError("Path-loss fit needs at least two (distance, rss) samples")
    d_true, rss = data[:, 0], data[:, 1]
    if len(np.unique(rss)) < 2 or len(np.unique(d_true)) < 2:
        raise DatasetError("Path-loss fit needs samples at distinct distances and RSS values")

    p0_grid = np.arange(-60.0, 0.0 + 1e-9, 0.5)
    eta_grid = np.arange(1.0, 7.0 + 1e-9, 0.05)
    best = (math.inf, p0_grid[0], eta_grid[0])
    for eta in eta_grid:
        # (n_p0, n_samples) in one shot per exponent
        d_hat = d0 * np.power(10.0, (p0_grid[:, None] - rss[None, :]) / (10.0 * eta))
        sse = np.sum((d_hat - d_true[None, :]) ** 2, axis=1)
        i = int(np.argmin(sse))
        if sse[i] < best[0]:
            best = (float(sse[i]), float(p0_grid[i]), float(eta))

    result = minimize(
        lambda v: _path_loss_sse(v[0], max(v[1], 1e-3), rss, d_true, d0),
        x0=np.array([best[1], best[2]]),
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 4000},
    )
    p0, eta = (float(result.x[0]), float(result.x[1])) if result.fun <= best[0] else (best[1], best[2])
    logger.debug(f"Path-loss fit on {len(data)} samples: p0={p0:.3f} dBm, eta={eta:.3f}")
    return PathLossParams(d0=d0, p0=p0, eta=eta)


def calibrated_distance(d_ftm: float, delta: float) -> float:
    """Subtract the constant bias, never going below zero."""
    return max(0.0, d_ftm - delta)


def _bias_sse(delta: float, d_ftm: np.ndarray, d_true: np.ndarray) -> float:
    return float(np.sum((np.maximum(0.0, d_ftm - delta) - d_true) ** 2))


def fit_bias(samples: Iterable[tuple[float, float]], step: float = BIAS_GRID_STEP) -> float:
    """Bias delta minimizing the calibrated squared ranging error.

    Grid over [0, max(d_ftm)] (the first minimum wins ties) followed by a
    bounded scalar refinement inside the winning grid cell.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or len(data) < 1:
        raise DatasetError("Bias fit needs at least one (distance, d_ftm) sample")
    d_true, d_ftm = data[:, 0], data[:, 1]

    n_grid = int(math.floor(float(np.max(d_ftm)) / step)) + 1
    grid = np.arange(n_grid) * step
    sse = np.empty(n_grid)
    for start in range(0, n_grid, 512):
        chunk = grid[start:start + 512]
        residual = np.maximum(0.0, d_ftm[None, :] - chunk[:, None]) - d_true[None, :]
        sse[start:start + 512] = np.sum(residual ** 2, axis=1)
    i = int(np.argmin(sse))
    delta, best = float(grid[i]), float(sse[i])

    lo, hi = max(0.0, delta - step), delta + step
    refined = minimize_scalar(_bias_sse, bounds=(lo, hi), args=(d_ftm, d_true), method="bounded",
                              options={"xatol": 1e-6})
    if refined.success and refined.fun < best:
        delta = float(refined.x)
    logger.debug(f"Bias fit on {len(data)} samples: delta={delta:.4f} m")
    return delta
