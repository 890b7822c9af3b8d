"""
Rotation/translation-invariant trajectory similarity

The cost is the closed-form minimum over rotations R and translations t of
sum_k ||z_k - (R p_k + t)||^2, written through the two cross-covariance
terms Gamma and Gamma~.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Scalar, value_of
from .errors import ConfigurationError

SQRT_EPS = 1e-12


@dataclass(frozen=True, init=False)
class TrajectoryPair:
    wifi: tuple[tuple[Scalar, Scalar], ...]
    pdr: tuple[tuple[float, float], ...]

    def __init__(self, wifi: Sequence, pdr: Sequence):
        wifi = tuple((w[0], w[1]) if isinstance(w[0], ad.Var) or isinstance(w[1], ad.Var)
                     else (float(w[0]), float(w[1])) for w in wifi)
        pdr = tuple((float(p[0]), float(p[1])) for p in pdr)
        if len(wifi) != len(pdr):
            raise ConfigurationError(f"Trajectory lengths differ: wifi {len(wifi)} vs pdr {len(pdr)}")
        if len(wifi) < 2:
            raise ConfigurationError("Trajectory pairs need at least two steps")
        object.__setattr__(self, "wifi", wifi)
        object.__setattr__(self, "pdr", pdr)

    @property
    def K(self) -> int:
        return len(self.wifi)


def _rot90(p: tuple[float, float]) -> tuple[float, float]:
    # I~ p with I~ = [[0, -1], [1, 0]]
    return (-p[1], p[0])


def gamma_terms(pair: TrajectoryPair) -> tuple[Scalar, Scalar]:
    K = pair.K
    sz = (ad.total(z[0] for z in pair.wifi), ad.total(z[1] for z in pair.wifi))
    sp = (math.fsum(p[0] for p in pair.pdr), math.fsum(p[1] for p in pair.pdr))
    gamma = ad.dot2(sz, sp) / K - ad.total(ad.dot2(z, p) for z, p in zip(pair.wifi, pair.pdr))
    gamma_t = ad.dot2(sz, _rot90(sp)) / K - ad.total(ad.dot2(z, _rot90(p)) for z, p in zip(pair.wifi, pair.pdr))
    return gamma, gamma_t


def _centered(pair: TrajectoryPair) -> TrajectoryPair:
    K = pair.K
    mx = ad.total(z[0] for z in pair.wifi) / K
    my = ad.total(z[1] for z in pair.wifi) / K
    px = math.fsum(p[0] for p in pair.pdr) / K
    py = math.fsum(p[1] for p in pair.pdr) / K
    return TrajectoryPair(
        wifi=[(z[0] - mx, z[1] - my) for z in pair.wifi],
        pdr=[(p[0] - px, p[1] - py) for p in pair.pdr],
    )


def aligned_cost(pair: TrajectoryPair) -> Scalar:
    """L = sum||z||^2 + sum||p||^2 - (||sum z||^2 + ||sum p||^2)/K - 2 sqrt(G^2 + G~^2 + eps).

    Evaluated on mean-centered trajectories, where the ||sum||^2 terms vanish
    and Gamma, Gamma~ are unchanged. Differentiable w.r.t. any Var in wifi.
    """
    centered = _centered(pair)
    spread_wifi = ad.total(ad.norm2sq(z) for z in centered.wifi)
    spread_pdr = math.fsum(p[0] * p[0] + p[1] * p[1] for p in centered.pdr)
    gamma, gamma_t = gamma_terms(centered)
    return spread_wifi + spread_pdr - 2.0 * ad.sqrt(ad.square(gamma) + ad.square(gamma_t) + SQRT_EPS)


def optimal_transform(pair: TrajectoryPair) -> tuple[float, np.ndarray]:
    """Rotation angle and translation mapping the PDR track onto the Wi-Fi track.

    z ~ R(angle) p + t with t = mean(z) - R mean(p). Coincident inputs give
    angle 0 and the mean difference.
    """
    wifi = np.array([[value_of(x), value_of(y)] for x, y in pair.wifi])
    pdr = np.array(pair.pdr)
    wc = wifi - wifi.mean(axis=0)
    pc = pdr - pdr.mean(axis=0)
    # -Gamma and -Gamma~ of the centered tracks
    a = float(np.sum(wc * pc))
    b = float(np.sum(wc[:, 1] * pc[:, 0] - wc[:, 0] * pc[:, 1]))
    angle = 0.0 if a * a + b * b == 0.0 else math.atan2(b, a)
    t = wifi.mean(axis=0) - rotation(angle) @ pdr.mean(axis=0)
    return angle, t


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def apply_transform(points: np.ndarray, angle: float, translation: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float) @ rotation(angle).T + np.asarray(translation, dtype=float)


def aligned_pdr(pair: TrajectoryPair) -> np.ndarray:
    """PDR track moved onto the Wi-Fi track by the optimal transform."""
    angle, t = optimal_transform(pair)
    return apply_transform(np.array(pair.pdr), angle, t)
