"""
Range-only EKF positioning, differentiable when run on a tape
"""

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Scalar, value_of
from .errors import ConfigurationError
from .ftm_sim import FtmMeasurement
from .ranging_nn import RangingModule, forward_batch

Point = tuple[float, float]
ApMap = Mapping[int, Point]
StepMeasurements = Sequence[tuple[int, FtmMeasurement]]

DEFAULT_MAX_APS = 5
DEFAULT_PROCESS_NOISE = 0.5  # m^2 per step
MIN_RANGE_STD = 0.1
MIN_INIT_DISTANCE = 1e-3
INIT_COVARIANCE = 100.0
UNINFORMED_COVARIANCE = 1e4
MIN_LINEARIZATION_RANGE_SQ = 1e-12


@dataclass(frozen=True)
class RangingResult:
    ap_id: int
    d: Scalar
    s: Scalar

    def __post_init__(self):
        if value_of(self.d) < 0 or value_of(self.s) < 0:
            raise ConfigurationError(f"Ranging result for AP {self.ap_id} has negative distance or std")


@dataclass(frozen=True)
class EkfState:
    """Position mean z and covariance P.

    P is stored symmetric by construction: both off-diagonal slots hold the
    same scalar.
    """
    z: tuple[Scalar, Scalar]
    P: tuple[tuple[Scalar, Scalar], tuple[Scalar, Scalar]]

    @classmethod
    def at(cls, position: Point, variance: float) -> "EkfState":
        return cls(z=(float(position[0]), float(position[1])), P=((variance, 0.0), (0.0, variance)))

    def position(self) -> np.ndarray:
        return np.array([value_of(self.z[0]), value_of(self.z[1])])

    def covariance(self) -> np.ndarray:
        return np.array([[value_of(v) for v in row] for row in self.P])


@dataclass(frozen=True)
class EkfConfig:
    process_noise: float = DEFAULT_PROCESS_NOISE
    max_aps: int = DEFAULT_MAX_APS
    min_std: float = MIN_RANGE_STD

    def __post_init__(self):
        if self.max_aps < 1:
            raise ConfigurationError(f"max_aps must be >= 1, got {self.max_aps}")
        if self.process_noise < 0 or self.min_std <= 0:
            raise ConfigurationError("EKF noise settings must be positive")


def select_aps(results: Sequence[RangingResult], max_n: int = DEFAULT_MAX_APS) -> list[RangingResult]:
    """The max_n nearest results by measured distance, returned in ap_id order."""
    if max_n < 1:
        raise ConfigurationError(f"max_n must be >= 1, got {max_n}")
    nearest = sorted(results, key=lambda r: (value_of(r.d), r.ap_id))[:max_n]
    return sorted(nearest, key=lambda r: r.ap_id)


def init_position(results: Sequence[RangingResult], aps: ApMap, center: Point | None = None,
                  max_n: int = DEFAULT_MAX_APS) -> EkfState:
    """Inverse-distance weighted centroid of the ranged APs, P = 100 I."""
    selected = select_aps(results, max_n) if results else []
    if not selected:
        if center is None:
            raise ConfigurationError("Cannot initialize the filter without ranging results or a site center")
        return EkfState.at(center, UNINFORMED_COVARIANCE)

    weights = []
    for r in selected:
        if r.ap_id not in aps:
            raise ConfigurationError(f"Ranging result references unknown AP {r.ap_id}")
        d = r.d if value_of(r.d) >= MIN_INIT_DISTANCE else MIN_INIT_DISTANCE
        weights.append(1.0 / d)
    norm = ad.total(weights)
    x = ad.total([w * aps[r.ap_id][0] for w, r in zip(weights, selected)]) / norm
    y = ad.total([w * aps[r.ap_id][1] for w, r in zip(weights, selected)]) / norm
    return EkfState(z=(x, y), P=((INIT_COVARIANCE, 0.0), (0.0, INIT_COVARIANCE)))


def ekf_step(state: EkfState, results: Sequence[RangingResult], aps: ApMap,
             q: float = DEFAULT_PROCESS_NOISE, max_n: int = DEFAULT_MAX_APS,
             min_std: float = MIN_RANGE_STD) -> EkfState:
    """Random-walk predict, then one scalar range update per selected AP."""
    zx, zy = state.z
    p00, p01, p11 = state.P[0][0], state.P[0][1], state.P[1][1]
    p00 = p00 + q
    p11 = p11 + q

    for r in select_aps(results, max_n) if results else []:
        if r.ap_id not in aps:
            raise ConfigurationError(f"Ranging result references unknown AP {r.ap_id}")
        ax, ay = aps[r.ap_id]
        dx = zx - ax
        dy = zy - ay
        r2 = ad.norm2sq((dx, dy))
        if value_of(r2) < MIN_LINEARIZATION_RANGE_SQ:
            continue
        predicted = ad.sqrt(r2)
        hx = dx / predicted
        hy = dy / predicted

        ph0 = p00 * hx + p01 * hy
        ph1 = p01 * hx + p11 * hy
        s = r.s if value_of(r.s) >= min_std else min_std
        innovation_var = ad.dot2((hx, hy), (ph0, ph1)) + ad.square(s)
        k0 = ph0 / innovation_var
        k1 = ph1 / innovation_var

        innovation = r.d - predicted
        zx = zx + k0 * innovation
        zy = zy + k1 * innovation
        p00 = p00 - k0 * ph0
        p01 = p01 - k0 * ph1
        p11 = p11 - k1 * ph1

    return EkfState(z=(zx, zy), P=((p00, p01), (p01, p11)))


def ap_centroid(aps: ApMap) -> Point:
    pts = np.array(list(aps.values()), dtype=float)
    return (float(pts[:, 0].mean()), float(pts[:, 1].mean()))


def run_ekf(ranging: Sequence[Sequence[RangingResult]], aps: ApMap, config: EkfConfig = EkfConfig(),
            center: Point | None = None) -> list[EkfState]:
    """Filter a whole sequence of per-step ranging lists.

    The first step initializes the filter and is then applied as an update.
    """
    if not ranging:
        raise ConfigurationError("Need at least one time step")
    center = center if center is not None else ap_centroid(aps)
    state = init_position(ranging[0], aps, center, config.max_aps)
    states = []
    for results in ranging:
        state = ekf_step(state, results, aps, config.process_noise, config.max_aps, config.min_std)
        states.append(state)
    return states


def rank_steps(steps: Sequence[StepMeasurements], module: RangingModule,
               tape: ad.Tape | None = None) -> list[list[RangingResult]]:
    """Ranging lists R^(k)(theta): one network pass over every measurement."""
    inputs = [m.as_input() for step in steps for _, m in step]
    outputs = forward_batch(np.asarray(inputs, dtype=float), module, tape) if inputs else []
    ranging = []
    i = 0
    for step in steps:
        results = []
        for ap_id, _ in step:
            d, s = outputs[i]
            results.append(RangingResult(ap_id=ap_id, d=d, s=s))
            i += 1
        ranging.append(results)
    return ranging


def run_trajectory(steps: Sequence[StepMeasurements], aps: ApMap, module: RangingModule,
                   tape: ad.Tape | None = None, config: EkfConfig = EkfConfig(),
                   center: Point | None = None) -> list[tuple[Scalar, Scalar]]:
    """Wi-Fi trajectory z^(k)(theta) from raw measurements."""
    states = run_ekf(rank_steps(steps, module, tape), aps, config, center)
    return [s.z for s in states]


def positions_array(trajectory: Sequence[tuple[Scalar, Scalar]]) -> np.ndarray:
    return np.array([[value_of(x), value_of(y)] for x, y in trajectory], dtype=float).reshape(-1, 2)


def trajectory_to_csv(positions: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "x", "y"])
    for k, (x, y) in enumerate(np.asarray(positions, dtype=float), start=1):
        writer.writerow([k, repr(float(x)), repr(float(y))])
    return buf.getvalue()
