"""
Ranging and positioning metrics for the trained module and the comparison methods
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .alignment import TrajectoryPair, optimal_transform
from .baselines import PathLossParams, calibrated_distance, fit_bias, fit_path_loss, path_loss_distance
from .dataset import CalibrationSample, Dataset
from .errors import ConfigurationError, DatasetError
from .ftm_sim import BANDWIDTH_BIAS, FtmMeasurement
from .positioning import (
    DEFAULT_MAX_APS,
    MIN_LINEARIZATION_RANGE_SQ,
    MIN_RANGE_STD,
    ApMap,
    EkfConfig,
    Point,
    RangingResult,
    ap_centroid,
    init_position,
    positions_array,
    run_ekf,
    select_aps,
)
from .ranging_nn import RangingModule, predict
from .scenario import LinkState, SiteConfig, classify_link

logger = logging.getLogger(__name__)

CDF_STEP = 0.1
FTM_RANGE_STD = 2.0
PATH_LOSS_RELATIVE_STD = 0.3
PATH_LOSS_MIN_STD = 1.0

SENSOR_POSITION_NOISE = 0.1  # m^2 per step on top of the PDR displacement
SENSOR_HEADING_NOISE = 1e-4  # rad^2 per step
HEADING_INIT_STEPS = 10
HEADING_INIT_VARIANCE = 0.1


class Method(str, Enum):
    RAW = "raw"
    PATH_LOSS = "path-loss"
    CALIBRATED = "calibrated"
    NN = "nn"


ALL_METHODS = (Method.RAW, Method.PATH_LOSS, Method.CALIBRATED, Method.NN)


@dataclass(frozen=True)
class Baselines:
    """Fitted parameters of the comparison methods."""
    path_loss: PathLossParams = field(default_factory=PathLossParams)
    delta: float = BANDWIDTH_BIAS["bw40"]

    @classmethod
    def for_bandwidth(cls, bandwidth: str) -> "Baselines":
        return cls(delta=BANDWIDTH_BIAS.get(bandwidth, BANDWIDTH_BIAS["bw40"]))

    @classmethod
    def fit(cls, samples: Sequence[CalibrationSample]) -> "Baselines":
        """Both baselines fitted on one labeled campaign."""
        path_loss = fit_path_loss([(s.d_true, s.measurement.p_ftm) for s in samples])
        delta = fit_bias([(s.d_true, s.measurement.d_ftm) for s in samples])
        logger.info(f"Fitted baselines: p0={path_loss.p0:.2f} dBm, eta={path_loss.eta:.3f}, delta={delta:.3f} m")
        return cls(path_loss=path_loss, delta=delta)


# --- statistics ---

def mae(errors: Iterable[float]) -> float:
    errors = list(errors)
    if not errors:
        raise DatasetError("Cannot summarize an empty error set")
    return math.fsum(errors) / len(errors)


def nearest_rank(errors: Iterable[float], q: float = 0.9) -> float:
    """Smallest error with at least a fraction q of the errors at or below it."""
    ordered = sorted(errors)
    if not ordered:
        raise DatasetError("Cannot summarize an empty error set")
    if not 0.0 < q <= 1.0:
        raise ConfigurationError(f"Percentile fraction must be in (0, 1], got {q}")
    rank = max(1, math.ceil(q * len(ordered) - 1e-12))
    return ordered[rank - 1]


def empirical_cdf(errors: Iterable[float], step: float = CDF_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of errors <= e for e on a fixed grid from 0 past the largest error."""
    ordered = np.sort(np.asarray(list(errors), dtype=float))
    if ordered.size == 0:
        raise DatasetError("Cannot summarize an empty error set")
    n_points = int(math.ceil(ordered[-1] / step)) + 1
    grid = np.arange(n_points) * step
    grid[-1] = max(grid[-1], ordered[-1])
    fractions = np.searchsorted(ordered, grid, side="right") / ordered.size
    return grid, fractions


@dataclass
class ErrorSummary:
    errors: np.ndarray
    mae: float
    p90: float
    cdf_grid: np.ndarray
    cdf: np.ndarray

    @classmethod
    def of(cls, errors: Iterable[float]) -> "ErrorSummary":
        errors = np.asarray(list(errors), dtype=float)
        grid, fractions = empirical_cdf(errors)
        return cls(errors=errors, mae=mae(errors.tolist()), p90=nearest_rank(errors.tolist()), cdf_grid=grid, cdf=fractions)


@dataclass
class EvalReport:
    """Per-method metric rows plus the error distributions behind them."""
    kind: str
    rows: list[tuple[str, str, float]] = field(default_factory=list)
    summaries: dict[str, ErrorSummary] = field(default_factory=dict)
    trajectories: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, method: str, metric: str, value: float) -> None:
        self.rows.append((method, metric, float(value)))

    def value(self, method: str, metric: str) -> float:
        for m, name, v in self.rows:
            if m == method and name == metric:
                return v
        raise KeyError(f"No {metric!r} for method {method!r}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "metric", "value"])
        for method, metric, value in self.rows:
            writer.writerow([method, metric, repr(value)])
        return buf.getvalue()

    def cdf_to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "error_m", "fraction"])
        for method, summary in self.summaries.items():
            for e, f in zip(summary.cdf_grid, summary.cdf):
                writer.writerow([method, repr(round(float(e), 10)), repr(float(f))])
        return buf.getvalue()


# --- ranging ---

def estimate_ranges(method: Method, measurements: Sequence[FtmMeasurement], baselines: Baselines,
                    module: RangingModule | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Distance estimates and the standard deviations the EKF should trust them with."""
    method = Method(method)
    if not measurements:
        return np.zeros(0), np.zeros(0)
    if method is Method.NN:
        if module is None:
            raise ConfigurationError("The nn method needs a ranging module")
        return predict(module, np.array([m.as_input() for m in measurements]))
    if method is Method.RAW:
        d = np.array([m.d_ftm for m in measurements])
        return d, np.full(d.shape, FTM_RANGE_STD)
    if method is Method.CALIBRATED:
        d = np.array([calibrated_distance(m.d_ftm, baselines.delta) for m in measurements])
        return d, np.full(d.shape, FTM_RANGE_STD)
    d = np.array([path_loss_distance(m.p_ftm, baselines.path_loss) for m in measurements])
    return d, np.maximum(PATH_LOSS_RELATIVE_STD * d, PATH_LOSS_MIN_STD)


def labeled_samples(dataset: Dataset, aps: ApMap, site: SiteConfig | None = None) -> list[CalibrationSample]:
    """Labeled ranging samples from a dataset that carries ground truth.

    Recorded LOS labels win; without them the link is classified against the
    site's walls when one is given, and left unknown otherwise.
    """
    if dataset.truth is None:
        raise DatasetError("Evaluation needs a dataset with ground-truth positions")
    samples = []
    for k, step in enumerate(dataset.steps):
        tx, ty = dataset.truth[k]
        for i, (ap_id, m) in enumerate(step):
            ax, ay = aps[ap_id]
            if dataset.los is not None:
                los = bool(dataset.los[k][i])
            elif site is not None:
                los = classify_link(site, (float(tx), float(ty)), site.ap(ap_id)) == LinkState.LOS
            else:
                los = None
            samples.append(CalibrationSample(ap_id, math.hypot(tx - ax, ty - ay), m, los))
    return samples


def evaluate_ranging(samples: Sequence[CalibrationSample], methods: Iterable[Method] = ALL_METHODS,
                     baselines: Baselines = Baselines(), module: RangingModule | None = None) -> EvalReport:
    if not samples:
        raise DatasetError("Ranging evaluation needs at least one sample")
    report = EvalReport(kind="ranging")
    d_true = np.array([s.d_true for s in samples])
    labeled = all(s.los is not None for s in samples)
    los = np.array([bool(s.los) for s in samples])
    measurements = [s.measurement for s in samples]
    for method in methods:
        method = Method(method)
        d_hat, s_hat = estimate_ranges(method, measurements, baselines, module)
        summary = ErrorSummary.of(np.abs(d_hat - d_true))
        report.summaries[method.value] = summary
        report.add(method.value, "mae", summary.mae)
        report.add(method.value, "p90", summary.p90)
        report.add(method.value, "samples", len(samples))
        splits = (("los", los), ("nlos", ~los)) if labeled else ()
        for label, mask in splits:
            if mask.any():
                report.add(method.value, f"mae_{label}", mae(summary.errors[mask].tolist()))
                if method is Method.NN:
                    report.add(method.value, f"mean_s_{label}", float(np.mean(s_hat[mask])))
        logger.info(f"Ranging {method.value}: MAE {summary.mae:.3f} m, p90 {summary.p90:.3f} m")
    return report


def link_statistics(dataset: Dataset, site: SiteConfig) -> dict[str, float]:
    """Ranging success rate per geometric link class along a labeled walk."""
    if dataset.truth is None:
        raise DatasetError("Link statistics need ground-truth positions")
    attempts = {LinkState.LOS: 0, LinkState.NLOS: 0}
    successes = {LinkState.LOS: 0, LinkState.NLOS: 0}
    for k, step in enumerate(dataset.steps):
        responded = {ap_id for ap_id, _ in step}
        pos = (float(dataset.truth[k][0]), float(dataset.truth[k][1]))
        for ap in site.aps:
            state = classify_link(site, pos, ap)
            attempts[state] += 1
            successes[state] += ap.id in responded
    stats = {}
    for state in (LinkState.LOS, LinkState.NLOS):
        if attempts[state]:
            stats[f"success_rate_{state.value.lower()}"] = successes[state] / attempts[state]
    stats["mean_responding_aps"] = float(np.mean([len(step) for step in dataset.steps]))
    return stats


# --- positioning ---

def ranging_results(steps: Sequence[Sequence[tuple[int, FtmMeasurement]]], method: Method, baselines: Baselines,
                    module: RangingModule | None = None) -> list[list[RangingResult]]:
    flat = [m for step in steps for _, m in step]
    d_hat, s_hat = estimate_ranges(method, flat, baselines, module)
    results, i = [], 0
    for step in steps:
        row = []
        for ap_id, _ in step:
            row.append(RangingResult(ap_id, float(d_hat[i]), float(s_hat[i])))
            i += 1
        results.append(row)
    return results


@dataclass(frozen=True)
class FusionState:
    """Sensor-fusion filter state: position and heading offset of the PDR frame."""
    x: np.ndarray
    P: np.ndarray

    def position(self) -> np.ndarray:
        return self.x[:2].copy()


def fusion_predict(state: FusionState, displacement: np.ndarray,
                   q_pos: float = SENSOR_POSITION_NOISE, q_heading: float = SENSOR_HEADING_NOISE) -> FusionState:
    """Move by the PDR displacement rotated into the site frame."""
    theta = state.x[2]
    c, s = math.cos(theta), math.sin(theta)
    ux, uy = displacement
    x = state.x.copy()
    x[0] += c * ux - s * uy
    x[1] += s * ux + c * uy
    F = np.eye(3)
    F[0, 2] = -s * ux - c * uy
    F[1, 2] = c * ux - s * uy
    P = F @ state.P @ F.T + np.diag([q_pos, q_pos, q_heading])
    return FusionState(x, 0.5 * (P + P.T))


def fusion_update(state: FusionState, results: Sequence[RangingResult], aps: ApMap,
                  max_n: int = DEFAULT_MAX_APS, min_std: float = MIN_RANGE_STD) -> FusionState:
    x, P = state.x.copy(), state.P.copy()
    for r in select_aps(results, max_n) if results else []:
        ax, ay = aps[r.ap_id]
        dx, dy = x[0] - ax, x[1] - ay
        r2 = dx * dx + dy * dy
        if r2 < MIN_LINEARIZATION_RANGE_SQ:
            continue
        predicted = math.sqrt(r2)
        H = np.array([dx / predicted, dy / predicted, 0.0])
        s = max(float(r.s), min_std)
        PH = P @ H
        gain = PH / (H @ PH + s * s)
        x = x + gain * (float(r.d) - predicted)
        P = P - np.outer(gain, PH)
        P = 0.5 * (P + P.T)
    return FusionState(x, P)


def initial_heading(wifi: np.ndarray, pdr: np.ndarray, n_steps: int = HEADING_INIT_STEPS) -> float:
    n = min(n_steps, len(wifi))
    if n < 2:
        return 0.0
    angle, _ = optimal_transform(TrajectoryPair(wifi[:n], pdr[:n]))
    return angle


def run_sensor_fusion(ranging: Sequence[Sequence[RangingResult]], pdr: np.ndarray, aps: ApMap,
                      config: EkfConfig = EkfConfig(), center: Point | None = None) -> np.ndarray:
    """Three-state EKF driven by PDR displacements instead of a random walk."""
    wifi_only = positions_array([s.z for s in run_ekf(ranging, aps, config, center)])
    pdr = np.asarray(pdr, dtype=float)
    theta0 = initial_heading(wifi_only, pdr)

    start = init_position(ranging[0], aps, center if center is not None else ap_centroid(aps), config.max_aps)
    x0 = np.array([start.position()[0], start.position()[1], theta0])
    P0 = np.zeros((3, 3))
    P0[:2, :2] = start.covariance()
    P0[2, 2] = HEADING_INIT_VARIANCE
    state = FusionState(x0, P0)

    positions = []
    for k, results in enumerate(ranging):
        if k > 0:
            state = fusion_predict(state, pdr[k] - pdr[k - 1])
        state = fusion_update(state, results, aps, config.max_aps, config.min_std)
        positions.append(state.position())
    return np.array(positions)


def mean_selected_aps(ranging: Sequence[Sequence[RangingResult]], max_n: int = DEFAULT_MAX_APS) -> float:
    return float(np.mean([len(select_aps(r, max_n)) if r else 0 for r in ranging]))


def evaluate_positioning(dataset: Dataset, aps: ApMap, methods: Iterable[Method] = ALL_METHODS,
                         use_sensors: bool = False, baselines: Baselines = Baselines(),
                         module: RangingModule | None = None, config: EkfConfig = EkfConfig(),
                         center: Point | None = None) -> EvalReport:
    if dataset.truth is None:
        raise DatasetError("Positioning evaluation needs a dataset with ground-truth positions")
    report = EvalReport(kind="positioning")
    for method in methods:
        method = Method(method)
        ranging = ranging_results(dataset.steps, method, baselines, module)
        if use_sensors:
            estimates = run_sensor_fusion(ranging, dataset.pdr.positions, aps, config, center)
        else:
            estimates = positions_array([s.z for s in run_ekf(ranging, aps, config, center)])
        summary = ErrorSummary.of(np.linalg.norm(estimates - dataset.truth, axis=1))
        report.summaries[method.value] = summary
        report.trajectories[method.value] = estimates
        report.add(method.value, "mae", summary.mae)
        report.add(method.value, "p90", summary.p90)
        report.add(method.value, "mean_aps", mean_selected_aps(ranging, config.max_aps))
        logger.info(f"Positioning {method.value} (sensors {'on' if use_sensors else 'off'}): "
                    f"MAE {summary.mae:.3f} m, p90 {summary.p90:.3f} m")
    return report
