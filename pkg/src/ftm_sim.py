"""
Synthetic FTM ranging: RTT arithmetic and burst-level measurement statistics
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .baselines import PathLossParams
from .errors import ConfigurationError, MeasurementInvalidError

SPEED_OF_LIGHT = 299_792_458.0  # m/s
DEFAULT_BURST_SIZE = 8

# Bias that best calibrates raw FTM distances at each bandwidth (m).
BANDWIDTH_BIAS = {"bw20": 6.6, "bw40": 4.4, "bw80": 3.4}


@dataclass(frozen=True)
class FtmMeasurement:
    """Burst summary reported by the FTM protocol.

    d_ftm is the mean of the burst distances, s_ftm their sample standard
    deviation (meters) and p_ftm the mean RSS of the burst packets (dBm).
    """
    d_ftm: float
    s_ftm: float
    p_ftm: float

    def __post_init__(self):
        if not self.d_ftm >= 0 or not self.s_ftm >= 0:
            raise MeasurementInvalidError(f"Negative FTM distance or std: {self}")
        if not math.isfinite(self.p_ftm):
            raise MeasurementInvalidError(f"Non-finite RSS: {self.p_ftm}")

    def as_input(self) -> tuple[float, float, float]:
        return (self.d_ftm, self.s_ftm, self.p_ftm)


@dataclass(frozen=True)
class RttResult:
    tau_ns: float
    one_way_distance: float


@dataclass(frozen=True)
class ChannelModel:
    name: str = "bw40"
    burst_size: int = DEFAULT_BURST_SIZE
    los_noise_std: float = 0.6
    nlos_bias_mean: float = BANDWIDTH_BIAS["bw40"]
    nlos_bias_std: float = 2.0
    pathloss: PathLossParams = field(default_factory=PathLossParams)
    shadowing_std: float = 2.0
    nlos_extra_loss: float = 6.0
    success_floor_dbm: float = -100.0
    success_width_db: float = 3.0
    los_success_rate: float = 0.95

    def __post_init__(self):
        if self.burst_size < 1:
            raise ConfigurationError(f"burst_size must be >= 1, got {self.burst_size}")
        for name in ("los_noise_std", "nlos_bias_std", "shadowing_std"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.success_width_db <= 0:
            raise ConfigurationError(f"success_width_db must be positive, got {self.success_width_db}")
        if not 0.0 <= self.los_success_rate <= 1.0:
            raise ConfigurationError(f"los_success_rate must be a probability, got {self.los_success_rate}")

    @classmethod
    def preset(cls, name: str) -> "ChannelModel":
        """Bandwidth presets; only parameters differ between them."""
        if name not in BANDWIDTH_PRESETS:
            raise ConfigurationError(f"Unknown bandwidth preset {name!r}, expected one of {sorted(BANDWIDTH_PRESETS)}")
        return cls(name=name, **BANDWIDTH_PRESETS[name])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "burst_size": self.burst_size,
            "los_noise_std": self.los_noise_std,
            "nlos_bias_mean": self.nlos_bias_mean,
            "nlos_bias_std": self.nlos_bias_std,
            "pathloss": self.pathloss.to_dict(),
            "shadowing_std": self.shadowing_std,
            "nlos_extra_loss": self.nlos_extra_loss,
            "success_floor_dbm": self.success_floor_dbm,
            "success_width_db": self.success_width_db,
            "los_success_rate": self.los_success_rate,
        }

    @classmethod
    def from_dict(cls, data: dict, default: str = "bw40") -> "ChannelModel":
        """Start from the named preset and override whatever the dict sets."""
        base = cls.preset(data.get("name", data.get("preset", default)))
        overrides = {k: v for k, v in data.items() if k not in ("name", "preset", "pathloss")}
        unknown = set(overrides) - set(base.to_dict())
        if unknown:
            raise ConfigurationError(f"Unknown channel fields: {sorted(unknown)}")
        if "pathloss" in data:
            overrides["pathloss"] = PathLossParams.from_dict(data["pathloss"])
        if "burst_size" in overrides:
            overrides["burst_size"] = int(overrides["burst_size"])
        return replace(base, **overrides)


BANDWIDTH_PRESETS: dict[str, dict] = {
    "bw20": {"los_noise_std": 1.0, "nlos_bias_mean": BANDWIDTH_BIAS["bw20"], "nlos_bias_std": 2.5},
    "bw40": {"los_noise_std": 0.6, "nlos_bias_mean": BANDWIDTH_BIAS["bw40"], "nlos_bias_std": 2.0},
    "bw80": {"los_noise_std": 0.4, "nlos_bias_mean": BANDWIDTH_BIAS["bw80"], "nlos_bias_std": 1.5},
}


def rtt_from_timestamps(t1: float, t2: float, t3: float, t4: float) -> RttResult:
    """RTT from one FTM/ACK exchange, timestamps in nanoseconds.

    Reports the one-way distance tau * c / 2, which is what the burst
    statistics and every error figure use.
    """
    tau = (t4 - t1) - (t3 - t2)
    if t4 < t1 or t3 < t2 or tau < 0:
        raise MeasurementInvalidError(f"Invalid FTM timestamps ({t1}, {t2}, {t3}, {t4}): tau={tau} ns")
    return RttResult(tau_ns=tau, one_way_distance=tau * 1e-9 * SPEED_OF_LIGHT / 2.0)


def _deterministic_rss(d: float, los: bool, model: ChannelModel) -> float:
    pl = model.pathloss
    d = max(d, pl.d0)
    rss = pl.p0 - 10.0 * pl.eta * math.log10(d / pl.d0)
    if not los:
        rss -= model.nlos_extra_loss
    return rss


def rss_from_distance(d: float, los: bool, model: ChannelModel, rng: np.random.Generator) -> float:
    """Log-distance RSS with shadowing; distances below d0 are clamped to d0."""
    return _deterministic_rss(d, los, model) + float(rng.normal(0.0, model.shadowing_std))


def success_probability(d: float, los: bool, model: ChannelModel) -> float:
    """Probability that a ranging request completes.

    LOS links succeed at a flat rate. NLOS links follow a logistic in the
    deterministic RSS around the sensitivity floor, capped at the LOS rate.
    """
    if los:
        return model.los_success_rate
    margin = _deterministic_rss(d, False, model) - model.success_floor_dbm
    return min(model.los_success_rate, float(expit(margin / model.success_width_db)))


def simulate_burst(true_d: float, los: bool, model: ChannelModel, rng: np.random.Generator) -> FtmMeasurement | None:
    """One burst of B exchanges, or None when the request fails."""
    if rng.random() >= success_probability(true_d, los, model):
        return None

    noise = rng.normal(0.0, model.los_noise_std, model.burst_size)
    bias = 0.0
    if not los:
        # One multipath bias per burst: it shifts the mean, not the spread.
        bias = max(0.0, float(rng.normal(model.nlos_bias_mean, model.nlos_bias_std)))

    d_ftm = max(0.0, true_d + bias + float(np.mean(noise)))
    s_ftm = float(np.std(noise, ddof=1)) if model.burst_size > 1 else 0.0
    rss = [rss_from_distance(true_d, los, model, rng) for _ in range(model.burst_size)]
    return FtmMeasurement(d_ftm=d_ftm, s_ftm=s_ftm, p_ftm=float(np.mean(rss)))
