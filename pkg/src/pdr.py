"""
Step-level pedestrian dead reckoning: the unlabeled reference trajectory
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError

Point = tuple[float, float]


@dataclass(frozen=True)
class PdrConfig:
    """Step-event PDR error model.

    step_length_std is relative to step_length_mean: each step length is
    scaled by (1 + N(0, (std / mean)^2)). Heading error is a linear drift
    ramp plus white noise per step. phi_ref and initial_position are the
    unknown frame of the trajectory.
    """
    step_length_mean: float = 0.7
    step_length_std: float = 0.035
    heading_noise_std: float = 0.01
    heading_drift_rate: float = 0.0005
    phi_ref: float = 0.0
    initial_position: Point = (0.0, 0.0)

    def __post_init__(self):
        if self.step_length_mean <= 0:
            raise ConfigurationError(f"step_length_mean must be positive, got {self.step_length_mean}")
        if self.step_length_std < 0 or self.heading_noise_std < 0:
            raise ConfigurationError("PDR noise standard deviations must be >= 0")

    def with_random_frame(self, rng: np.random.Generator, site_size: tuple[float, float]) -> "PdrConfig":
        """Fresh phi_ref and initial position for one dataset."""
        return replace(
            self,
            phi_ref=float(rng.uniform(-math.pi, math.pi)),
            initial_position=(float(rng.uniform(0.0, site_size[0])), float(rng.uniform(0.0, site_size[1]))),
        )

    def to_dict(self) -> dict:
        return {
            "step_length_mean": self.step_length_mean,
            "step_length_std": self.step_length_std,
            "heading_noise_std": self.heading_noise_std,
            "heading_drift_rate": self.heading_drift_rate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PdrConfig":
        known = {"step_length_mean", "step_length_std", "heading_noise_std", "heading_drift_rate"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Unknown pdr fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class PdrTrajectory:
    positions: np.ndarray  # (K, 2)

    def __len__(self) -> int:
        return len(self.positions)


def pdr_step(prev: Point, step_length: float, heading: float, phi_ref: float) -> Point:
    """p(t) = p(t-1) + L * [-sin(phi + phi_ref), cos(phi + phi_ref)]."""
    if step_length == 0:
        return (prev[0], prev[1])
    angle = heading + phi_ref
    return (prev[0] - step_length * math.sin(angle), prev[1] + step_length * math.cos(angle))


def simulate_pdr(true_positions: np.ndarray, config: PdrConfig, rng: np.random.Generator) -> PdrTrajectory:
    """Dead-reckoned copy of a true trajectory in the config's own frame.

    Each true displacement is decomposed into a step length and a heading,
    corrupted, and integrated from config.initial_position.
    """
    true_positions = np.asarray(true_positions, dtype=float)
    if len(true_positions) < 2:
        raise ConfigurationError("PDR simulation needs at least two true positions")

    rel_std = config.step_length_std / config.step_length_mean
    out = np.empty_like(true_positions)
    current = (float(config.initial_position[0]), float(config.initial_position[1]))
    out[0] = current
    for k in range(1, len(true_positions)):
        dx, dy = true_positions[k] - true_positions[k - 1]
        length = math.hypot(dx, dy)
        heading = math.atan2(-dx, dy) if length > 0 else 0.0

        noise = float(rng.normal(0.0, rel_std)) if rel_std > 0 else 0.0
        length *= max(0.0, 1.0 + noise)
        heading += config.heading_drift_rate * k
        if config.heading_noise_std > 0:
            heading += float(rng.normal(0.0, config.heading_noise_std))

        current = pdr_step(current, length, heading, config.phi_ref)
        out[k] = current
    return PdrTrajectory(positions=out)
