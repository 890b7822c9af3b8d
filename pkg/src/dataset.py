"""
Unlabeled training datasets: synthesis from a scenario and JSONL persistence
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DatasetError
from .ftm_sim import ChannelModel, FtmMeasurement, simulate_burst
from .pdr import PdrConfig, PdrTrajectory, simulate_pdr
from .scenario import (
    LinkState,
    SiteConfig,
    TruePath,
    classify_link,
    default_site,
    default_test_path,
    sample_true_trajectory,
)

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 100  # Wi-Fi time steps per dataset
SEGMENT_MARGIN = 2.0
SPEED_RANGE = (0.8, 1.4)
MIN_LEG_LENGTH = 5.0
DEFAULT_CALIBRATION_POSITIONS = 500

StepMeasurements = list[tuple[int, FtmMeasurement]]


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a scenario JSON file describes."""
    site: SiteConfig = field(default_factory=default_site)
    path: TruePath = field(default_factory=default_test_path)
    channel: ChannelModel = field(default_factory=ChannelModel)
    pdr: PdrConfig = field(default_factory=PdrConfig)

    def to_dict(self) -> dict:
        data = self.site.to_dict()
        data["path"] = self.path.to_dict()
        data["channel"] = self.channel.to_dict()
        data["pdr"] = self.pdr.to_dict()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict, bandwidth: str | None = None) -> "ScenarioConfig":
        """Build from a scenario dict; bandwidth, when given, picks the channel preset."""
        site = SiteConfig.from_dict(data) if "aps" in data else default_site()
        path = TruePath.from_dict(data["path"]) if "path" in data else default_test_path()
        channel_data = dict(data.get("channel", {}))
        if bandwidth is not None:
            channel_data["name"] = bandwidth
        channel = ChannelModel.from_dict(channel_data)
        pdr = PdrConfig.from_dict(data["pdr"]) if "pdr" in data else PdrConfig()
        if len(site.aps) < 3:
            raise ConfigurationError(f"Positioning needs at least 3 APs, site has {len(site.aps)}")
        return cls(site=site, path=path, channel=channel, pdr=pdr)


def load_scenario(path: Path | None, bandwidth: str | None = None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig.from_dict({}, bandwidth)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario config not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Scenario config {path} is not valid JSON: {e}") from e
    return ScenarioConfig.from_dict(data, bandwidth)


@dataclass(frozen=True)
class DatasetMetadata:
    seed: int
    bandwidth: str
    segment_id: int
    kind: str = "segment"


@dataclass
class Dataset:
    """Per-step raw measurements x_n^(k) and the paired PDR track p^(k).

    truth and los are simulation labels kept for evaluation; training never
    reads them.
    """
    steps: list[StepMeasurements]
    pdr: PdrTrajectory
    metadata: DatasetMetadata
    truth: np.ndarray | None = None
    los: list[list[bool]] | None = None

    def __post_init__(self):
        if len(self.steps) != len(self.pdr):
            raise DatasetError(f"Dataset has {len(self.steps)} Wi-Fi steps but {len(self.pdr)} PDR positions")
        if self.truth is not None and len(self.truth) != len(self.steps):
            raise DatasetError("Ground-truth length does not match step count")

    @property
    def K(self) -> int:
        return len(self.steps)

    @property
    def segment_id(self) -> int:
        return self.metadata.segment_id

    def ap_ids(self) -> set[int]:
        return {ap_id for step in self.steps for ap_id, _ in step}

    def to_jsonl(self) -> str:
        lines = [json.dumps({"metadata": asdict(self.metadata)})]
        for k, step in enumerate(self.steps):
            record = {
                "k": k + 1,
                "measurements": [
                    {"ap_id": ap_id, "d": m.d_ftm, "s": m.s_ftm, "p": m.p_ftm}
                    | ({"los": self.los[k][i]} if self.los is not None else {})
                    for i, (ap_id, m) in enumerate(step)
                ],
                "pdr": [float(v) for v in self.pdr.positions[k]],
            }
            if self.truth is not None:
                record["truth"] = [float(v) for v in self.truth[k]]
            lines.append(json.dumps(record))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, source: str = "<dataset>") -> "Dataset":
        metadata = DatasetMetadata(seed=0, bandwidth="unknown", segment_id=0)
        steps, pdr, truth, los = [], [], [], []
        labeled_steps = 0
        try:
            for line_no, line in enumerate(text.splitlines(), start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                if "metadata" in record:
                    metadata = DatasetMetadata(**record["metadata"])
                    continue
                if record["k"] != len(steps) + 1:
                    raise DatasetError(f"{source}:{line_no}: expected step {len(steps) + 1}, got {record['k']}")
                step = [
                    (int(m["ap_id"]), FtmMeasurement(float(m["d"]), float(m["s"]), float(m["p"])))
                    for m in record["measurements"]
                ]
                steps.append(step)
                labels = [m["los"] for m in record["measurements"] if "los" in m]
                if labels:
                    if len(labels) != len(step):
                        raise DatasetError(f"{source}:{line_no}: LOS labels on only some measurements")
                    labeled_steps += 1
                los.append([bool(v) for v in labels])
                pdr.append(record["pdr"])
                if "truth" in record:
                    truth.append(record["truth"])
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, DatasetError):
                raise
            raise DatasetError(f"Malformed dataset {source}: {e!r}") from e
        if not steps:
            raise DatasetError(f"Dataset {source} has no time steps")
        if truth and len(truth) != len(steps):
            raise DatasetError(f"Dataset {source} has ground truth on only some steps")
        # steps without responses carry no labels either way
        has_labels = labeled_steps > 0
        return cls(
            steps=steps,
            pdr=PdrTrajectory(np.asarray(pdr, dtype=float).reshape(-1, 2)),
            metadata=metadata,
            truth=np.asarray(truth, dtype=float) if truth else None,
            los=los if has_labels else None,
        )


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    return Dataset.from_jsonl(path.read_text(), source=str(path))


def measure_along(positions: np.ndarray, site: SiteConfig, channel: ChannelModel,
                  rng: np.random.Generator) -> tuple[list[StepMeasurements], list[list[bool]]]:
    """Burst measurements toward every AP at every position; failed bursts are dropped."""
    steps, labels = [], []
    for pos in positions:
        step, step_los = [], []
        for ap in site.aps:
            los = classify_link(site, (pos[0], pos[1]), ap) == LinkState.LOS
            if los and site.nlos_override_rate > 0 and rng.random() < site.nlos_override_rate:
                los = False
            true_d = math.hypot(pos[0] - ap.x, pos[1] - ap.y)
            m = simulate_burst(true_d, los, channel, rng)
            if m is not None:
                step.append((ap.id, m))
                step_los.append(los)
        steps.append(step)
        labels.append(step_los)
    return steps, labels


def random_walk_path(site: SiteConfig, n_steps: int, rng: np.random.Generator) -> TruePath:
    """Random waypoint walk inside the site long enough for n_steps samples."""
    lo = np.array([SEGMENT_MARGIN, SEGMENT_MARGIN])
    hi = np.array([site.width - SEGMENT_MARGIN, site.height - SEGMENT_MARGIN])
    speed = float(rng.uniform(*SPEED_RANGE))
    needed = speed * (n_steps - 1) + speed
    waypoints = [tuple(rng.uniform(lo, hi))]
    length = 0.0
    while length < needed:
        nxt = tuple(rng.uniform(lo, hi))
        leg = math.dist(waypoints[-1], nxt)
        if leg < MIN_LEG_LENGTH:
            continue
        waypoints.append(nxt)
        length += leg
    return TruePath(waypoints=tuple((float(x), float(y)) for x, y in waypoints), speed=speed)


def _build(truth: np.ndarray, scenario: ScenarioConfig, rng: np.random.Generator,
           metadata: DatasetMetadata) -> Dataset:
    steps, labels = measure_along(truth, scenario.site, scenario.channel, rng)
    pdr_config = scenario.pdr.with_random_frame(rng, (scenario.site.width, scenario.site.height))
    pdr = simulate_pdr(truth, pdr_config, rng)
    return Dataset(steps=steps, pdr=pdr, metadata=metadata, truth=truth, los=labels)


def generate_segment(scenario: ScenarioConfig, rng: np.random.Generator, segment_id: int, seed: int = 0,
                     n_steps: int = DEFAULT_STEPS) -> Dataset:
    """One user walking freely for n_steps ranging instants."""
    if n_steps < 2:
        raise ConfigurationError(f"Segments need at least 2 steps, got {n_steps}")
    path = random_walk_path(scenario.site, n_steps, rng)
    truth = sample_true_trajectory(path)[:n_steps]
    metadata = DatasetMetadata(seed=seed, bandwidth=scenario.channel.name, segment_id=segment_id)
    return _build(truth, scenario, rng, metadata)


def generate_test(scenario: ScenarioConfig, rng: np.random.Generator, seed: int = 0) -> Dataset:
    """Walk along the configured test path."""
    truth = sample_true_trajectory(scenario.path)
    if len(truth) < 2:
        raise ConfigurationError("Test path is too short for a single ranging step pair")
    metadata = DatasetMetadata(seed=seed, bandwidth=scenario.channel.name, segment_id=-1, kind="test")
    return _build(truth, scenario, rng, metadata)


@dataclass(frozen=True)
class CalibrationSample:
    ap_id: int
    d_true: float
    measurement: FtmMeasurement
    los: bool | None

    def to_dict(self) -> dict:
        m = self.measurement
        return {"ap_id": self.ap_id, "d_true": self.d_true, "d": m.d_ftm, "s": m.s_ftm, "p": m.p_ftm, "los": self.los}

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationSample":
        return cls(
            ap_id=int(data["ap_id"]),
            d_true=float(data["d_true"]),
            measurement=FtmMeasurement(float(data["d"]), float(data["s"]), float(data["p"])),
            los=None if data.get("los") is None else bool(data["los"]),
        )


def generate_calibration(scenario: ScenarioConfig, rng: np.random.Generator,
                         n_positions: int = DEFAULT_CALIBRATION_POSITIONS,
                         los_only: bool = False) -> list[CalibrationSample]:
    """Labeled campaign: random positions ranged toward every AP."""
    site = scenario.site
    positions = np.column_stack([rng.uniform(0.0, site.width, n_positions), rng.uniform(0.0, site.height, n_positions)])
    steps, labels = measure_along(positions, site, scenario.channel, rng)
    samples = []
    for pos, step, step_los in zip(positions, steps, labels):
        for (ap_id, m), los in zip(step, step_los):
            if los_only and not los:
                continue
            ap = site.ap(ap_id)
            samples.append(CalibrationSample(ap_id, math.hypot(pos[0] - ap.x, pos[1] - ap.y), m, los))
    return samples


def calibration_to_jsonl(samples: list[CalibrationSample]) -> str:
    return "".join(json.dumps(s.to_dict()) + "\n" for s in samples)


def load_calibration(path: Path) -> list[CalibrationSample]:
    path = Path(path)
    try:
        return [CalibrationSample.from_dict(json.loads(line)) for line in path.read_text().splitlines() if line.strip()]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"Malformed calibration file {path}: {e!r}") from e


@dataclass
class GeneratedData:
    segments: list[Dataset]
    test: Dataset
    calibration: list[CalibrationSample]


def generate_all(scenario: ScenarioConfig, seed: int, n_segments: int, n_steps: int = DEFAULT_STEPS) -> GeneratedData:
    """Segments, test walk and calibration campaign from independent seed streams."""
    if n_segments < 1:
        raise ConfigurationError(f"Need at least one segment, got {n_segments}")
    streams = np.random.SeedSequence(seed).spawn(n_segments + 2)
    segments = []
    for i in range(n_segments):
        segments.append(generate_segment(scenario, np.random.default_rng(streams[i]), segment_id=i, seed=seed, n_steps=n_steps))
        logger.info(f"  Segment {i}: {segments[-1].K} steps, "
                    f"{np.mean([len(s) for s in segments[-1].steps]):.1f} APs per step")
    test = generate_test(scenario, np.random.default_rng(streams[n_segments]), seed=seed)
    calibration = generate_calibration(scenario, np.random.default_rng(streams[n_segments + 1]))
    return GeneratedData(segments=segments, test=test, calibration=calibration)
