"""
Writes datasets, models, reports and the run manifest to local storage
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

from .dataset import CalibrationSample, Dataset, calibration_to_jsonl, load_calibration, load_dataset
from .ranging_nn import RangingModule

TOOL_VERSION = "0.1.0"

SEGMENT_PATTERN = "segment_*.jsonl"
TEST_FILE = "test.jsonl"
CALIBRATION_FILE = "calibration.jsonl"
MANIFEST_FILE = "manifest.json"


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Inputs and settings of one command; carries no timestamps."""
    command: str
    seed: int | None
    bandwidth: str | None
    output_dir: str
    config_path: str | None = None
    tool_version: str = TOOL_VERSION
    input_hashes: dict[str, str] = field(default_factory=dict)

    @classmethod
    def for_inputs(cls, command: str, inputs: Sequence[Path], **kwargs) -> "RunManifest":
        hashes = {str(p): file_sha256(p) for p in sorted(Path(i) for i in inputs)}
        return cls(command=command, input_hashes=hashes, **kwargs)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@runtime_checkable
class Publisher(Protocol):
    """Protocol for artifact stores the workbench reads from and writes to."""

    def path(self, name: str) -> Path:
        ...

    def write_manifest(self, manifest: RunManifest, name: str = MANIFEST_FILE) -> str:
        ...

    def publish_dataset(self, dataset: Dataset, name: str | None = None) -> str:
        ...

    def publish_calibration(self, samples: Sequence[CalibrationSample], name: str = CALIBRATION_FILE) -> str:
        ...

    def publish_model(self, module: RangingModule, name: str) -> str:
        ...

    def publish_text(self, name: str, text: str) -> str:
        ...

    def list_datasets(self) -> list[str]:
        ...

    def load_segments(self) -> list[Dataset]:
        ...

    def load_calibration(self) -> list[CalibrationSample] | None:
        ...


class LocalPublisher:
    """Publishes workbench artifacts under one local directory."""

    def __init__(self, base_path: str | Path = "runs"):
        self.base_path = Path(base_path)
        self.base_path.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, text: str) -> str:
        file_path = self.base_path / name
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(text)
        return str(file_path)

    def path(self, name: str) -> Path:
        return self.base_path / name

    def write_manifest(self, manifest: RunManifest, name: str = MANIFEST_FILE) -> str:
        return self._write(name, manifest.to_json() + "\n")

    def publish_dataset(self, dataset: Dataset, name: str | None = None) -> str:
        if name is None:
            name = TEST_FILE if dataset.metadata.kind == "test" else f"segment_{dataset.segment_id:03d}.jsonl"
        return self._write(name, dataset.to_jsonl())

    def publish_calibration(self, samples: Sequence[CalibrationSample], name: str = CALIBRATION_FILE) -> str:
        return self._write(name, calibration_to_jsonl(samples))

    def publish_model(self, module: RangingModule, name: str) -> str:
        return self._write(name, module.to_json() + "\n")

    def publish_text(self, name: str, text: str) -> str:
        """CSV reports, histories, diagnostics."""
        return self._write(name, text)

    def list_datasets(self) -> list[str]:
        """Segment dataset files, in segment order."""
        return sorted(str(p) for p in self.base_path.glob(SEGMENT_PATTERN))

    def load_segments(self) -> list[Dataset]:
        return [load_dataset(Path(p)) for p in self.list_datasets()]

    def load_calibration(self) -> list[CalibrationSample] | None:
        file_path = self.base_path / CALIBRATION_FILE
        if not file_path.exists():
            return None
        return load_calibration(file_path)
