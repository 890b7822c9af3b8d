import numpy as np
import pytest

from src.plotting import plot_epoch_trajectories, plot_range_scatter, plot_std_scatter, plot_test_errors
from src.training import HeldOutRecord, TrajectorySnapshot


def _is_svg(path):
    return path.read_text().lstrip().startswith("<?xml")


@pytest.fixture
def walk():
    t = np.linspace(0.0, 1.0, 15)
    return np.column_stack([2.0 + 16.0 * t, 3.0 + 10.0 * t])


class TestTrainingFigures:
    def test_test_errors(self, tmp_path):
        records = [HeldOutRecord(e, 3.0 / e, 5.0 / e) for e in range(1, 6)]
        assert _is_svg(plot_test_errors(records, tmp_path / "errors.svg"))

    def test_epoch_trajectories(self, square_site, walk, tmp_path):
        snapshots = [TrajectorySnapshot(e, walk + 0.1 * e, walk - 0.2) for e in (1, 20, 100)]
        snapshots.append(TrajectorySnapshot(200, walk, None))
        assert _is_svg(plot_epoch_trajectories(square_site, walk, snapshots, tmp_path / "maps.svg"))

    def test_output_is_byte_stable(self, square_site, walk, tmp_path):
        snapshots = [TrajectorySnapshot(1, walk, walk)]
        a = plot_epoch_trajectories(square_site, walk, snapshots, tmp_path / "a.svg").read_bytes()
        b = plot_epoch_trajectories(square_site, walk, snapshots, tmp_path / "b.svg").read_bytes()
        assert a == b


class TestRangingFigures:
    def test_range_scatter(self, rng, tmp_path):
        d = rng.uniform(1.0, 40.0, size=50)
        path = plot_range_scatter(d, {"raw": d + 4.0, "nn": d + rng.normal(0, 0.5, 50)}, tmp_path / "r.svg")
        assert _is_svg(path)

    @pytest.mark.parametrize("los", [[True, False] * 10, [None] * 20])
    def test_std_scatter(self, rng, los, tmp_path):
        path = plot_std_scatter(rng.uniform(1, 30, 20), rng.uniform(0, 10, 20), los, tmp_path / "s.svg")
        assert _is_svg(path)
