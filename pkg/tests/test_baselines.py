import numpy as np
import pytest

from src.baselines import (
    PathLossParams,
    calibrated_distance,
    fit_bias,
    fit_path_loss,
    path_loss_distance,
)
from src.dataset import ScenarioConfig, generate_calibration
from src.errors import ConfigurationError, DatasetError
from src.ftm_sim import ChannelModel
from src.pdr import PdrConfig
from src.scenario import default_site, default_test_path


class TestPathLossDistance:
    def test_reference_distance(self):
        assert path_loss_distance(-20.6, PathLossParams()) == pytest.approx(1.0)

    def test_ten_meters(self):
        assert path_loss_distance(-60.6, PathLossParams()) == pytest.approx(10.0)

    def test_one_decade_above_reference(self):
        params = PathLossParams(d0=2.0, p0=-30.0, eta=3.0)
        assert path_loss_distance(params.p0 + 10 * params.eta, params) == pytest.approx(0.2)

    def test_always_positive(self):
        for p in (-200.0, -60.0, 0.0, 40.0):
            assert path_loss_distance(p, PathLossParams()) > 0.0

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            PathLossParams(eta=0.0)


class TestFitPathLoss:
    def _samples(self, d, p0=-20.6, eta=4.0):
        return [(float(di), p0 - 10 * eta * np.log10(di)) for di in d]

    def test_recovers_noiseless_parameters(self):
        fitted = fit_path_loss(self._samples(np.linspace(1.0, 40.0, 60)))
        assert fitted.p0 == pytest.approx(-20.6, abs=0.1)
        assert fitted.eta == pytest.approx(4.0, abs=0.05)
        assert fitted.d0 == 1.0

    def test_single_distance_rejected(self):
        with pytest.raises(DatasetError):
            fit_path_loss([(5.0, -48.5)] * 10)

    def test_too_few_samples(self):
        with pytest.raises(DatasetError):
            fit_path_loss([(5.0, -48.5)])

    def test_noisy_exponent_within_ten_percent(self):
        rng = np.random.default_rng(8)
        d = rng.uniform(1.0, 30.0, size=1000)
        samples = [(di, p + rng.normal(0.0, 2.0)) for di, p in self._samples(d)]
        assert fit_path_loss(samples).eta == pytest.approx(4.0, rel=0.1)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        d = rng.uniform(1.0, 30.0, size=200)
        samples = [(di, p + rng.normal(0.0, 3.0)) for di, p in self._samples(d)]
        assert fit_path_loss(samples) == fit_path_loss(samples)


class TestCalibratedDistance:
    def test_subtracts_bias(self):
        assert calibrated_distance(10.0, 4.4) == pytest.approx(5.6)

    def test_clamped_at_zero(self):
        assert calibrated_distance(2.0, 6.6) == 0.0

    def test_zero_bias_is_identity(self):
        assert calibrated_distance(7.25, 0.0) == 7.25


class TestFitBias:
    def test_exact_offset(self):
        d_true = np.linspace(5.0, 40.0, 50)
        assert fit_bias(zip(d_true, d_true + 4.4)) == pytest.approx(4.4, abs=0.01)

    def test_unbiased(self):
        d_true = np.linspace(1.0, 30.0, 40)
        assert fit_bias(zip(d_true, d_true)) == pytest.approx(0.0, abs=0.01)

    def test_empty(self):
        with pytest.raises(DatasetError):
            fit_bias([])

    def test_simulated_campaign_matches_fine_grid(self):
        scenario = ScenarioConfig(site=default_site(), path=default_test_path(), channel=ChannelModel(),
                                  pdr=PdrConfig())
        samples = generate_calibration(scenario, np.random.default_rng(12), n_positions=200)
        pairs = np.array([(s.d_true, s.measurement.d_ftm) for s in samples])

        grid = np.arange(0.0, pairs[:, 1].max(), 0.001)
        sse = [np.sum((np.maximum(0.0, pairs[:, 1] - g) - pairs[:, 0]) ** 2) for g in grid]
        oracle = float(grid[int(np.argmin(sse))])
        assert fit_bias(pairs) == pytest.approx(oracle, abs=0.5)
