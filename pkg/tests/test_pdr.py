import math

import numpy as np
import pytest

from src.errors import ConfigurationError
from src.pdr import PdrConfig, pdr_step, simulate_pdr
from src.scenario import TruePath, default_test_path, sample_true_trajectory

NOISELESS = dict(step_length_std=0.0, heading_noise_std=0.0, heading_drift_rate=0.0)


def _pairwise(points):
    points = np.asarray(points)
    return np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)


class TestPdrStep:
    def test_north(self):
        assert pdr_step((0.0, 0.0), 0.7, 0.0, 0.0) == pytest.approx((0.0, 0.7))

    def test_quarter_turn(self):
        x, y = pdr_step((0.0, 0.0), 0.7, math.pi / 4, math.pi / 4)
        assert x == pytest.approx(-0.7)
        assert y == pytest.approx(0.0, abs=1e-12)

    def test_zero_step_length(self):
        assert pdr_step((1.0, 1.0), 0.0, 2.0, 0.3) == (1.0, 1.0)


class TestSimulatePdr:
    def test_noiseless_identity(self, rng):
        truth = np.cumsum(rng.normal(0.0, 1.0, size=(50, 2)), axis=0)
        config = PdrConfig(**NOISELESS, initial_position=tuple(truth[0]))
        pdr = simulate_pdr(truth, config, rng)
        np.testing.assert_allclose(pdr.positions, truth, atol=1e-9)

    def test_noiseless_is_rigid_transform(self, rng):
        truth = sample_true_trajectory(default_test_path())
        config = PdrConfig(**NOISELESS, phi_ref=1.1, initial_position=(-30.0, 12.0))
        pdr = simulate_pdr(truth, config, rng)
        np.testing.assert_allclose(_pairwise(pdr.positions), _pairwise(truth), atol=1e-9)
        np.testing.assert_allclose(pdr.positions[0], (-30.0, 12.0))

    def test_rotation_matches_phi_ref(self, rng):
        truth = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
        pdr = simulate_pdr(truth, PdrConfig(**NOISELESS, phi_ref=math.pi / 2), rng)
        np.testing.assert_allclose(pdr.positions, [[0.0, 0.0], [-1.0, 0.0], [-2.0, 0.0]], atol=1e-12)

    def test_linear_heading_drift(self, rng):
        truth = sample_true_trajectory(TruePath(waypoints=((0.0, 0.0), (0.0, 100.0)), speed=1.0))
        assert len(truth) == 101
        config = PdrConfig(step_length_std=0.0, heading_noise_std=0.0, heading_drift_rate=0.001)
        pdr = simulate_pdr(truth, config, rng)

        last = pdr.positions[-1] - pdr.positions[-2]
        final_heading = math.atan2(-last[0], last[1])
        assert final_heading == pytest.approx(0.1, abs=1e-9)

        k = np.arange(1, 101)
        endpoint = np.array([np.sum(-np.sin(0.001 * k)), np.sum(np.cos(0.001 * k))])
        np.testing.assert_allclose(pdr.positions[-1], endpoint, atol=1e-9)

    def test_length_matches_input(self, rng):
        truth = sample_true_trajectory(default_test_path())
        assert len(simulate_pdr(truth, PdrConfig(), rng)) == len(truth)

    def test_needs_two_positions(self, rng):
        with pytest.raises(ConfigurationError):
            simulate_pdr(np.zeros((1, 2)), PdrConfig(), rng)


class TestPdrConfig:
    def test_random_frame_changes_only_frame(self, rng):
        base = PdrConfig()
        framed = base.with_random_frame(rng, (85.0, 55.0))
        assert framed.step_length_mean == base.step_length_mean
        assert -math.pi <= framed.phi_ref <= math.pi
        assert 0.0 <= framed.initial_position[0] <= 85.0
        assert 0.0 <= framed.initial_position[1] <= 55.0

    def test_invalid_step_length(self):
        with pytest.raises(ConfigurationError):
            PdrConfig(step_length_mean=0.0)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ConfigurationError, match="Unknown pdr fields"):
            PdrConfig.from_dict({"stride": 0.8})
