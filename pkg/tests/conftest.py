import numpy as np
import pytest

from src.ftm_sim import ChannelModel
from src.ranging_nn import init_params
from src.scenario import AccessPoint, SiteConfig


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    """Keep test runs from writing log files or picking up a developer .env."""
    monkeypatch.setenv("FTM_LOG_FILE", "")
    monkeypatch.setenv("FTM_WORKERS", "1")
    monkeypatch.setenv("FTM_BANDWIDTH", "bw40")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_site():
    """20 x 20 m room, one AP per corner, no walls."""
    return SiteConfig(
        width=20.0,
        height=20.0,
        aps=(
            AccessPoint(1, 0.0, 0.0),
            AccessPoint(2, 20.0, 0.0),
            AccessPoint(3, 20.0, 20.0),
            AccessPoint(4, 0.0, 20.0),
        ),
    )


@pytest.fixture
def square_aps(square_site):
    return square_site.ap_positions()


@pytest.fixture
def quiet_channel():
    """Every request succeeds, no noise, no bias, no shadowing."""
    return ChannelModel(
        los_noise_std=0.0,
        nlos_bias_mean=0.0,
        nlos_bias_std=0.0,
        shadowing_std=0.0,
        los_success_rate=1.0,
        success_floor_dbm=-400.0,
    )


@pytest.fixture
def small_module():
    return init_params(hidden=(6, 5), rng=np.random.default_rng(7))
