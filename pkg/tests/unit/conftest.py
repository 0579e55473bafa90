import numpy as np
import pytest

from qjump.core import CavityParams
from qjump.trajectory import StepSettings


@pytest.fixture(scope="module")
def laser_params():
    """Laser-driven cavity with Omega = 8 kappa."""
    return CavityParams.laser(omega=8.0)


@pytest.fixture(scope="module")
def feedback_params():
    """Feedback cavity above threshold: beta = 2, eta = 0.5."""
    return CavityParams.feedback(beta=2.0, eta=0.5)


@pytest.fixture(scope="module")
def subthreshold_params():
    """Feedback cavity below threshold: eta |beta|^2 = 0.125."""
    return CavityParams.feedback(beta=0.5, eta=0.5)


@pytest.fixture(scope="module")
def decay_params():
    """Undetected emissions only: the cavity simply decays."""
    return CavityParams.feedback(beta=2.0, eta=0.0)


@pytest.fixture
def short_grid():
    return np.linspace(0.0, 2.0, 21)


@pytest.fixture(scope="module")
def low_cap_settings():
    return StepSettings(divergence_cap=1e3)

