import numpy as np
import pytest

from photonroute.calibration import fit_model


@pytest.fixture(scope="session")
def device_model():
    """Model fitted to the published operating points (10.2/7.6 dB, 11.05 and 16.6 mA, L = 0.31)."""
    return fit_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
