import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from magspec.fields import ElectricTerm, FieldModel, MagneticTerm  # noqa: E402


@pytest.fixture(scope="session")
def gaussian_stream():
    return FieldModel(2, (MagneticTerm("stream_gaussian", (0.0, 0.0)),), name="gaussian_stream")


@pytest.fixture(scope="session")
def lorentzian_stream():
    return FieldModel(2, (MagneticTerm("stream_lorentzian", (0.0, 0.0)),), name="lorentzian_stream")


@pytest.fixture(scope="session")
def gaussian_V():
    return FieldModel(2, (), (ElectricTerm("gaussian", (0.0, 0.0), 1.0, 1.0),), name="gaussian_V")


@pytest.fixture(scope="session")
def mixed_model():
    """Off-centre terms of both kinds plus an electric potential."""
    return FieldModel(
        2,
        (MagneticTerm("stream_gaussian", (0.4, -0.3), 0.8, 1.2),
         MagneticTerm("stream_lorentzian", (-0.5, 0.2), -0.6, 0.9)),
        (ElectricTerm("gaussian", (0.1, 0.2), 0.7, 1.1),),
        name="mixed",
    )
