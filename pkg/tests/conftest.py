import numpy as np
import pytest
import torch

from gatedseg.config import tiny_model_config


@pytest.fixture(autouse=True)
def _seeded():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_config():
    return tiny_model_config()
