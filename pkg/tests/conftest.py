import numpy as np
import pytest

from xmodal.network import NetConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def micro_config():
    """Tiny but fully-featured network config for fast forward passes."""
    return NetConfig(
        image_shape=(1, 6, 4),
        backbone_channels=(2, 2, 4),
        backbone_strides=(1, 1, 1),
        appearance_channels=(2, 2),
        depth=2,
        relation_channels=2,
        num_parts=2,
        num_identities=4,
        embed_dim=3,
    )
