import numpy as np
import pytest

from dimslice.linalg import SeededRng
from dimslice.model import ModelConfig, init_weights


def rel_dev(a, b):
    """Max absolute deviation relative to the max magnitude of the reference."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-300, np.max(np.abs(b))))


@pytest.fixture
def tiny_config():
    return ModelConfig(d=8, m=16, h_attn=2, h_dim=4, v=1, n_blocks=1,
                       vocab_size=11, max_seq_len=32)


@pytest.fixture
def tiny_model(tiny_config):
    return init_weights(tiny_config, SeededRng(4))


@pytest.fixture
def toy_config():
    return ModelConfig(d=16, m=32, h_attn=2, h_dim=8, v=2, n_blocks=2,
                       vocab_size=40, max_seq_len=64)


@pytest.fixture
def toy_model(toy_config):
    model = init_weights(toy_config, SeededRng(7))
    # non-trivial norm weights so folding paths are exercised
    rng = SeededRng(17)
    for block in model.blocks:
        block.w_norm1 += rng.normal_vector(toy_config.d, 0.1)
        block.w_norm2 += rng.normal_vector(toy_config.d, 0.1)
    model.w_norm_final += rng.normal_vector(toy_config.d, 0.1)
    return model
