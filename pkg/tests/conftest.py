import numpy as np
import pytest
import torch

from dyadic_motion import ModelConfig, Skeleton

# keep desk-scale runs deterministic and polite on shared CPUs
torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def skeleton():
    return Skeleton()


@pytest.fixture
def tiny_config():
    """Reduced model for oracle and gradient tests: K=12, everything small."""
    return ModelConfig(past_len=30, window_len=10, future_len=5, joint_count=4,
                       latent_dim=8, hidden=8, residual_blocks=2)


@pytest.fixture
def grad_config():
    """The reduced configuration pinned for the gradient-correctness check."""
    return ModelConfig(past_len=16, window_len=10, future_len=2, joint_count=2,
                       latent_dim=8, hidden=8, residual_blocks=2)
