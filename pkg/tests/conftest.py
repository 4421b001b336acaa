"""Shared pytest fixtures for the spiking-par test suite.

Models here are deliberately tiny (a couple of channels, two time steps) so
the whole suite runs on a laptop CPU in well under a minute. Datasets are
written to ``tmp_path`` with the synthetic generator.

Desk-scale training runs are skipped unless ``SNNPAR_RUN_SLOW=1``.
"""

import numpy as np
import pytest

from spiking_par.config import RunConfig
from spiking_par.data import SyntheticSpec, generate_synthetic
from spiking_par.optim import OptimizerConfig, ScheduleConfig
from spiking_par.spikingformer import ModelConfig

TINY_HEIGHT = 32
TINY_WIDTH = 16


@pytest.fixture
def rng():
    """A fresh, fixed-seed generator per test."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    """Two time steps, one block, eight channels; sized for the tiny dataset."""
    return ModelConfig(
        image_height=TINY_HEIGHT,
        image_width=TINY_WIDTH,
        tokenizer_widths=(4, 8),
        embed_dim=8,
        num_heads=2,
        num_blocks=1,
        mlp_ratio=2,
        time_steps=2,
        num_attributes=8,
    )


@pytest.fixture
def tiny_dataset(tmp_path):
    """A 24/8/12 train/val/test synthetic dataset on disk."""
    root = tmp_path / "data"
    generate_synthetic(
        SyntheticSpec(seed=3, train=24, val=8, test=12, height=TINY_HEIGHT, width=TINY_WIDTH),
        root,
    )
    return root


@pytest.fixture
def tiny_run_config(tmp_path, tiny_model_config):
    """Two short epochs with one warm-up epoch; writes into ``tmp_path / "run"``."""
    return RunConfig(
        model=tiny_model_config,
        optimizer=OptimizerConfig(lr=2e-3),
        schedule=ScheduleConfig(warmup_epochs=1, decay_epochs=()),
        epochs=2,
        batch_size=8,
        out=tmp_path / "run",
    )
