import numpy as np
import pytest
import torch

from skillemb import dataio
from skillemb.config import ExperimentConfig

torch.set_default_dtype(torch.float32)


@pytest.fixture(scope="session")
def tiny_splits():
    common = dict(image_size=64, target_steps=36, max_speed=0.4)
    return {
        "train": dataio.generate_synthetic_dataset(["stack", "color_push"], 4, 0, split="train", **common),
        "validation": dataio.generate_synthetic_dataset(["stack", "color_push"], 2, 0, split="validation",
                                                        **common),
        "test": dataio.generate_synthetic_dataset(["color_stack"], 2, 0, fraction_unsuccessful=0.0,
                                                  split="test", **common),
    }


@pytest.fixture
def tiny_config():
    cfg = ExperimentConfig()
    cfg.dataio.view_pairs = 2
    cfg.dataio.batch_frames = 16
    cfg.dataio.skill_batch = 4
    cfg.trainer.steps = 6
    cfg.trainer.log_every = 2
    cfg.trainer.monitor_every = 3
    cfg.trainer.checkpoint_every = 3
    cfg.trainer.monitor_skills = 8
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[k])
