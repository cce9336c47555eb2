"""Shared fixtures.

The desk-scale training run costs minutes of CPU, so it happens once per
session; the pipeline suite reads its loss history and the acceptance suite
restores held-out images with its final checkpoint.
"""

import pytest

from artifact.data import DatasetSpec, ingest, write_texture_corpus
from artifact.denoisers import desk_config
from artifact.diffusion import make_schedule
from artifact.training import TrainConfig, train

DESK_CORPUS_SIZE = 500
DESK_STEPS = 2000


class DeskRun:
    """Artifacts of one desk-scale training run, shared across suites."""

    def __init__(self, dataset, config, schedule, train_config, losses,
                 checkpoint, seconds):
        self.dataset = dataset
        self.config = config
        self.schedule = schedule
        self.train_config = train_config
        self.losses = losses
        self.checkpoint = checkpoint
        self.seconds = seconds


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    import time

    root = tmp_path_factory.mktemp("desk_corpus")
    write_texture_corpus(root, DESK_CORPUS_SIZE, size=64, seed=0)
    dataset = ingest(DatasetSpec(str(root)), batch_size=8)
    config = desk_config()
    train_config = TrainConfig(total_steps=DESK_STEPS, checkpoint_every=1000,
                               seed=0)
    schedule = make_schedule(250)

    start = time.monotonic()
    losses = []
    checkpoint = None
    for event in train(dataset, config, train_config, schedule):
        losses.append(event.loss)
        if event.checkpoint is not None:
            checkpoint = event.checkpoint
    seconds = time.monotonic() - start
    return DeskRun(dataset, config, schedule, train_config, losses,
                   checkpoint, seconds)
