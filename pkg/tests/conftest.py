import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vitsplice.harness import config as cf  # noqa: E402
from vitsplice.harness import synth, workflows  # noqa: E402
from vitsplice.vit_recon import ModelParams, init_params, reconstruction_loss  # noqa: E402

TRAIN_SEED, HELDOUT_SEED = 2024, 77


@dataclass
class TrainedModel:
    cfg: cf.PipelineConfig
    params: ModelParams
    losses: list
    heldout_initial: float
    heldout_final: float
    seconds: float


def heldout_loss(params, tiles, batch=16):
    total = sum(reconstruction_loss(tiles[i : i + batch], params) * len(tiles[i : i + batch]) for i in range(0, len(tiles), batch))
    return total / len(tiles)


@pytest.fixture(scope="session")
def trained_model() -> TrainedModel:
    """Default-size model trained for 500 steps on 200 seeded pristine tiles."""
    cfg = cf.parse_config(f"seed = {TRAIN_SEED}\n")
    tiles = synth.pristine_tiles(TRAIN_SEED, 200)
    heldout = synth.pristine_tiles(HELDOUT_SEED, 48)
    initial = heldout_loss(init_params(cfg.vit, cfg.seed), heldout)
    t0 = time.perf_counter()
    params, losses = workflows.train_model(cfg, tiles)
    seconds = time.perf_counter() - t0
    return TrainedModel(cfg, params, losses, initial, heldout_loss(params, heldout), seconds)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
