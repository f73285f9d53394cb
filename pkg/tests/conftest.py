"""Session fixtures: tiny datasets/models for unit tests and the desk-scale
benchmark + trained source model shared by the acceptance criteria."""
import copy
import json
import time
from dataclasses import dataclass
from pathlib import Path

import pytest
import torch

from sfdaseg.config import AdaptConfig
from sfdaseg.data import (
    generate_mixed_target,
    generate_synthetic,
    hard_shift,
    source_shift,
    target_shift,
)
from sfdaseg.models import build_model
from sfdaseg.pipeline import train_source

GOLDEN_DIR = Path(__file__).parent / "golden"

TINY_RES = (32, 32)
DESK_RES = (64, 64)


def load_golden(name: str) -> dict:
    return json.loads((GOLDEN_DIR / name).read_text())


@pytest.fixture(scope="session")
def golden() -> dict:
    """Frozen desk-scale observations (measured once, then pinned)."""
    return load_golden("desk_expectations.json")


@pytest.fixture(scope="session")
def tiny_cfg() -> AdaptConfig:
    # mc_passes=4 keeps teacher sweeps cheap at unit-test scale
    return AdaptConfig(batch_size=4, mc_passes=4, stage_epochs=(1, 1), holdout_frac=0.0)


@pytest.fixture(scope="session")
def tiny_source():
    return generate_synthetic(
        8, TINY_RES, source_shift(), seed=7, domain_tag="source", split="train", name="tiny-src"
    )


@pytest.fixture(scope="session")
def tiny_target():
    manifest, hard_ids = generate_mixed_target(
        8, TINY_RES, target_shift(), hard_shift(), 0.25, seed=9, name="tiny-tgt"
    )
    manifest.meta["hard_ids_fixture"] = hard_ids
    return manifest


@pytest.fixture(scope="session")
def _tiny_trained_state(tiny_source, tiny_cfg):
    model = build_model("compact_unet", seed=1, base_channels=4, dropout=0.1)
    train_source(tiny_source, model, tiny_cfg, seed=0, epochs=2)
    return copy.deepcopy(model.state_dict())


@pytest.fixture()
def tiny_model(_tiny_trained_state):
    """Fresh copy of the tiny trained model; safe for tests to mutate."""
    model = build_model("compact_unet", base_channels=4, dropout=0.1)
    model.load_state_dict(copy.deepcopy(_tiny_trained_state))
    return model


# ------------------------------------------------------------- desk scale

@dataclass
class DeskBench:
    """The 200/50-image synthetic benchmark plus one trained source model."""

    cfg: AdaptConfig
    source_train: object
    source_test: object
    target_train: object
    hard_ids: list
    target_test: object
    source_state: dict
    holdout_dice: float
    train_seconds: float

    def source_model(self):
        model = build_model("compact_unet", base_channels=8)
        model.load_state_dict(copy.deepcopy(self.source_state))
        return model


@pytest.fixture(scope="session")
def desk() -> DeskBench:
    cfg = AdaptConfig(batch_size=8)
    source_train = generate_synthetic(
        200, DESK_RES, source_shift(), seed=7, domain_tag="source", split="train", name="synth-source"
    )
    source_test = generate_synthetic(
        50, DESK_RES, source_shift(), seed=8, domain_tag="source", split="test", name="synth-source"
    )
    target_train, hard_ids = generate_mixed_target(
        200, DESK_RES, target_shift(), hard_shift(), 0.10, seed=9, bridge_fraction=0.05
    )
    # Test split mirrors the train composition (same degraded minority and
    # borderline band) so that handling hard samples shows up in holdout Dice.
    target_test, _ = generate_mixed_target(
        100, DESK_RES, target_shift(), hard_shift(), 0.10, seed=10, split="test",
        name="synth-target", bridge_fraction=0.05
    )
    model = build_model("compact_unet", seed=0, base_channels=8)
    t0 = time.perf_counter()
    result = train_source(source_train, model, cfg, seed=0, epochs=30)
    train_seconds = time.perf_counter() - t0
    return DeskBench(
        cfg=cfg,
        source_train=source_train,
        source_test=source_test,
        target_train=target_train,
        hard_ids=hard_ids,
        target_test=target_test,
        source_state=copy.deepcopy(model.state_dict()),
        holdout_dice=result.best_holdout_dice,
        train_seconds=train_seconds,
    )
