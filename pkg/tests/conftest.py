"""Shared test fixtures."""

from __future__ import annotations

import pytest

from bindspace.models import (
    EncoderConfig,
    RunConfig,
    ScheduleConfig,
    StageSpec,
    WorldConfig,
    default_run_config,
)
from bindspace.pipeline import build_encoders, run_pipeline
from bindspace.synthworld import generate_world

TINY_SCHEDULE = {"eta_max": 1e-3, "t0": 5}


def _tiny_config(**overrides) -> RunConfig:
    data = dict(
        world=WorldConfig(stage1_pairs=80, stage2_pairs=60, extra_pairs=50, eval_locations=40),
        joint_dim=8,
        encoders={
            "satellite": EncoderConfig(hidden=[12]),
            "ground": EncoderConfig(kind="reference"),
            "audio": EncoderConfig(hidden=[12]),
            "text": EncoderConfig(kind="reference"),
        },
        stages=[
            StageSpec(
                name="bind-satellite",
                trainable="satellite",
                target="ground",
                loss="directional",
                dataset="stage1",
                epochs=3,
                batch_size=16,
                schedule=ScheduleConfig(**TINY_SCHEDULE),
            ),
            StageSpec(
                name="bind-audio",
                trainable="audio",
                target="satellite",
                loss="symmetric",
                dataset="stage2",
                epochs=3,
                batch_size=16,
                schedule=ScheduleConfig(**TINY_SCHEDULE),
            ),
        ],
    )
    data.update(overrides)
    return RunConfig(**data)


@pytest.fixture()
def tiny_config() -> RunConfig:
    """Two stages over a few dozen pairs: 5 + 4 steps per epoch, 3 epochs each."""
    return _tiny_config()


@pytest.fixture()
def tiny_world(tiny_config):
    return generate_world(tiny_config.world)


@pytest.fixture()
def tiny_encoders(tiny_config):
    return build_encoders(tiny_config)


@pytest.fixture()
def config_path(tmp_path, tiny_config):
    """The tiny config written as JSON, with its output under tmp_path."""
    cfg = tiny_config.model_copy(update={"output_dir": str(tmp_path / "run")})
    path = tmp_path / "config.json"
    path.write_text(cfg.model_dump_json(indent=2))
    return path


# ---------------------------------------------------------------------------
# Canonical run (trained once per session)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def canonical_config() -> RunConfig:
    return default_run_config()


@pytest.fixture(scope="session")
def canonical_world(canonical_config):
    return generate_world(canonical_config.world)


@pytest.fixture(scope="session")
def canonical_initial(canonical_config):
    return build_encoders(canonical_config)


@pytest.fixture(scope="session")
def canonical_state(canonical_config, canonical_world, canonical_initial):
    return run_pipeline(
        canonical_config.stages,
        canonical_world.datasets,
        encoders=canonical_initial,
        seed=canonical_config.seed,
    )
