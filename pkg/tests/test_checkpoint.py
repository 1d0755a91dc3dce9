import json

import numpy as np
import pytest

from core.checkpoint import (
    ChecksumError,
    RunState,
    VersionMismatch,
    checkpoint_load,
    checkpoint_save,
)
from core.models import GenerationStats
from core.report import generation_stats


@pytest.fixture
def state(make_individual):
    population = [make_individual(mean_error=0.1 * i, param_count=100 * i) for i in range(1, 5)]
    rng = np.random.default_rng(42)
    rng.random(3)
    history = [generation_stats(0, population, 4, 1.5)]
    return RunState(
        generation=0,
        population=population,
        rng_state=rng.bit_generator.state,
        history=history,
        config={"population_size": 4},
    )


def test_round_trip_preserves_state(tmp_path, state):
    path = checkpoint_save(tmp_path / "run" / "checkpoint.json", state)
    loaded = checkpoint_load(path)
    assert loaded.generation == 0
    assert [ind.id for ind in loaded.population] == [ind.id for ind in state.population]
    assert [ind.fitness for ind in loaded.population] == [ind.fitness for ind in state.population]
    assert [ind.chromosome for ind in loaded.population] == [ind.chromosome for ind in state.population]
    assert loaded.history == state.history
    assert loaded.config == {"population_size": 4}


def test_restored_generator_continues_the_stream(tmp_path, state):
    expected = np.random.default_rng(42)
    expected.random(3)
    restored = np.random.default_rng()
    restored.bit_generator.state = checkpoint_load(checkpoint_save(tmp_path / "c.json", state)).rng_state
    assert restored.random() == expected.random()


def test_wall_time_survives_in_checkpoint_history(tmp_path, state):
    loaded = checkpoint_load(checkpoint_save(tmp_path / "c.json", state))
    assert isinstance(loaded.history[0], GenerationStats)
    assert loaded.history[0].wall_seconds == 1.5


def test_corrupted_byte_fails_checksum(tmp_path, state):
    path = checkpoint_save(tmp_path / "c.json", state)
    text = path.read_text()
    assert '"id":"0000000000000001"' in text
    path.write_text(text.replace('"id":"0000000000000001"', '"id":"0000000000000009"', 1))
    with pytest.raises(ChecksumError):
        checkpoint_load(path)


def test_garbage_file_fails_checksum(tmp_path):
    path = tmp_path / "c.json"
    path.write_bytes(b"\x00\xffnot json")
    with pytest.raises(ChecksumError):
        checkpoint_load(path)


def test_other_version_rejected(tmp_path, state):
    path = checkpoint_save(tmp_path / "c.json", state)
    document = json.loads(path.read_text())
    document["version"] = 2
    path.write_text(json.dumps(document))
    with pytest.raises(VersionMismatch):
        checkpoint_load(path)
