from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from helpers import SMALL_CONFIG, tiny_architecture
from wordspot.estimator import init_model

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def small_config():
    # 4 symbols x (1 + 2) = 12 attributes
    return SMALL_CONFIG


@pytest.fixture
def tiny_model(small_config):
    return init_model(tiny_architecture(small_config.dim), seed=1, phoc_config=small_config,
                      geometry=(8, 12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SMOKE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


@pytest.fixture(scope="session")
def smoke_workspace(tmp_path_factory):
    """Synthetic smoke corpus and a briefly trained model, built through the CLI."""
    from wordspot.cli import main
    root = tmp_path_factory.mktemp("smoke")
    cfg = str(SMOKE_CONFIG)
    assert main(["--config", cfg, "synth", "--out", str(root / "corpus")]) == 0
    manifest = root / "corpus" / "manifest.tsv"
    assert main(["--config", cfg, "train", "--manifest", str(manifest), "--out", str(root / "model")]) == 0
    return {"root": root, "config": cfg, "manifest": manifest, "model": root / "model" / "model.wsaf"}


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
