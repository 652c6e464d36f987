import numpy as np
import pytest

from specmae.model import ModelConfig
from specmae.synthetic import SceneSpec, generate_corpus, generate_scene

SMALL_SCENE = SceneSpec(image_size=16, region_count=(1, 3), region_size=(4, 8), seed=3)
SMALL_MODEL = ModelConfig(embed_dim=16, encoder_depth=1, decoder_dim=8, decoder_depth=1,
                          heads=2, mlp_ratio=2.0, patch_size=4, channels=10, image_size=16)


@pytest.fixture(scope="session")
def small_scenes():
    return [generate_scene(SMALL_SCENE, i) for i in range(8)]


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    generate_corpus(SMALL_SCENE, 8, out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion number -> list of (label, ok, detail), filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{label}: {'ok' if ok else 'FAIL'} ({d})" for label, ok, d in parts)
        terminalreporter.write_line(f"criterion {n:2d}: {status} | {detail}")
