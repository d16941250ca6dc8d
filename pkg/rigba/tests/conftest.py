from pathlib import Path

import pytest

from rigba.config import get_settings
from rigba.schemas.scene import NoiseSpec, SceneSpec
from rigba.services.scene_sim import SceneBundle, generate_scene
from rigba.tests.scenes import perturbation_only, small_scene_spec

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch: pytest.MonkeyPatch, tmp_path: Path):
    """Keep host RIGBA_* / SENTRY_* variables out of test runs."""
    monkeypatch.delenv("SENTRY_DSN", raising=False)
    monkeypatch.setenv("RIGBA_LOG_LEVEL", "WARNING")
    monkeypatch.setenv("RIGBA_OUTPUT_DIR", str(tmp_path / "runs"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def scene_spec() -> SceneSpec:
    return small_scene_spec()


@pytest.fixture
def noise_free_bundle(scene_spec: SceneSpec) -> SceneBundle:
    return generate_scene(scene_spec, NoiseSpec.noise_free(seed=3))


@pytest.fixture
def perturbed_bundle(scene_spec: SceneSpec) -> SceneBundle:
    return generate_scene(scene_spec, perturbation_only(seed=4))


@pytest.fixture
def noisy_bundle(scene_spec: SceneSpec) -> SceneBundle:
    return generate_scene(
        scene_spec,
        NoiseSpec(
            pixel_sigma=0.5,
            rotation_sigma=1e-3,
            center_sigma=5e-3,
            landmark_sigma=2e-2,
            accumulate=True,
            seed=5,
        ),
    )


@pytest.fixture
def minimal_problem_path() -> Path:
    return FIXTURES / "minimal.rigba"
