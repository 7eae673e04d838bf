import numpy as np
import pytest

from hybridcal.simulator import (
    GridSpec,
    SceneConfig,
    generate_scene,
    load_preset,
    pinhole_lens,
)


@pytest.fixture(scope="session")
def linear_lens():
    return load_preset("linear")


@pytest.fixture(scope="session")
def wide_lens():
    return load_preset("wide")


@pytest.fixture(scope="session")
def fisheye_lens():
    return load_preset("fisheye")


@pytest.fixture(scope="session")
def fisheye_scene_clean(fisheye_lens):
    return generate_scene(SceneConfig(lens=fisheye_lens, noise_sigma=0.0), rng_seed=101)


@pytest.fixture(scope="session")
def fisheye_scene_noisy(fisheye_lens):
    return generate_scene(SceneConfig(lens=fisheye_lens, noise_sigma=0.2), rng_seed=102)


@pytest.fixture(scope="session")
def linear_scene_clean(linear_lens):
    return generate_scene(SceneConfig(lens=linear_lens, noise_sigma=0.0), rng_seed=103)


@pytest.fixture(scope="session")
def pinhole_scene_clean():
    lens = pinhole_lens(focal=900.0)
    return generate_scene(SceneConfig(lens=lens, noise_sigma=0.0), rng_seed=104)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(rows=8, cols=11, spacing=30.0)


def assert_proportional(A, B, tol=1e-9):
    """Assert two matrices are equal up to a scalar factor."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    ka = np.unravel_index(np.argmax(np.abs(A)), A.shape)
    An = A / A[ka]
    Bn = B / B[ka]
    assert np.linalg.norm(An - Bn) < tol, f"not proportional: gap {np.linalg.norm(An - Bn):.3e}"
