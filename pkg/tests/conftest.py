import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plate_afem.mesh import make_lshape, uniform_refine

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


def lshape(level):
    mesh = make_lshape()
    for _ in range(level):
        mesh = uniform_refine(mesh)
    return mesh


@pytest.fixture(scope="session")
def lshape_meshes():
    meshes = [make_lshape()]
    for _ in range(6):
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
