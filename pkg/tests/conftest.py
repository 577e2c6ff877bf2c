import numpy as np
import pytest

from ortholoc.geometry import CameraIntrinsics, CameraPose, look_at_rotation
from ortholoc.synth import Box, SceneSpec, TerrainSpec, TextureSpec, generate_samples, random_scene


def random_pose(rng, dist=(20.0, 60.0)):
    """A camera looking roughly at the origin from a random direction above it."""
    d = rng.normal(size=3)
    d[2] = abs(d[2]) + 0.5
    d /= np.linalg.norm(d)
    C = d * rng.uniform(*dist)
    R = look_at_rotation(-C, rng.normal(size=3))
    return CameraPose.from_center(R, C)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def K_small():
    return CameraIntrinsics.centered(200.0, 192, 144)


@pytest.fixture(scope="session")
def town():
    return random_scene(5)


@pytest.fixture(scope="session")
def box_scene():
    """Flat ground at 100 m with one 10 m box, checker texture."""
    return SceneSpec(
        extent=(40.0, 40.0), origin=(512.0, 1024.0), base_elevation=100.0,
        buildings=(Box(520.0, 1040.0, 528.0, 1048.0, 10.0),),
        texture=TextureSpec(kind="checker", checker_size=2.0, roads=False), raster_scale=0.25,
    )


@pytest.fixture(scope="session")
def flat_scene():
    return SceneSpec(
        extent=(120.0, 120.0), base_elevation=100.0, terrain=TerrainSpec(amplitude=0.0),
        texture=TextureSpec(kind="noise", seed=3, roads=True), raster_scale=0.25,
    )


@pytest.fixture(scope="session")
def nadir_samples():
    return list(generate_samples(6, seed=101, obliqueness=(0.0, 5.0)))


@pytest.fixture(scope="session")
def oblique_samples():
    return list(generate_samples(4, seed=202, obliqueness=(30.0, 40.0)))


@pytest.fixture(scope="session")
def one_sample(nadir_samples):
    return nadir_samples[0]
