import numpy as np
import pytest

from pigeonpose.synthetic import SceneConfig, generate_rig, generate_scene, render_detections


@pytest.fixture(scope="session")
def rig():
    return generate_rig(4)


@pytest.fixture(scope="session")
def small_scene(rig):
    cfg = SceneConfig(n_individuals=4, n_frames=8, seed=3)
    scene = generate_scene(cfg)
    return scene, render_detections(scene, rig, 0.0, 0.0, 0.0, seed=4)


def random_arena_points(rng, n, radius=1.0, height=0.5):
    r = radius * np.sqrt(rng.random(n))
    a = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(a), r * np.sin(a), height * rng.random(n)])
