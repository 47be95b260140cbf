import numpy as np
import pytest

from animgs.fields import FieldConfig, HashGridConfig, MlpConfig
from animgs.model import SkinnedGaussianModel
from animgs.rasterizer import Camera
from animgs.skinning import Pose, Skeleton


def small_field_config(dtype="float64", init_range=0.5):
    g = HashGridConfig(levels=4, features=2, base_resolution=4, max_resolution=16, table_size=2 ** 12,
                       init_range=init_range, dtype=dtype)
    return FieldConfig(sh_grid=g, dx_grid=g, ao_grid=g, mlp=MlpConfig(2, 16), n_freq=3,
                       max_displacement=0.05)


def make_scene(seed=0, n=10, size=32, ao=True, random_heads=True):
    """Seeded 2-bone avatar of ``n`` Gaussians, a pose and a camera looking at it."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(0, 0.15, (n, 3))
    x0[:, 1] += 0.2
    skel = Skeleton([-1, 0], [[0, 0, 0], [0, 0.25, 0]])
    idx = np.tile([0, 1, 0, 0], (n, 1))
    w1 = rng.uniform(0, 1, n)
    w = np.stack([w1, 1 - w1, 0 * w1, 0 * w1], 1)
    m = SkinnedGaussianModel(x0, rng.normal(size=(n, 4)), np.log(rng.uniform(0.05, 0.12, (n, 3))),
                             rng.normal(0.5, 1, n), idx, w, skel, field_config=small_field_config(),
                             ao_enabled=ao, seed=seed + 1)
    if random_heads:
        for f in m.fields.fields().values():
            f.mlp.weights[-1][:] = rng.normal(0, 0.3, f.mlp.weights[-1].shape)
    pose = Pose(rng.normal(0, 0.3, (2, 3)), rng.normal(0, 0.05, 3), 0.3)
    cam = Camera.look_at([0.3, 0.2, -1.5], [0, 0.2, 0], [0, -1, 0], 40 * size / 32, 40 * size / 32, size, size)
    return m, pose, cam


@pytest.fixture
def scene():
    return make_scene()


TINY_SYNTH = dict(n_points=200, k=4, image_size=32, focal=45.0, n_frames=3, n_cameras=2, n_test_cameras=1,
                  around=6)
TINY_TRAIN = dict(epochs=2, ao_start_epoch=2, k=4, hash_levels=4, hash_base_resolution=4,
                  hash_max_resolution=32, hash_table_size=2 ** 12, ao_table_size=2 ** 12, mlp_width=16)


def tiny_train_config(**kw):
    from animgs.training import TrainConfig
    return TrainConfig().updated({**TINY_TRAIN, **kw})


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small generated dataset directory (3 cameras, 3 frames, 32x32)."""
    from animgs.synthetic import SynthConfig, generate_synthetic_dataset
    out = tmp_path_factory.mktemp("tiny")
    generate_synthetic_dataset(SynthConfig().updated(TINY_SYNTH), out)
    return out
