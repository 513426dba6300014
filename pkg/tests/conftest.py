import numpy as np
import pytest

from velinv.core import GridSpec, VelocityModel
from velinv.forward import AcquisitionSpec, SourceSpec
from velinv.scene import SceneParams, gen_dataset

TINY_GRID = GridSpec(nx=24, ny=16, dx=10.0, dy=10.0)
TINY_ACQ = AcquisitionSpec(
    emitter_columns=(2, 11, 21),
    receiver_columns=tuple(range(24)),
    t_total=0.3,
    dt_record=0.01,
    cfl=0.5,
)
TINY_SCENE = SceneParams(
    n_layers=(2, 3),
    inclusion_area_fraction=(0.04, 0.20),
    interface_undulation_amplitude=20.0,
    rng_seed=11,
)


def homogeneous_model(grid: GridSpec, cp: float = 3000.0) -> VelocityModel:
    return VelocityModel(grid, np.full(grid.shape, cp, dtype=np.float32))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """10 tiny samples with simulated records, shared read-only."""
    root = tmp_path_factory.mktemp("tiny_data")
    manifest = gen_dataset(10, TINY_SCENE, TINY_GRID, TINY_ACQ, root,
                           src=SourceSpec(column_index=11, f0=15.0))
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
