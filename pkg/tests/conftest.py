import numpy as np
import pytest

from asiplab import kernels
from asiplab.core import Placement, Record, partition
from asiplab.datagen import PointCloudSpec, generate_point_cloud


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    kernels.warmup()


def small_cloud(n_per_class=100, p=2, placement=Placement.UNIFORM, seed=0):
    records = generate_point_cloud(PointCloudSpec(n_per_class, 1.0, seed))
    return partition(records, p, placement, seed=seed, dimension=3)


def replicated(records, p, d):
    """``p`` identical partitions holding ``records``."""
    from asiplab.core import PartitionedDataset
    return PartitionedDataset([list(records) for _ in range(p)], d)


def rand_record(rng, d, label=None):
    y = label if label is not None else float(rng.choice([-1.0, 1.0]))
    return Record(rng.normal(size=d), y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
