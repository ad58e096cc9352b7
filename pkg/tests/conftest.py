import numpy as np
import pytest

from dtpinn.geometry import DomainShape, generate_nodes


@pytest.fixture(scope="session")
def disk_cloud():
    return generate_nodes(DomainShape.unit_disk(), 400, seed=0)


@pytest.fixture(scope="session")
def small_cloud():
    return generate_nodes(DomainShape.unit_disk(), 55, seed=1)


@pytest.fixture(scope="session")
def star_cloud():
    return generate_nodes(DomainShape.star(), 600, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
