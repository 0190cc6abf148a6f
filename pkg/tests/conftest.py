import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cvcluster.cluster import ClusterParams, build_coiled_cluster

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cluster():
    """Smallest window that still has interior nullifiers and wire segments."""
    return build_coiled_cluster(ClusterParams(N=4, K=28, r=0.7))


@pytest.fixture(scope="session")
def gate_cluster():
    """Window used for single-gate tomography at r = 1."""
    return build_coiled_cluster(ClusterParams(N=12, K=88, r=1.0))
