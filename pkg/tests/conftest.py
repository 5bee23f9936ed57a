import numpy as np
import pytest

from ordmi.data import Cluster, ClusteredDataset, Member


def mk_cluster(cid, x, z, rows, size=None):
    """Build a cluster from (y, m1, m2, m3) tuples; None marks missing."""
    members = tuple(Member(*r) for r in rows)
    return Cluster(
        id=cid, x=float(x), z=float(z),
        size=len(members) if size is None else size,
        members=members,
    )


def mk_dataset(clusters, **kw):
    return ClusteredDataset(tuple(clusters), **kw)


@pytest.fixture
def small_dataset():
    """Three complete clusters covering all four categories of each variable."""
    return mk_dataset(
        [
            mk_cluster(0, 0.5, 1, [(1, 2, 3, 4), (2, 1, 4, 3), (3, 4, 1, 2)]),
            mk_cluster(1, -1.2, 0, [(4, 3, 2, 1), (1, 1, 2, 2)]),
            mk_cluster(2, 2.0, 1, [(2, 4, 3, 1), (3, 2, 1, 4), (4, 3, 4, 3), (1, 2, 2, 1)]),
        ]
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
