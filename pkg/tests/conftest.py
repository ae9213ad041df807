import os

import hypothesis
import numpy as np
import pytest

from netfense.graph import FeatureModel, from_edges, generate_sbm

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=300, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_graph(n, p, seed, d=4, min_degree=0):
    """Erdos-Renyi graph with random binary features."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
    if min_degree:
        # chain the nodes so every node has an edge
        present = set(edges)
        for i in range(n - 1):
            if (i, i + 1) not in present:
                edges.append((i, i + 1))
    x = (rng.random((n, d)) < 0.5).astype(np.uint8)
    return from_edges(n, edges, x)


@pytest.fixture
def path5():
    """Edges (0,1),(1,2); nodes 3 and 4 isolated."""
    return from_edges(5, [(0, 1), (1, 2)], np.eye(5, 3, dtype=np.uint8))


@pytest.fixture
def chorded_cycle():
    """4-cycle 0-1-2-3 with the chord (0,2)."""
    return from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], np.eye(4, dtype=np.uint8))


@pytest.fixture(scope="session")
def small_sbm():
    return generate_sbm([30, 30], 0.2, 0.02, FeatureModel(private_homophily=0.4), seed=3)
