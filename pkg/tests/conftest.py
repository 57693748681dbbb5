import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatsim.cloud import SplatSet


def random_splat_set(rng, m, extent=10.0, r_lo=0.05, r_hi=1.5, labels=None,
                     frame_ids=None):
    centers = rng.uniform(-extent, extent, (m, 3))
    normals = rng.normal(size=(m, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    radii = rng.uniform(r_lo, r_hi, m)
    return SplatSet.build(centers, normals, radii, labels=labels, frame_ids=frame_ids)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
