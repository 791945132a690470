import numpy as np
import pytest

from geom.manifold import preset
from geom.rng import Lcg64


@pytest.fixture
def sphere():
    return preset("sphere", r=1.0)


@pytest.fixture
def halfplane():
    return preset("hyperbolic_halfplane")


@pytest.fixture
def schwarzschild():
    return preset("schwarzschild", M=1.0)


@pytest.fixture
def minkowski():
    return preset("semi_euclidean", dim=4, index=1)


@pytest.fixture
def rng():
    return Lcg64(12345)


ALL_PRESETS = [
    ("semi_euclidean", {"dim": 3, "index": 1}),
    ("sphere", {"r": 1.0}),
    ("hyperbolic_halfplane", {}),
    ("schwarzschild", {"M": 1.0}),
]


@pytest.fixture(params=ALL_PRESETS, ids=[name for name, _ in ALL_PRESETS])
def any_preset(request):
    name, params = request.param
    return preset(name, params)


def interior_points(spec, n, rng, margin=0.1):
    lo, hi = spec.sampling_box()
    w = hi - lo
    return np.array([rng.in_box(lo + margin * w, hi - margin * w) for _ in range(n)])
