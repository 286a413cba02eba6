import os

# keep BLAS single-threaded: the suite measures a one-core budget, and the
# frozen training trajectories depend on a fixed GEMM reduction order
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

try:  # the env vars miss BLAS libs a pytest plugin already loaded
    import threadpoolctl

    _BLAS_LIMIT = threadpoolctl.threadpool_limits(limits=1)
except ImportError:
    _BLAS_LIMIT = None

from maskclr.augment import ImageSample
from maskclr.data import Dataset


def make_memory_dataset(classes=2, per_class=8, hw=(24, 36), seed=0, spread=0.05):
    """In-memory dataset of noisy constant-color images, one color per class."""
    rng = np.random.default_rng(seed)
    colors = rng.uniform(0.2, 0.8, size=(classes, 3))
    samples = []
    idx = 0
    for c in range(classes):
        for i in range(per_class):
            px = np.clip(colors[c] + spread * rng.normal(size=(hw[0], hw[1], 3)), 0.0, 1.0)
            samples.append(ImageSample(pixels=px, label=c, id=f"c{c}/s{i}", index=idx))
            idx += 1
    return Dataset(samples=samples, class_names=[f"c{c}" for c in range(classes)])


@pytest.fixture
def memory_dataset():
    return make_memory_dataset()
