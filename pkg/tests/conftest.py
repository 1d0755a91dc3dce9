import os
import sys
import tempfile

import numpy as np
import pytest

_DB_DIR = tempfile.mkdtemp(prefix="evocnn-tests-")
os.environ.setdefault("EVOCNN_DATABASE_URL", f"sqlite:///{_DB_DIR}/test.db")
os.environ.pop("EVOCNN_REDIS_URL", None)

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from core.config import GeneBounds  # noqa: E402
from core.data import SyntheticKind, make_synthetic  # noqa: E402
from core.genome import Chromosome, ConvGene, FcGene, Individual, PoolGene  # noqa: E402
from core.models import FitnessRecord  # noqa: E402

slow = pytest.mark.skipif(
    os.environ.get("EVOCNN_SLOW_TESTS") != "1",
    reason="long acceptance run; set EVOCNN_SLOW_TESTS=1",
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bounds():
    return GeneBounds()


@pytest.fixture
def small_chromosome():
    return Chromosome(
        head=(ConvGene(3, 4, 0.0, 0.1), PoolGene(2)),
        tail=(FcGene(8, 0.0, 0.1),),
    )


@pytest.fixture
def blobs():
    return make_synthetic(SyntheticKind.SEPARABLE_BLOBS, 200, 8, seed=3)


@pytest.fixture
def rectangles():
    return make_synthetic(SyntheticKind.RECTANGLE_TOY, 60, 16, seed=5)


@pytest.fixture
def make_individual(small_chromosome):
    counter = iter(range(1, 1_000_000))

    def factory(mean_error=0.5, std_error=0.05, param_count=1000, chromosome=None, diverged=False):
        index = next(counter)
        fitness = FitnessRecord(
            mean_error=mean_error,
            std_error=std_error,
            param_count=param_count,
            epochs_used=1,
            diverged=diverged,
        )
        return Individual(
            chromosome=chromosome or small_chromosome,
            id=f"{index:016x}",
            rng_seed=index,
            fitness=fitness,
        )

    return factory
