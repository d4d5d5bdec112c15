import os

os.environ.setdefault("COMPDID_LOG_TO_FILE", "false")
os.environ.setdefault("COMPDID_LOG_LEVEL", "WARNING")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from compdid.data import CELLS, SampleData  # noqa: E402
from compdid.models.config import BandwidthConfig  # noqa: E402
from compdid.tools.localpoly import probabilities_from_intercepts  # noqa: E402


def mixed_sample(n: int = 120, seed: int = 11, noise: float = 0.5) -> SampleData:
    """One continuous, one unordered (3 levels) and one ordered (0..2) covariate."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0.0, 1.0, n)
    xu = rng.integers(0, 3, n)
    xo = rng.integers(0, 3, n)
    index = np.column_stack([0.5 * x1 - 0.2, 0.3 * (xu == 1) - 0.5 * x1, 0.2 * xo - 0.3])
    probs = probabilities_from_intercepts(index)
    u = rng.uniform(size=n)
    k = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), 3)
    d = np.array([c[0] for c in CELLS])[k]
    t = np.array([c[1] for c in CELLS])[k]
    y = 1.0 + 2.0 * x1 + 0.5 * xu + 0.3 * xo + d + t + 1.5 * d * t * x1 + rng.normal(0.0, noise, n)
    return SampleData(
        y=y, d=d, t=t, x_c=x1.reshape(-1, 1), x_u=xu.reshape(-1, 1), x_o=xo.reshape(-1, 1),
        covariate_names={"continuous": ["x1"], "unordered": ["xu"], "ordered": ["xo"]},
    )


@pytest.fixture
def make_sample():
    return mixed_sample


@pytest.fixture
def mixed_data() -> SampleData:
    return mixed_sample()


@pytest.fixture
def small_grid() -> BandwidthConfig:
    return BandwidthConfig(
        h_grid=[0.3, 0.8],
        lambda_grid=[(0.2, 0.2), (0.8, 0.8)],
        b_grid=[0.3, 0.8],
        theta_grid=[(0.2, 0.2), (0.8, 0.8)],
    )
