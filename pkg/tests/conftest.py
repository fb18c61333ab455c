import numpy as np
import pytest

from stratcox import StratifiedSurvivalDataset, StratumBlock, build_risk_index


def random_dataset(rng, K=3, n_k=25, p=4, beta=None, rate_scale=1.0, censor_factor=0.3):
    """Small seeded dataset with exponential event times for unit tests."""
    if beta is None:
        beta = np.zeros(p)
    blocks = []
    for k in range(K):
        X = rng.normal(size=(n_k, p))
        lam = rate_scale * np.exp(X @ beta)
        T = rng.exponential(1.0, size=n_k) / lam
        C = rng.exponential(1.0, size=n_k) / (censor_factor * lam)
        Y = np.minimum(T, C)
        d = (T <= C).astype(int)
        blocks.append(StratumBlock(f"s{k}", Y, d, X))
    return StratifiedSurvivalDataset(tuple(blocks))


@pytest.fixture
def two_subject():
    """One stratum, two subjects: Y=(1,2), events=(1,1), X=(1,0)."""
    data = StratifiedSurvivalDataset(
        (StratumBlock("a", [1.0, 2.0], [1, 1], [[1.0], [0.0]]),)
    )
    return data, build_risk_index(data)
