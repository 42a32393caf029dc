import numpy as np
import pytest

from pgdrec.data import Dataset


def make_f1() -> Dataset:
    """2 users, 2 items, interactions {(0,0),(1,0),(1,1)}.

    User attributes u0:{a0}, u1:{a0} with a1 in the vocabulary but unused;
    item attributes i0:{b0}, i1:{b0} (global index 2).
    """
    return Dataset(
        num_users=2,
        num_items=2,
        num_user_attrs=2,
        num_item_attrs=1,
        interactions=[(0, 0), (1, 0), (1, 1)],
        user_attrs=[[0], [0]],
        item_attrs=[[2], [2]],
    )


def random_dataset(rng: np.random.Generator, max_nodes: int = 64, density: float | None = None) -> Dataset:
    """Random valid dataset whose teacher graph has at most ``max_nodes`` nodes."""
    while True:
        M, N = rng.integers(1, 16, size=2)
        Du, Dv = rng.integers(1, 10, size=2)
        if M + N + Du + Dv <= max_nodes:
            break
    p = rng.uniform(0.05, 0.6) if density is None else density
    mask = rng.random((M, N)) < p
    ui = np.argwhere(mask)
    user_attrs = [rng.choice(Du, size=rng.integers(1, Du + 1), replace=False) for _ in range(M)]
    item_attrs = [Du + rng.choice(Dv, size=rng.integers(1, Dv + 1), replace=False) for _ in range(N)]
    return Dataset(int(M), int(N), int(Du), int(Dv), ui, user_attrs, item_attrs)


@pytest.fixture
def f1() -> Dataset:
    return make_f1()
