"""Clustered synthetic interaction data for smoke tests and demos."""
from __future__ import annotations

import numpy as np

from .data import Dataset, build_dataset


def make_clustered_dataset(
    num_users: int = 400,
    num_items: int = 400,
    num_clusters: int = 4,
    interactions_per_user: int = 20,
    attr_correlation: float = 0.9,
    in_cluster_prob: float = 0.95,
    num_noise_values: int = 3,
    seed: int = 0,
) -> Dataset:
    """Users and items share latent clusters that drive both clicks and attributes.

    Every entity gets two cluster-correlated categorical fields (each equal
    to the true cluster with probability ``attr_correlation``, otherwise a
    different cluster drawn uniformly) and one uninformative noise field.
    Each user clicks ``interactions_per_user`` distinct items, each drawn
    from the user's cluster with probability ``in_cluster_prob``.
    """
    rng = np.random.default_rng(seed)
    K = num_clusters
    ucl = rng.integers(K, size=num_users)
    icl = rng.integers(K, size=num_items)

    def noisy(c: int) -> int:
        if rng.random() < attr_correlation:
            return c
        return int((c + rng.integers(1, K)) % K)

    def attrs(prefix: str, c: int) -> set[str]:
        return {
            f"{prefix}:f1=c{noisy(c)}",
            f"{prefix}:f2=c{noisy(c)}",
            f"{prefix}:noise=n{rng.integers(num_noise_values)}",
        }

    width_u, width_i = len(str(num_users - 1)), len(str(num_items - 1))
    uid = [f"u{i:0{width_u}d}" for i in range(num_users)]
    iid = [f"i{j:0{width_i}d}" for j in range(num_items)]
    by_cluster = [np.flatnonzero(icl == c) for c in range(K)]
    others = [np.flatnonzero(icl != c) for c in range(K)]

    pairs = []
    for u in range(num_users):
        c = ucl[u]
        chosen: set[int] = set()
        n = min(interactions_per_user, num_items)
        while len(chosen) < n:
            pool = by_cluster[c] if rng.random() < in_cluster_prob else others[c]
            if len(pool) == 0:
                pool = np.arange(num_items)
            chosen.add(int(rng.choice(pool)))
        pairs.extend((uid[u], iid[j]) for j in sorted(chosen))

    user_attrs = {uid[u]: attrs("ua", ucl[u]) for u in range(num_users)}
    item_attrs = {iid[j]: attrs("ia", icl[j]) for j in range(num_items)}
    ds = build_dataset(pairs, user_attrs, item_attrs)
    ds.user_clusters = ucl  # for diagnostics only
    ds.item_clusters = icl
    return ds
